// scenesize: batch pipeline for single-image metric size inference.
//
// Subcommands cover the full loop: simulate a synthetic dataset with known
// ground truth, complete modal boxes to amodal ones, run the alternating
// size/camera solver, evaluate amodal predictions, and handle focal-length
// metadata (EXIF parsing, log-ratio binning, top-k evaluation).
//
// Exit codes: 0 success, 2 input error, 3 numerical failure,
// 4 solver finished without converging (outputs are still written).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scenesize/boxes.hpp"
#include "scenesize/exif_focal.hpp"
#include "scenesize/geometry.hpp"
#include "scenesize/io.hpp"
#include "scenesize/rng.hpp"
#include "scenesize/size_inference.hpp"
#include "scenesize/synth.hpp"

namespace {

using namespace scenesize;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitNoConvergence = 4;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
};

io::Config load_config_or_empty(const std::string& path) {
  if (path.empty()) return {};
  return io::load_config(path);
}

std::uint64_t resolve_seed(const io::Config& cfg, const CommonArgs& common) {
  if (common.seed_override) return *common.seed_override;
  return static_cast<std::uint64_t>(cfg.get_int("seed", 0));
}

// ---------------------------------------------------------------------------
// simulate

struct SimulatePriors {
  std::map<std::string, synth::CategoryPrior> categories;
  synth::CameraPriors camera;
  synth::LayoutPriors layout;
  int n_images = 100;
  double image_w = 1000.0;
  double image_h = 800.0;
  synth::OcclusionSpec occlusion;
  double noise_px = 0.0;
  synth::Projection projection = synth::Projection::approx;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string token;
  for (char c : s) {
    if (c == ',') {
      if (!io::trim(token).empty()) out.push_back(io::trim(token));
      token.clear();
    } else {
      token += c;
    }
  }
  if (!io::trim(token).empty()) out.push_back(io::trim(token));
  return out;
}

synth::Projection projection_from_config(const io::Config& cfg) {
  const std::string mode = cfg.get_string("projection", "approx");
  if (mode == "approx") return synth::Projection::approx;
  if (mode == "exact") return synth::Projection::exact;
  throw io::io_error("config: projection must be 'approx' or 'exact', got '" + mode + "'");
}

SimulatePriors simulate_priors_from_config(const io::Config& cfg) {
  SimulatePriors p;
  p.n_images = static_cast<int>(cfg.get_int("n_images", 100));
  p.image_w = cfg.get_double("image_w", 1000.0);
  p.image_h = cfg.get_double("image_h", 800.0);

  std::vector<std::string> names = split_csv(cfg.get_string("categories", "person,car,chair"));
  const std::map<std::string, double> builtin = {{"person", 1.7}, {"car", 1.5}, {"chair", 0.9}};
  for (const auto& name : names) {
    synth::CategoryPrior prior;
    if (cfg.has("cat." + name + ".mean_log"))
      prior.mean_log = cfg.get_double("cat." + name + ".mean_log", 0.0);
    else if (cfg.has("cat." + name + ".height_m"))
      prior.mean_log = std::log(cfg.get_double("cat." + name + ".height_m", 1.0));
    else if (auto it = builtin.find(name); it != builtin.end())
      prior.mean_log = std::log(it->second);
    else
      throw io::io_error("config: no height prior for category '" + name + "'");
    prior.var_log = cfg.get_double("cat." + name + ".var_log", 0.0);
    p.categories[name] = prior;
  }

  p.camera.focal_min_px = cfg.get_double("camera.f_min", 400.0);
  p.camera.focal_max_px = cfg.get_double("camera.f_max", 1200.0);
  p.camera.h_c_median_m = cfg.get_double("camera.h_c_median", 1.4);
  p.camera.h_c_sigma_log = cfg.get_double("camera.h_c_sigma_log", 0.2);
  p.camera.tilt_max_rad = cfg.get_double("camera.tilt_max_rad", 0.0);

  p.layout.depth_min_m = cfg.get_double("layout.d_min", 3.0);
  p.layout.depth_max_m = cfg.get_double("layout.d_max", 30.0);
  p.layout.min_objects = static_cast<int>(cfg.get_int("min_objects", 2));
  p.layout.max_objects = static_cast<int>(cfg.get_int("max_objects", 6));
  p.layout.aspect = cfg.get_double("layout.aspect", 0.6);

  p.occlusion.p_occlude = cfg.get_double("occlusion.p", 0.0);
  p.occlusion.crop_min = cfg.get_double("occlusion.crop_min", 0.0);
  p.occlusion.crop_max = cfg.get_double("occlusion.crop_max", 0.0);
  p.occlusion.truncate_at_border = cfg.get_bool("occlusion.truncate_at_border", false);
  p.occlusion.sides.clear();
  for (const auto& side : split_csv(cfg.get_string("occlusion.sides", "bottom"))) {
    if (side == "bottom")
      p.occlusion.sides.push_back(synth::Side::bottom);
    else if (side == "top")
      p.occlusion.sides.push_back(synth::Side::top);
    else if (side == "left")
      p.occlusion.sides.push_back(synth::Side::left);
    else if (side == "right")
      p.occlusion.sides.push_back(synth::Side::right);
    else
      throw io::io_error("config: unknown occlusion side '" + side + "'");
  }

  p.noise_px = cfg.get_double("noise_px", 0.0);
  p.projection = projection_from_config(cfg);
  return p;
}

int cmd_simulate(const CommonArgs& common, const std::string& out_path) {
  const io::Config cfg = load_config_or_empty(common.config_path);
  const std::uint64_t seed = resolve_seed(cfg, common);
  const SimulatePriors p = simulate_priors_from_config(cfg);

  const auto scenes = synth::sample_dataset(seed, p.n_images, p.categories, p.camera, p.layout,
                                            p.image_w, p.image_h);
  std::vector<boxes::InstanceRecord> records;
  int dropped = 0;
  for (const auto& scene : scenes) {
    auto rendered = synth::render_annotations(scene, p.projection);
    dropped += rendered.dropped;
    records.insert(records.end(), rendered.records.begin(), rendered.records.end());
  }
  synth::occlude(records, p.occlusion, Rng::derive(seed, 0x0cc1), p.image_w, p.image_h);

  if (p.noise_px > 0.0) {
    Rng noise(Rng::derive(seed, 0x4015e));
    for (auto& rec : records) {
      const bool same = rec.amodal && rec.amodal->x == rec.modal.x && rec.amodal->y == rec.modal.y &&
                        rec.amodal->w == rec.modal.w && rec.amodal->h == rec.modal.h;
      auto jitter = [&](boxes::BoundingBox b) {
        b.x += noise.normal(0.0, p.noise_px);
        b.y += noise.normal(0.0, p.noise_px);
        b.w = std::max(1e-3, b.w + noise.normal(0.0, p.noise_px));
        b.h = std::max(1e-3, b.h + noise.normal(0.0, p.noise_px));
        return b;
      };
      if (rec.amodal) {
        *rec.amodal = jitter(*rec.amodal);
        rec.modal = same ? *rec.amodal : jitter(rec.modal);
      } else {
        rec.modal = jitter(rec.modal);
      }
    }
  }

  const std::string header = io::output_header("simulate", cfg, seed);
  std::vector<std::string> lines;
  lines.reserve(records.size());
  for (const auto& rec : records) lines.push_back(io::annotation_to_line(rec));
  io::write_lines(out_path, header, lines);
  io::write_sidecar(out_path + ".truth", header, scenes);
  std::cerr << "simulate: wrote " << records.size() << " instances over " << scenes.size()
            << " images (" << dropped << " dropped) to " << out_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// complete

int cmd_complete(const CommonArgs& common, const std::string& in_path, const std::string& strategy,
                 const std::string& truth_path, const std::string& out_path) {
  const io::Config cfg = load_config_or_empty(common.config_path);
  const std::uint64_t seed = resolve_seed(cfg, common);
  auto records = io::read_annotations(in_path);
  if (records.empty()) throw io::io_error("complete: no records in '" + in_path + "'");

  if (strategy == "identity") {
    for (auto& rec : records) {
      rec.amodal = rec.modal;
      rec.amodal_source = "identity";
    }
  } else if (strategy == "oracle") {
    if (truth_path.empty())
      throw io::io_error("complete: oracle strategy requires --truth <sidecar>");
    const auto scenes = io::read_sidecar(truth_path);
    const synth::Projection projection = projection_from_config(cfg);

    // Re-render each scene and pull the amodal boxes in order; records are
    // matched by (image_id, occurrence index).
    std::map<std::string, std::vector<boxes::BoundingBox>> truth_boxes;
    std::map<std::string, std::vector<std::string>> truth_cats;
    for (const auto& scene : scenes) {
      const auto rendered = synth::render_annotations(scene, projection);
      for (const auto& rec : rendered.records) {
        truth_boxes[scene.image_id].push_back(*rec.amodal);
        truth_cats[scene.image_id].push_back(rec.category);
      }
    }
    std::map<std::string, std::size_t> cursor;
    for (auto& rec : records) {
      auto it = truth_boxes.find(rec.image_id);
      if (it == truth_boxes.end())
        throw io::io_error("complete: image '" + rec.image_id + "' missing from sidecar");
      std::size_t& at = cursor[rec.image_id];
      if (at >= it->second.size())
        throw io::io_error("complete: more records than sidecar instances for image '" +
                           rec.image_id + "'");
      if (truth_cats[rec.image_id][at] != rec.category)
        throw io::io_error("complete: category mismatch for image '" + rec.image_id +
                           "' instance " + std::to_string(at));
      rec.amodal = it->second[at];
      rec.amodal_source = "oracle";
      ++at;
    }
  } else {
    throw io::io_error("complete: unknown strategy '" + strategy + "' (identity|oracle)");
  }

  const std::string header = io::output_header("complete", cfg, seed);
  std::vector<std::string> lines;
  lines.reserve(records.size());
  for (const auto& rec : records) lines.push_back(io::annotation_to_line(rec));
  io::write_lines(out_path, header, lines);
  std::cerr << "complete: wrote " << records.size() << " records (" << strategy << ") to "
            << out_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// infer

size_inference::InferenceConfig inference_config(const io::Config& cfg, std::uint64_t seed) {
  size_inference::InferenceConfig out;
  out.tol = cfg.get_double("tol", 1e-6);
  out.max_iters = static_cast<int>(cfg.get_int("max_iters", 50));
  out.eps_px = cfg.get_double("eps_px", 1.0);
  if (cfg.has("huber_delta")) out.huber_delta = cfg.get_double("huber_delta", 1.0);
  out.prior_enabled = cfg.get_bool("prior.enabled", false);
  out.prior_h_c0 = cfg.get_double("prior.h_c0", 1.4);
  out.prior_strength = cfg.get_double("prior.strength", 1.0);
  for (const auto& [key, value] : cfg.values) {
    if (key.rfind("clusters.", 0) == 0)
      out.clusters_per_category[key.substr(9)] = static_cast<int>(cfg.get_int(key, 1));
  }
  out.seed = seed;
  return out;
}

int cmd_infer(const CommonArgs& common, const std::string& in_path, const std::string& init_path,
              const std::string& truth_path, const std::string& out_dir, bool svg) {
  const io::Config cfg = load_config_or_empty(common.config_path);
  const std::uint64_t seed = resolve_seed(cfg, common);
  const auto records = io::read_annotations(in_path);
  if (records.empty()) throw io::io_error("infer: no records in '" + in_path + "'");
  const auto init_heights = io::read_init_heights(init_path);
  const double image_w = cfg.get_double("image_w", 1000.0);
  const double image_h = cfg.get_double("image_h", 800.0);

  std::map<std::string, double> focal_by_image;
  if (!truth_path.empty())
    for (const auto& scene : io::read_sidecar(truth_path)) focal_by_image[scene.image_id] = scene.focal_px;

  const auto measurements = size_inference::measurements_from_records(records, image_w, image_h);
  const auto icfg = inference_config(cfg, seed);
  const auto result = size_inference::estimate_sizes(
      measurements, init_heights, icfg, focal_by_image.empty() ? nullptr : &focal_by_image);

  fs::create_directories(out_dir);
  const std::string header = io::output_header("infer", cfg, seed);
  auto path = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };

  {  // per-cluster size report
    std::vector<std::vector<std::string>> rows;
    for (std::size_t c = 0; c < result.model.clusters.size(); ++c) {
      const auto& cl = result.model.clusters[c];
      const auto& gmm = result.model.gmm.at(cl.category);
      const auto& comp = gmm[std::min<std::size_t>(static_cast<std::size_t>(cl.cluster_id), gmm.size() - 1)];
      rows.push_back({cl.category, std::to_string(cl.cluster_id), io::format_double(cl.log_height),
                      io::format_double(std::exp(cl.log_height)), io::format_double(comp.mean),
                      io::format_double(comp.variance), io::format_double(comp.weight),
                      std::to_string(result.cluster_component[c])});
    }
    const std::vector<std::string> cols = {"category", "cluster_id", "log_height", "height_m",
                                           "gmm_mean", "gmm_variance", "gmm_weight", "component"};
    io::write_table(path("size_report.tsv"), header, cols, rows);
  }

  // per-category log-size histograms
  const int hist_bins = static_cast<int>(cfg.get_int("hist_bins", 24));
  std::map<std::string, std::vector<double>> logs_by_cat;
  for (std::size_t i = 0; i < records.size(); ++i)
    logs_by_cat[records[i].category].push_back(result.instance_log_heights[i]);
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [category, values] : logs_by_cat) {
      const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
      double lo = *mn_it, hi = *mx_it;
      if (hi - lo < 1e-9) hi = lo + 1e-9;
      const double width = (hi - lo) / hist_bins;
      std::vector<std::size_t> counts(static_cast<std::size_t>(hist_bins), 0);
      for (double v : values) {
        auto bin = static_cast<std::size_t>((v - lo) / width);
        if (bin >= counts.size()) bin = counts.size() - 1;
        ++counts[bin];
      }
      for (int b = 0; b < hist_bins; ++b)
        rows.push_back({category, io::format_double(lo + b * width),
                        io::format_double(lo + (b + 1) * width),
                        std::to_string(counts[static_cast<std::size_t>(b)])});
      if (svg) {
        std::vector<double> edges;
        for (int b = 0; b <= hist_bins; ++b) edges.push_back(lo + b * width);
        io::write_svg_histogram(path("size_hist_" + category + ".svg"),
                                "log size distribution: " + category, edges, counts, header);
      }
    }
    const std::vector<std::string> cols = {"category", "bin_lo", "bin_hi", "count"};
    io::write_table(path("size_hist.tsv"), header, cols, rows);
  }

  {  // camera report
    std::vector<std::vector<std::string>> rows;
    for (const auto& cam : result.cameras)
      rows.push_back({cam.image_id, io::format_double(cam.height_m), io::format_double(cam.horizon_px)});
    const std::vector<std::string> cols = {"image_id", "h_c_m", "y_h_px"};
    io::write_table(path("camera_report.tsv"), header, cols, rows);
  }

  {  // depth report
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < records.size(); ++i) {
      rows.push_back({records[i].image_id, std::to_string(i), records[i].category,
                      io::format_double(result.relative_depths[i]),
                      result.depths_m[i] ? io::format_double(*result.depths_m[i]) : std::string("-")});
    }
    const std::vector<std::string> cols = {"image_id", "instance", "category", "depth_over_f",
                                           "depth_m"};
    io::write_table(path("depth_report.tsv"), header, cols, rows);
  }

  {  // loss trace
    std::vector<std::vector<std::string>> rows;
    for (std::size_t it = 0; it < result.loss_trace.size(); ++it)
      rows.push_back({std::to_string(it + 1), io::format_double(result.loss_trace[it])});
    const std::vector<std::string> cols = {"iteration", "ground_contact_mse"};
    io::write_table(path("loss_trace.tsv"), header, cols, rows);
  }

  {  // summary, including the camera height statistic
    const auto summary = size_inference::camera_height_summary(result.cameras);
    std::vector<std::vector<std::string>> rows = {
        {"converged", result.converged ? "true" : "false"},
        {"iterations", std::to_string(result.iterations)},
        {"images_solved", std::to_string(result.cameras.size())},
        {"images_unsolved", std::to_string(result.unsolved_images)},
        {"camera_height_median_m", io::format_double(summary.median)},
        {"skipped_near_horizon", std::to_string(result.skipped_near_horizon)},
        {"skipped_opposite_sign", std::to_string(result.skipped_opposite_sign)},
        {"skipped_same_cluster", std::to_string(result.skipped_same_cluster)},
    };
    const std::vector<std::string> cols = {"key", "value"};
    io::write_table(path("summary.tsv"), header, cols, rows);
    if (svg) {
      std::vector<double> edges;
      edges.push_back(summary.histogram.lo);
      const double width = summary.histogram.bin_width > 0 ? summary.histogram.bin_width : 1.0;
      for (std::size_t b = 0; b < summary.histogram.counts.size(); ++b)
        edges.push_back(summary.histogram.lo + (static_cast<double>(b) + 1.0) * width);
      io::write_svg_histogram(path("camera_heights.svg"), "camera heights (m)", edges,
                              summary.histogram.counts, header);
    }
  }

  std::cerr << "infer: " << (result.converged ? "converged" : "did NOT converge") << " after "
            << result.iterations << " iterations; reports in " << out_dir << "\n";
  return result.converged ? kExitOk : kExitNoConvergence;
}

// ---------------------------------------------------------------------------
// eval-amodal

int cmd_eval_amodal(const CommonArgs& common, const std::string& pred_path,
                    const std::string& truth_path, const std::string& out_path, bool ap_only) {
  const io::Config cfg = load_config_or_empty(common.config_path);
  const std::uint64_t seed = resolve_seed(cfg, common);
  const auto truth = io::read_annotations(truth_path);
  if (truth.empty()) throw io::io_error("eval-amodal: empty truth file");
  for (const auto& t : truth)
    if (!t.amodal)
      throw io::io_error("eval-amodal: truth record without an amodal box (image '" + t.image_id + "')");

  std::vector<std::vector<std::string>> rows;

  if (!ap_only) {
    const auto preds = io::read_annotations(pred_path);
    // 1:1 pairing by (image_id, occurrence index)
    std::map<std::string, std::vector<const boxes::InstanceRecord*>> truth_by_image, pred_by_image;
    for (const auto& t : truth) truth_by_image[t.image_id].push_back(&t);
    for (const auto& p : preds) pred_by_image[p.image_id].push_back(&p);
    if (truth_by_image.size() != pred_by_image.size())
      throw io::io_error("eval-amodal: prediction/truth image sets differ");
    std::vector<boxes::AmodalIouRecord> pairs;
    for (const auto& [image_id, tlist] : truth_by_image) {
      auto it = pred_by_image.find(image_id);
      if (it == pred_by_image.end() || it->second.size() != tlist.size())
        throw io::io_error("eval-amodal: instance count mismatch for image '" + image_id + "'");
      for (std::size_t i = 0; i < tlist.size(); ++i) {
        const auto& t = *tlist[i];
        const auto& p = *it->second[i];
        if (t.category != p.category)
          throw io::io_error("eval-amodal: category mismatch for image '" + image_id + "'");
        if (!p.amodal)
          throw io::io_error("eval-amodal: prediction without an amodal box (image '" + image_id + "')");
        pairs.push_back({*p.amodal, *t.amodal, t.truncated, t.occluded});
      }
    }
    const std::pair<const char*, boxes::Subset> subsets[] = {
        {"all", boxes::Subset::all},
        {"trunc_or_occ", boxes::Subset::truncated_or_occluded},
        {"trunc", boxes::Subset::truncated},
        {"occ", boxes::Subset::occluded}};
    for (const auto& [name, subset] : subsets) {
      try {
        rows.push_back({"mean_iou", name, io::format_fixed(boxes::mean_amodal_iou(pairs, subset), 6)});
      } catch (const std::invalid_argument&) {
        rows.push_back({"mean_iou", name, "-"});  // empty subset: absent, not zero
      }
    }
  }

  const auto detections = io::read_detections(pred_path);
  const auto ap = boxes::ap_amodal(detections, truth);
  double mean_ap = 0.0;
  for (const auto& [category, value] : ap) {
    rows.push_back({"ap_am", category, io::format_fixed(value * 100.0, 4)});
    mean_ap += value;
  }
  if (!ap.empty())
    rows.push_back({"ap_am", "mean", io::format_fixed(mean_ap / static_cast<double>(ap.size()) * 100.0, 4)});

  const std::vector<std::string> cols = {"section", "key", "value"};
  io::write_table(out_path, io::output_header("eval-amodal", cfg, seed), cols, rows);
  std::cerr << "eval-amodal: wrote " << out_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// focal

std::vector<std::string> list_input_files(const std::string& in_path) {
  std::vector<std::string> files;
  if (fs::is_directory(in_path)) {
    for (const auto& entry : fs::directory_iterator(in_path))
      if (entry.is_regular_file()) files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(in_path);
  }
  return files;
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::io_error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

exif_focal::FocalBinModel read_bin_model(const std::string& path) {
  exif_focal::FocalBinModel model;
  const auto lines = io::read_data_lines(path);
  for (std::size_t i = 1; i < lines.size(); ++i) {  // first data line is the column header
    std::istringstream ss(lines[i]);
    int index = 0;
    double center = 0.0;
    if (!(ss >> index >> center)) throw io::io_error("bin model: bad line '" + lines[i] + "'");
    model.centers.push_back(center);
  }
  if (model.centers.size() < 2) throw io::io_error("bin model: need at least 2 centers");
  if (!std::is_sorted(model.centers.begin(), model.centers.end()))
    throw io::io_error("bin model: centers must be sorted");
  for (std::size_t i = 0; i + 1 < model.centers.size(); ++i)
    model.boundaries.push_back(0.5 * (model.centers[i] + model.centers[i + 1]));
  return model;
}

/// Values from either a `focal parse` report (log_ratio column) or a plain
/// list with one number per line. Returns (id, log_ratio) pairs.
std::vector<std::pair<std::string, double>> read_log_ratios(const std::string& path) {
  const auto lines = io::read_data_lines(path);
  if (lines.empty()) throw io::io_error("no data lines in '" + path + "'");

  std::vector<std::pair<std::string, double>> out;
  // TSV report: header row contains a log_ratio column
  std::vector<std::string> header;
  {
    std::istringstream ss(lines[0]);
    std::string col;
    while (std::getline(ss, col, '\t')) header.push_back(col);
  }
  const auto col_it = std::find(header.begin(), header.end(), "log_ratio");
  if (col_it != header.end()) {
    const std::size_t col = static_cast<std::size_t>(col_it - header.begin());
    std::size_t id_col = header.size();
    if (const auto idc = std::find(header.begin(), header.end(), "image_id"); idc != header.end())
      id_col = static_cast<std::size_t>(idc - header.begin());
    for (std::size_t i = 1; i < lines.size(); ++i) {
      std::vector<std::string> fields;
      std::istringstream ss(lines[i]);
      std::string f;
      while (std::getline(ss, f, '\t')) fields.push_back(f);
      if (col >= fields.size() || fields[col] == "-") continue;
      try {
        out.emplace_back(id_col < fields.size() ? fields[id_col] : std::to_string(i - 1),
                         std::stod(fields[col]));
      } catch (...) {
        throw io::io_error("bad log_ratio on line " + std::to_string(i + 1) + " of '" + path + "'");
      }
    }
    return out;
  }

  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.emplace_back(std::to_string(i), std::stod(lines[i]));
    } catch (...) {
      throw io::io_error("'" + path + "' line " + std::to_string(i + 1) +
                         ": expected a number or a focal parse report");
    }
  }
  return out;
}

int cmd_focal_parse(const CommonArgs& common, const std::string& in_path,
                    const std::string& sensor_table_path, const std::string& bins_path,
                    const std::string& out_path) {
  const io::Config cfg = load_config_or_empty(common.config_path);
  const std::uint64_t seed = resolve_seed(cfg, common);
  std::map<std::string, double> sensor_table;
  if (!sensor_table_path.empty()) sensor_table = io::read_sensor_table(sensor_table_path);
  std::optional<exif_focal::FocalBinModel> bins;
  if (!bins_path.empty()) bins = read_bin_model(bins_path);

  std::vector<std::vector<std::string>> rows;
  for (const auto& file : list_input_files(in_path)) {
    const std::string id = fs::path(file).filename().string();
    const auto bytes = read_bytes(file);
    const auto parsed = exif_focal::parse_exif_focal(bytes);
    if (!parsed.ok()) {
      rows.push_back({id, exif_focal::to_string(parsed.error), "-", "-", "-", "-", "-", "-", "-"});
      continue;
    }
    const auto& meta = parsed.meta;
    std::optional<double> sensor_width;
    if (!sensor_table.empty()) {
      if (auto it = sensor_table.find(io::sensor_key(meta.make, meta.model)); it != sensor_table.end())
        sensor_width = it->second;
    }
    std::string ratio_s = "-", log_ratio_s = "-", bin_s = "-";
    try {
      const double ratio = exif_focal::focal_ratio(meta, sensor_width);
      ratio_s = io::format_double(ratio);
      const double log_ratio = std::log(ratio);
      log_ratio_s = io::format_double(log_ratio);
      if (bins) bin_s = std::to_string(exif_focal::quantize(log_ratio, *bins));
    } catch (const std::invalid_argument&) {
      // no ratio source for this image; leave the columns absent
    }
    rows.push_back({id, "ok", std::to_string(meta.focal_length_mm.numerator),
                    std::to_string(meta.focal_length_mm.denominator),
                    io::format_double(meta.focal_length_mm.value()),
                    meta.focal_35mm_equiv ? std::to_string(*meta.focal_35mm_equiv) : "-", ratio_s,
                    log_ratio_s, bin_s});
  }
  const std::vector<std::string> cols = {"image_id", "status",    "focal_num", "focal_den", "focal_mm",
                                         "focal_35mm", "ratio", "log_ratio", "bin"};
  io::write_table(out_path, io::output_header("focal-parse", cfg, seed), cols, rows);
  std::cerr << "focal parse: wrote " << rows.size() << " rows to " << out_path << "\n";
  return kExitOk;
}

int cmd_focal_bins(const CommonArgs& common, const std::string& in_path, int k,
                   const std::string& out_path) {
  const io::Config cfg = load_config_or_empty(common.config_path);
  const std::uint64_t seed = resolve_seed(cfg, common);
  const auto values = read_log_ratios(in_path);
  std::vector<double> raw;
  raw.reserve(values.size());
  for (const auto& [id, v] : values) raw.push_back(v);
  exif_focal::KMeansConfig kcfg;
  kcfg.seed = seed;
  const auto model = exif_focal::kmeans_1d(raw, k, kcfg);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < model.centers.size(); ++i)
    rows.push_back({std::to_string(i), io::format_double(model.centers[i]),
                    i + 1 < model.centers.size() ? io::format_double(model.boundaries[i]) : "-"});
  const std::vector<std::string> cols = {"index", "center", "upper_boundary"};
  io::write_table(out_path, io::output_header("focal-bins", cfg, seed), cols, rows);
  std::cerr << "focal bins: fitted " << k << " centers from " << raw.size() << " values\n";
  return kExitOk;
}

int cmd_focal_quantize(const CommonArgs& common, const std::string& in_path,
                       const std::string& model_path, const std::string& out_path) {
  const io::Config cfg = load_config_or_empty(common.config_path);
  const std::uint64_t seed = resolve_seed(cfg, common);
  const auto model = read_bin_model(model_path);
  const auto values = read_log_ratios(in_path);
  std::vector<std::vector<std::string>> rows;
  for (const auto& [id, v] : values)
    rows.push_back({id, io::format_double(v), std::to_string(exif_focal::quantize(v, model))});
  const std::vector<std::string> cols = {"image_id", "log_ratio", "bin"};
  io::write_table(out_path, io::output_header("focal-quantize", cfg, seed), cols, rows);
  return kExitOk;
}

int cmd_focal_eval(const CommonArgs& common, const std::string& scores_path,
                   const std::string& truth_path, const std::string& topk,
                   const std::string& out_path) {
  const io::Config cfg = load_config_or_empty(common.config_path);
  const std::uint64_t seed = resolve_seed(cfg, common);

  std::map<std::string, int> truth;
  for (const auto& line : io::read_data_lines(truth_path)) {
    std::istringstream ss(line);
    std::string id;
    int bin = 0;
    if (!(ss >> id >> bin)) throw io::io_error("focal eval: bad truth line '" + line + "'");
    truth[id] = bin;
  }

  std::vector<std::vector<int>> rankings;
  std::vector<int> truth_bins;
  for (const auto& line : io::read_data_lines(scores_path)) {
    std::istringstream ss(line);
    std::string id;
    if (!(ss >> id)) throw io::io_error("focal eval: bad scores line '" + line + "'");
    std::vector<double> scores;
    double s = 0.0;
    while (ss >> s) scores.push_back(s);
    if (scores.empty()) throw io::io_error("focal eval: no scores for image '" + id + "'");
    const auto it = truth.find(id);
    if (it == truth.end()) throw io::io_error("focal eval: image '" + id + "' missing from truth");
    rankings.push_back(exif_focal::ranking_from_scores(scores));
    truth_bins.push_back(it->second);
  }

  std::vector<int> ks;
  for (const auto& tok : split_csv(topk)) ks.push_back(std::stoi(tok));
  if (ks.empty()) throw io::io_error("focal eval: empty --topk list");
  const auto errors = exif_focal::eval_topk(rankings, truth_bins, ks);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < ks.size(); ++i)
    rows.push_back({std::to_string(ks[i]), io::format_fixed(errors[i], 6)});
  const std::vector<std::string> cols = {"k", "error"};
  io::write_table(out_path, io::output_header("focal-eval", cfg, seed), cols, rows);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"single-image metric size inference pipeline"};
  app.require_subcommand(1);

  CommonArgs common;
  std::uint64_t seed_flag = 0;
  std::vector<CLI::App*> seeded_commands;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", common.config_path, "flat key=value config file");
    cmd->add_option("--seed", seed_flag, "seed override (recorded in outputs)");
    seeded_commands.push_back(cmd);
  };

  std::string in_path, out_path, truth_path, init_path, strategy = "identity";
  std::string sensor_table_path, bins_path, model_path, topk = "1,3,5";
  bool svg = false, ap_only = false;
  int k = 10;

  auto* simulate = app.add_subcommand("simulate", "render a synthetic annotated dataset");
  add_common(simulate);
  simulate->add_option("--out", out_path, "annotation output path (sidecar at <out>.truth)")
      ->required();

  auto* complete = app.add_subcommand("complete", "fill amodal boxes (identity or oracle)");
  add_common(complete);
  complete->add_option("--in", in_path, "annotation input")->required();
  complete->add_option("--out", out_path, "completed annotation output")->required();
  complete->add_option("--strategy", strategy, "identity|oracle");
  complete->add_option("--truth", truth_path, "ground-truth sidecar (oracle strategy)");

  auto* infer = app.add_subcommand("infer", "estimate sizes, cameras and depths");
  add_common(infer);
  infer->add_option("--in", in_path, "completed annotation input")->required();
  infer->add_option("--init", init_path, "init heights file (category height_m lines)")->required();
  infer->add_option("--out", out_path, "report output directory")->required();
  infer->add_option("--truth", truth_path, "sidecar providing per-image focal lengths");
  infer->add_flag("--svg", svg, "also write SVG histograms");

  auto* eval_amodal = app.add_subcommand("eval-amodal", "mean amodal IoU and amodal AP");
  add_common(eval_amodal);
  eval_amodal->add_option("--in", in_path, "predictions (annotation or detection lines)")->required();
  eval_amodal->add_option("--truth", truth_path, "ground-truth annotations")->required();
  eval_amodal->add_option("--out", out_path, "report path")->required();
  eval_amodal->add_flag("--ap-only", ap_only, "skip the 1:1 mean-IoU section");

  auto* focal = app.add_subcommand("focal", "focal-length tools");
  focal->require_subcommand(1);
  auto* fparse = focal->add_subcommand("parse", "extract focal metadata from JPEG/TIFF files");
  add_common(fparse);
  fparse->add_option("--in", in_path, "image file or directory")->required();
  fparse->add_option("--out", out_path, "report path")->required();
  fparse->add_option("--sensor-table", sensor_table_path, "make/model -> sensor width file");
  fparse->add_option("--bins", bins_path, "bin model for the bin column");
  auto* fbins = focal->add_subcommand("bins", "k-means bins over log focal ratios");
  add_common(fbins);
  fbins->add_option("--in", in_path, "parse report or plain value list")->required();
  fbins->add_option("--out", out_path, "model output path")->required();
  fbins->add_option("--k", k, "number of bins");
  auto* fquant = focal->add_subcommand("quantize", "assign log ratios to bins");
  add_common(fquant);
  fquant->add_option("--in", in_path, "parse report or plain value list")->required();
  fquant->add_option("--model", model_path, "bin model path")->required();
  fquant->add_option("--out", out_path, "report path")->required();
  auto* feval = focal->add_subcommand("eval", "top-k misclassification of external scores");
  add_common(feval);
  feval->add_option("--in", in_path, "scores file: image_id then per-bin scores")->required();
  feval->add_option("--truth", truth_path, "truth file: image_id then bin")->required();
  feval->add_option("--out", out_path, "report path")->required();
  feval->add_option("--topk", topk, "comma-separated k list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  for (CLI::App* cmd : seeded_commands)
    if (cmd->parsed() && cmd->count("--seed") > 0) common.seed_override = seed_flag;

  try {
    if (simulate->parsed()) return cmd_simulate(common, out_path);
    if (complete->parsed()) return cmd_complete(common, in_path, strategy, truth_path, out_path);
    if (infer->parsed()) return cmd_infer(common, in_path, init_path, truth_path, out_path, svg);
    if (eval_amodal->parsed()) return cmd_eval_amodal(common, in_path, truth_path, out_path, ap_only);
    if (focal->parsed()) {
      if (fparse->parsed()) return cmd_focal_parse(common, in_path, sensor_table_path, bins_path, out_path);
      if (fbins->parsed()) return cmd_focal_bins(common, in_path, k, out_path);
      if (fquant->parsed()) return cmd_focal_quantize(common, in_path, model_path, out_path);
      if (feval->parsed()) return cmd_focal_eval(common, in_path, truth_path, topk, out_path);
    }
  } catch (const io::io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const size_inference::underdetermined_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const size_inference::rank_deficient_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitInput;
}
