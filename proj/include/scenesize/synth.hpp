#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scenesize/boxes.hpp"
#include "scenesize/geometry.hpp"
#include "scenesize/rng.hpp"
#include "scenesize/size_inference.hpp"

namespace scenesize::synth {

// Synthetic scenes with known cameras and object sizes. These are the test
// oracle for the whole pipeline: annotations are rendered from the ground
// equations, so recovery can be checked against the generating parameters.

struct SceneObject {
  std::string category;
  double height_m = 0.0;
  double depth_m = 0.0;
  double x_center_px = 0.0;
};

struct SceneSpec {
  std::string image_id;
  double focal_px = 0.0;
  double camera_height_m = 0.0;
  double tilt_rad = 0.0;
  double image_w = 0.0;
  double image_h = 0.0;
  double aspect = 0.6;  // rendered box width / height
  std::vector<SceneObject> objects;
};

struct CategoryPrior {
  double mean_log = 0.0;  // log-meters
  double var_log = 0.0;
};

struct CameraPriors {
  double focal_min_px = 400.0;
  double focal_max_px = 1200.0;
  double h_c_median_m = 1.4;
  double h_c_sigma_log = 0.2;  // lognormal shape; 0 pins h_c to the median
  double tilt_max_rad = 0.0;   // tilt uniform in [-max, max]
};

struct LayoutPriors {
  double depth_min_m = 3.0;
  double depth_max_m = 30.0;  // depths log-uniform in [min, max]
  int min_objects = 2;
  int max_objects = 6;
  double aspect = 0.6;  // box width as a fraction of box height
};

/// Samples a dataset of scene specs. Deterministic: image k is generated
/// from a seed derived as (seed, k), so any evaluation order gives the same
/// dataset.
inline std::vector<SceneSpec> sample_dataset(std::uint64_t seed, int n_images,
                                             const std::map<std::string, CategoryPrior>& categories,
                                             const CameraPriors& camera, const LayoutPriors& layout,
                                             double image_w, double image_h) {
  if (n_images < 1) throw std::invalid_argument("sample_dataset: n_images must be >= 1");
  if (categories.empty()) throw std::invalid_argument("sample_dataset: no category priors");
  if (layout.min_objects < 1 || layout.max_objects < layout.min_objects)
    throw std::invalid_argument("sample_dataset: impossible object-count constraints");
  if (!(layout.depth_min_m > 0.0) || !(layout.depth_max_m >= layout.depth_min_m))
    throw std::invalid_argument("sample_dataset: invalid depth range");
  if (!(camera.focal_min_px > 0.0) || !(camera.focal_max_px >= camera.focal_min_px))
    throw std::invalid_argument("sample_dataset: invalid focal range");
  if (!(camera.h_c_median_m > 0.0) || camera.h_c_sigma_log < 0.0)
    throw std::invalid_argument("sample_dataset: invalid camera height prior");
  for (const auto& [name, prior] : categories)
    if (prior.var_log < 0.0)
      throw std::invalid_argument("sample_dataset: negative size variance for '" + name + "'");

  std::vector<std::string> names;
  names.reserve(categories.size());
  for (const auto& [name, _] : categories) names.push_back(name);

  std::vector<SceneSpec> scenes;
  scenes.reserve(static_cast<std::size_t>(n_images));
  int width = 1;
  for (int v = n_images - 1; v >= 10; v /= 10) ++width;

  for (int k = 0; k < n_images; ++k) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(k)));
    SceneSpec scene;
    std::string index = std::to_string(k);
    scene.image_id = "img_" + std::string(static_cast<std::size_t>(width) - index.size(), '0') + index;
    scene.focal_px = rng.uniform(camera.focal_min_px, camera.focal_max_px);
    scene.camera_height_m = camera.h_c_median_m * std::exp(camera.h_c_sigma_log * rng.normal());
    scene.tilt_rad = camera.tilt_max_rad > 0.0 ? rng.uniform(-camera.tilt_max_rad, camera.tilt_max_rad) : 0.0;
    scene.image_w = image_w;
    scene.image_h = image_h;
    scene.aspect = layout.aspect;

    const int count = static_cast<int>(rng.uniform_int(layout.min_objects, layout.max_objects));
    scene.objects.reserve(static_cast<std::size_t>(count));
    for (int j = 0; j < count; ++j) {
      SceneObject obj;
      obj.category = names[rng.uniform_index(names.size())];
      const auto& prior = categories.at(obj.category);
      obj.height_m = std::exp(prior.mean_log + std::sqrt(prior.var_log) * rng.normal());
      obj.depth_m = std::exp(rng.uniform(std::log(layout.depth_min_m), std::log(layout.depth_max_m)));
      obj.x_center_px = rng.uniform(0.1 * image_w, 0.9 * image_w);
      scene.objects.push_back(std::move(obj));
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

enum class Projection { approx, exact };

struct RenderResult {
  std::vector<boxes::InstanceRecord> records;
  int dropped = 0;  // objects projecting entirely outside the guard region
};

/// Renders amodal annotations for a scene. The bottom edge of each box sits
/// at the projected ground contact; the box height follows h = f*H/d under
/// the approx model, or the exact top/bottom projections under exact. Modal
/// boxes start equal to the amodal boxes with all flags false.
inline RenderResult render_annotations(const SceneSpec& scene, Projection projection) {
  if (!(scene.image_w > 0.0) || !(scene.image_h > 0.0))
    throw std::invalid_argument("render_annotations: invalid image size");
  const geometry::CameraModel cam(scene.focal_px, scene.tilt_rad, scene.camera_height_m);

  RenderResult out;
  out.records.reserve(scene.objects.size());
  // Guard region: 4x the image, centered on it.
  const double guard_x0 = -1.5 * scene.image_w, guard_x1 = 2.5 * scene.image_w;
  const double guard_y0 = -1.5 * scene.image_h, guard_y1 = 2.5 * scene.image_h;

  for (const auto& obj : scene.objects) {
    if (!(obj.height_m > 0.0) || !(obj.depth_m > 0.0))
      throw std::invalid_argument("render_annotations: invalid object");
    double y_b = 0.0, h = 0.0;
    if (projection == Projection::approx) {
      y_b = geometry::ground_point_approx(cam, obj.depth_m);
      h = geometry::image_height(scene.focal_px, obj.height_m, obj.depth_m);
    } else {
      bool visible = true;
      try {
        y_b = geometry::ground_point_exact(cam, obj.depth_m);
        const double y_t = geometry::project(cam, {0.0, obj.height_m - scene.camera_height_m, obj.depth_m}).y_px;
        h = y_t - y_b;
      } catch (const std::domain_error&) {
        visible = false;
      }
      if (!visible || !(h > 0.0)) {
        ++out.dropped;
        continue;
      }
    }
    const double w = std::max(1e-6, h * scene.aspect);
    const boxes::BoundingBox box =
        boxes::centered_to_raster(y_b, h, obj.x_center_px, w, scene.image_h);
    if (box.right() < guard_x0 || box.x > guard_x1 || box.bottom() < guard_y0 || box.y > guard_y1) {
      ++out.dropped;
      continue;
    }
    boxes::InstanceRecord rec;
    rec.image_id = scene.image_id;
    rec.category = obj.category;
    rec.modal = box;
    rec.amodal = box;
    out.records.push_back(std::move(rec));
  }
  return out;
}

enum class Side { bottom, left, right, top };

struct OcclusionSpec {
  double p_occlude = 0.0;
  double crop_min = 0.0;  // crop fraction range, [0, 1)
  double crop_max = 0.0;
  std::vector<Side> sides = {Side::bottom};
  bool truncate_at_border = false;
};

/// Crops modal boxes in place to simulate occlusion and border truncation.
/// Amodal boxes are never touched. With probability p_occlude a box loses a
/// sampled fraction from a sampled side (occluded flag); border truncation
/// clips partially-visible modal boxes to the image rectangle (truncated
/// flag). Deterministic given the seed.
inline void occlude(std::vector<boxes::InstanceRecord>& records, const OcclusionSpec& spec,
                    std::uint64_t seed, double image_w, double image_h) {
  if (spec.p_occlude < 0.0 || spec.p_occlude > 1.0)
    throw std::invalid_argument("occlude: p_occlude out of range");
  if (spec.crop_min < 0.0 || spec.crop_max >= 1.0 || spec.crop_max < spec.crop_min)
    throw std::invalid_argument("occlude: crop fraction range must lie in [0, 1)");
  if (spec.p_occlude > 0.0 && spec.sides.empty())
    throw std::invalid_argument("occlude: no crop sides given");

  Rng rng(seed);
  for (auto& rec : records) {
    if (spec.p_occlude > 0.0 && rng.uniform() < spec.p_occlude) {
      const Side side = spec.sides[rng.uniform_index(spec.sides.size())];
      const double fraction = rng.uniform(spec.crop_min, spec.crop_max);
      boxes::BoundingBox& b = rec.modal;
      switch (side) {
        case Side::bottom: b.h *= (1.0 - fraction); break;
        case Side::top: {
          const double cut = b.h * fraction;
          b.y += cut;
          b.h -= cut;
          break;
        }
        case Side::left: {
          const double cut = b.w * fraction;
          b.x += cut;
          b.w -= cut;
          break;
        }
        case Side::right: b.w *= (1.0 - fraction); break;
      }
      if (fraction > 0.0) rec.occluded = true;
    }
    if (spec.truncate_at_border) {
      boxes::BoundingBox& b = rec.modal;
      const double x0 = std::max(b.x, 0.0);
      const double y0 = std::max(b.y, 0.0);
      const double x1 = std::min(b.right(), image_w);
      const double y1 = std::min(b.bottom(), image_h);
      // Only clip boxes that keep a positive visible part.
      if (x1 - x0 > 0.0 && y1 - y0 > 0.0 &&
          (x0 != b.x || y0 != b.y || x1 != b.right() || y1 != b.bottom())) {
        b = {x0, y0, x1 - x0, y1 - y0};
        rec.truncated = true;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Oracle comparison

struct OracleReport {
  // Per-cluster log-height residuals after per-component gauge alignment.
  std::vector<double> log_height_residuals;
  // Per-image absolute errors, ordered by image id.
  std::vector<double> horizon_errors_px;
  std::vector<double> camera_height_errors_m;
  double max_abs_log_height = 0.0;
  double median_abs_log_height = 0.0;
  double max_horizon_px = 0.0;
  double median_horizon_px = 0.0;
  double max_camera_height_m = 0.0;
  double median_camera_height_m = 0.0;
};

namespace detail {
inline double median_abs(std::vector<double> values) {
  if (values.empty()) return 0.0;
  for (double& v : values) v = std::fabs(v);
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return (n % 2 == 1) ? values[n / 2] : values[n / 2 - 1];
}
}  // namespace detail

/// Compares recovered sizes and cameras against generating scenes. Log
/// heights are aligned per ratio-graph component by subtracting the mean
/// recovered-minus-truth difference (the scale gauge); horizon and camera
/// height errors are reported without alignment. Truth per category is the
/// mean log height over that category's instances.
inline OracleReport oracle_compare(std::span<const SceneSpec> truth,
                                   const size_inference::SizeModel& model,
                                   std::span<const size_inference::CameraSolution> cameras,
                                   std::span<const int> cluster_component) {
  if (cluster_component.size() != model.clusters.size())
    throw std::invalid_argument("oracle_compare: component vector size mismatch");

  std::map<std::string, std::pair<double, std::size_t>> truth_log;  // sum, count
  std::map<std::string, const SceneSpec*> by_id;
  for (const auto& scene : truth) {
    by_id[scene.image_id] = &scene;
    for (const auto& obj : scene.objects) {
      auto& acc = truth_log[obj.category];
      acc.first += std::log(obj.height_m);
      acc.second += 1;
    }
  }

  OracleReport report;

  // Gauge alignment per component.
  const std::size_t n_clusters = model.clusters.size();
  std::vector<double> diff(n_clusters, 0.0);
  const int n_components =
      cluster_component.empty() ? 0 : *std::max_element(cluster_component.begin(), cluster_component.end()) + 1;
  std::vector<double> shift(n_components, 0.0);
  std::vector<std::size_t> count(n_components, 0);
  for (std::size_t c = 0; c < n_clusters; ++c) {
    const auto it = truth_log.find(model.clusters[c].category);
    if (it == truth_log.end())
      throw std::invalid_argument("oracle_compare: category '" + model.clusters[c].category +
                                  "' absent from truth");
    diff[c] = model.clusters[c].log_height - it->second.first / static_cast<double>(it->second.second);
    shift[cluster_component[c]] += diff[c];
    ++count[cluster_component[c]];
  }
  for (std::size_t c = 0; c < n_clusters; ++c) {
    const int comp = cluster_component[c];
    report.log_height_residuals.push_back(diff[c] - shift[comp] / static_cast<double>(count[comp]));
  }

  for (const auto& cam : cameras) {
    const auto it = by_id.find(cam.image_id);
    if (it == by_id.end())
      throw std::invalid_argument("oracle_compare: image '" + cam.image_id + "' absent from truth");
    const SceneSpec& scene = *it->second;
    const double truth_horizon = scene.focal_px * scene.tilt_rad;
    report.horizon_errors_px.push_back(std::fabs(cam.horizon_px - truth_horizon));
    report.camera_height_errors_m.push_back(std::fabs(cam.height_m - scene.camera_height_m));
  }

  auto max_abs = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
  };
  report.max_abs_log_height = max_abs(report.log_height_residuals);
  report.median_abs_log_height = detail::median_abs(report.log_height_residuals);
  report.max_horizon_px = max_abs(report.horizon_errors_px);
  report.median_horizon_px = detail::median_abs(report.horizon_errors_px);
  report.max_camera_height_m = max_abs(report.camera_height_errors_m);
  report.median_camera_height_m = detail::median_abs(report.camera_height_errors_m);
  return report;
}

}  // namespace scenesize::synth
