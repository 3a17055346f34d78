#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include "scenesize/boxes.hpp"
#include "scenesize/io.hpp"
#include "support.hpp"

using namespace scenesize;

namespace {

std::string cli_path() {
  const char* p = std::getenv("SCENESIZE_BIN");
  REQUIRE_MESSAGE(p != nullptr, "SCENESIZE_BIN must point at the scenesize binary");
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = cli_path() + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

const char* kBaseConfig =
    "seed = 77\n"
    "n_images = 40\n"
    "min_objects = 3\n"
    "max_objects = 6\n"
    "image_w = 1000\n"
    "image_h = 800\n"
    "categories = person,car,chair\n"
    "camera.tilt_max_rad = 0\n"
    "tol = 1e-10\n"
    "max_iters = 120\n";

const char* kInitHeights = "person 1.7\ncar 1.5\nchair 0.9\n";

}  // namespace

TEST_CASE("simulate is deterministic and respects p_occlude=0") {
  testsupport::TempDir tmp;
  write_file(tmp.file("run.cfg"), kBaseConfig);
  const std::string args = "simulate --config " + tmp.file("run.cfg");
  CHECK(run_cli(args + " --out " + tmp.file("a.jsonl")) == 0);
  CHECK(run_cli(args + " --out " + tmp.file("b.jsonl")) == 0);
  CHECK(slurp(tmp.file("a.jsonl")) == slurp(tmp.file("b.jsonl")));
  CHECK(slurp(tmp.file("a.jsonl") + ".truth") == slurp(tmp.file("b.jsonl") + ".truth"));

  const auto records = io::read_annotations(tmp.file("a.jsonl"));
  CHECK(records.size() >= 40 * 3);
  for (const auto& rec : records) {
    REQUIRE(rec.amodal.has_value());
    CHECK(rec.modal.x == rec.amodal->x);
    CHECK(rec.modal.h == rec.amodal->h);
    CHECK_FALSE(rec.occluded);
    CHECK_FALSE(rec.truncated);
  }
}

TEST_CASE("--seed overrides the config seed and is recorded in the header") {
  testsupport::TempDir tmp;
  write_file(tmp.file("run.cfg"), kBaseConfig);
  const std::string base = "simulate --config " + tmp.file("run.cfg");
  REQUIRE(run_cli(base + " --out " + tmp.file("a.jsonl")) == 0);
  REQUIRE(run_cli(base + " --seed 123 --out " + tmp.file("b.jsonl")) == 0);
  REQUIRE(run_cli(base + " --seed 77 --out " + tmp.file("c.jsonl")) == 0);  // config seed is 77
  const std::string a = slurp(tmp.file("a.jsonl"));
  const std::string b = slurp(tmp.file("b.jsonl"));
  CHECK(a != b);  // different seed, different data
  CHECK(b.find("seed=123") != std::string::npos);
  CHECK(a == slurp(tmp.file("c.jsonl")));  // explicit seed equal to the config seed
}

TEST_CASE("simulate honors the instance-count lower bound") {
  testsupport::TempDir tmp;
  write_file(tmp.file("run.cfg"), std::string(kBaseConfig) + "n_images = 200\nmin_objects = 5\nmax_objects = 7\n");
  CHECK(run_cli("simulate --config " + tmp.file("run.cfg") + " --out " + tmp.file("big.jsonl")) == 0);
  const auto records = io::read_annotations(tmp.file("big.jsonl"));
  CHECK(records.size() >= 1000);
}

TEST_CASE("complete: identity overwrites, oracle restores") {
  testsupport::TempDir tmp;
  write_file(tmp.file("run.cfg"), std::string(kBaseConfig) +
                                      "occlusion.p = 0.5\n"
                                      "occlusion.crop_min = 0.4\n"
                                      "occlusion.crop_max = 0.4\n");
  const std::string ann = tmp.file("ann.jsonl");
  REQUIRE(run_cli("simulate --config " + tmp.file("run.cfg") + " --out " + ann) == 0);
  const auto original = io::read_annotations(ann);

  SUBCASE("identity") {
    const std::string out = tmp.file("ident.jsonl");
    REQUIRE(run_cli("complete --in " + ann + " --strategy identity --out " + out) == 0);
    const auto completed = io::read_annotations(out);
    REQUIRE(completed.size() == original.size());
    int occluded = 0;
    for (std::size_t i = 0; i < completed.size(); ++i) {
      REQUIRE(completed[i].amodal.has_value());
      CHECK(completed[i].amodal->h == completed[i].modal.h);
      CHECK(completed[i].amodal_source == "identity");
      if (completed[i].occluded) ++occluded;
    }
    CHECK(occluded > 0);

    // identity on bottom-cropped data: mean IoU over occluded equals 1 - fraction
    std::vector<boxes::AmodalIouRecord> pairs;
    for (std::size_t i = 0; i < completed.size(); ++i)
      pairs.push_back({*completed[i].amodal, *original[i].amodal, original[i].truncated,
                       original[i].occluded});
    const double occluded_iou = boxes::mean_amodal_iou(pairs, boxes::Subset::occluded);
    CHECK(occluded_iou == doctest::Approx(0.6).epsilon(1e-6));
    const double all_iou = boxes::mean_amodal_iou(pairs, boxes::Subset::all);
    const double expected_all =
        (static_cast<double>(completed.size() - occluded) + 0.6 * occluded) / completed.size();
    CHECK(all_iou == doctest::Approx(expected_all).epsilon(1e-9));
  }

  SUBCASE("oracle restores the generating amodal boxes") {
    const std::string ident = tmp.file("ident.jsonl");
    REQUIRE(run_cli("complete --in " + ann + " --strategy identity --out " + ident) == 0);
    const std::string out = tmp.file("oracle.jsonl");
    REQUIRE(run_cli("complete --config " + tmp.file("run.cfg") + " --in " + ident +
                    " --strategy oracle --truth " + ann + ".truth --out " + out) == 0);
    const auto completed = io::read_annotations(out);
    REQUIRE(completed.size() == original.size());
    for (std::size_t i = 0; i < completed.size(); ++i) {
      CHECK(completed[i].amodal->x == original[i].amodal->x);
      CHECK(completed[i].amodal->y == original[i].amodal->y);
      CHECK(completed[i].amodal->w == original[i].amodal->w);
      CHECK(completed[i].amodal->h == original[i].amodal->h);
      CHECK(completed[i].amodal_source == "oracle");
    }
  }

  SUBCASE("oracle without a sidecar is an input error") {
    CHECK(run_cli("complete --in " + ann + " --strategy oracle --out " + tmp.file("x.jsonl")) == 2);
  }
}

TEST_CASE("pipeline composability: simulate -> complete(oracle) -> infer") {
  testsupport::TempDir tmp;
  write_file(tmp.file("run.cfg"), kBaseConfig);
  write_file(tmp.file("init.txt"), kInitHeights);
  const std::string ann = tmp.file("ann.jsonl");
  REQUIRE(run_cli("simulate --config " + tmp.file("run.cfg") + " --out " + ann) == 0);
  const std::string completed = tmp.file("completed.jsonl");
  REQUIRE(run_cli("complete --config " + tmp.file("run.cfg") + " --in " + ann +
                  " --strategy oracle --truth " + ann + ".truth --out " + completed) == 0);
  const std::string outdir = tmp.file("report");
  REQUIRE(run_cli("infer --config " + tmp.file("run.cfg") + " --in " + completed + " --init " +
                  tmp.file("init.txt") + " --truth " + ann + ".truth --out " + outdir +
                  " --svg") == 0);

  // Size report should match the generating heights (init == truth, so the
  // gauge anchor sits at the truth).
  const auto lines = io::read_data_lines(outdir + "/size_report.tsv");
  REQUIRE(lines.size() >= 4);  // header + 3 categories
  std::map<std::string, double> expected = {{"person", 1.7}, {"car", 1.5}, {"chair", 0.9}};
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::istringstream ss(lines[i]);
    std::string category, cluster, log_h, height;
    std::getline(ss, category, '\t');
    std::getline(ss, cluster, '\t');
    std::getline(ss, log_h, '\t');
    std::getline(ss, height, '\t');
    CHECK(std::stod(height) == doctest::Approx(expected.at(category)).epsilon(1e-6));
  }

  // Depth report has absolute depths because the sidecar provided focals.
  const auto depth_lines = io::read_data_lines(outdir + "/depth_report.tsv");
  REQUIRE(depth_lines.size() > 1);
  bool has_absolute = false;
  for (std::size_t i = 1; i < depth_lines.size(); ++i)
    if (depth_lines[i].find("\t-") == std::string::npos) has_absolute = true;
  CHECK(has_absolute);

  // reruns are byte-identical (criterion: determinism)
  const std::string outdir2 = tmp.file("report2");
  REQUIRE(run_cli("infer --config " + tmp.file("run.cfg") + " --in " + completed + " --init " +
                  tmp.file("init.txt") + " --truth " + ann + ".truth --out " + outdir2 +
                  " --svg") == 0);
  for (const char* name : {"/size_report.tsv", "/size_hist.tsv", "/camera_report.tsv",
                           "/depth_report.tsv", "/loss_trace.tsv", "/summary.tsv"})
    CHECK(slurp(outdir + name) == slurp(outdir2 + name));
}

TEST_CASE("infer error paths") {
  testsupport::TempDir tmp;
  write_file(tmp.file("run.cfg"), kBaseConfig);
  write_file(tmp.file("init.txt"), kInitHeights);
  SUBCASE("empty annotation file exits with the input-error code") {
    write_file(tmp.file("empty.jsonl"), "");
    CHECK(run_cli("infer --config " + tmp.file("run.cfg") + " --in " + tmp.file("empty.jsonl") +
                  " --init " + tmp.file("init.txt") + " --out " + tmp.file("r")) == 2);
  }
  SUBCASE("missing amodal boxes are an input error") {
    write_file(tmp.file("noamodal.jsonl"),
               "{\"image_id\":\"a\",\"category\":\"car\",\"modal\":[0,0,10,10],\"amodal\":null,"
               "\"truncated\":false,\"occluded\":false}\n");
    CHECK(run_cli("infer --config " + tmp.file("run.cfg") + " --in " + tmp.file("noamodal.jsonl") +
                  " --init " + tmp.file("init.txt") + " --out " + tmp.file("r")) == 2);
  }
  SUBCASE("globally underdetermined data exits with the numerical code") {
    std::string one_per_image;
    for (int i = 0; i < 4; ++i) {
      one_per_image += "{\"image_id\":\"im" + std::to_string(i) +
                       "\",\"category\":\"car\",\"modal\":[0,100,50,80],\"amodal\":[0,100,50,80],"
                       "\"truncated\":false,\"occluded\":false}\n";
    }
    write_file(tmp.file("single.jsonl"), one_per_image);
    CHECK(run_cli("infer --config " + tmp.file("run.cfg") + " --in " + tmp.file("single.jsonl") +
                  " --init " + tmp.file("init.txt") + " --out " + tmp.file("r")) == 3);
  }
  SUBCASE("non-convergence exits 4 but writes reports") {
    write_file(tmp.file("hard.cfg"), std::string(kBaseConfig) + "tol = 0\nmax_iters = 1\n");
    const std::string ann = tmp.file("ann.jsonl");
    REQUIRE(run_cli("simulate --config " + tmp.file("hard.cfg") + " --out " + ann) == 0);
    // init far from truth so one iteration cannot settle below tol = 0
    write_file(tmp.file("bad_init.txt"), "person 5.0\ncar 0.2\nchair 2.5\n");
    CHECK(run_cli("infer --config " + tmp.file("hard.cfg") + " --in " + ann + " --init " +
                  tmp.file("bad_init.txt") + " --out " + tmp.file("r4")) == 4);
    CHECK(io::read_data_lines(tmp.file("r4") + "/size_report.tsv").size() > 1);
  }
}

TEST_CASE("eval-amodal") {
  testsupport::TempDir tmp;
  write_file(tmp.file("run.cfg"), kBaseConfig);
  const std::string ann = tmp.file("ann.jsonl");
  REQUIRE(run_cli("simulate --config " + tmp.file("run.cfg") + " --out " + ann) == 0);

  SUBCASE("perfect predictions give IoU 1 and AP 100") {
    const std::string report = tmp.file("eval.tsv");
    REQUIRE(run_cli("eval-amodal --in " + ann + " --truth " + ann + " --out " + report) == 0);
    const auto lines = io::read_data_lines(report);
    std::map<std::string, std::string> values;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      std::istringstream ss(lines[i]);
      std::string section, key, value;
      std::getline(ss, section, '\t');
      std::getline(ss, key, '\t');
      std::getline(ss, value, '\t');
      values[section + "/" + key] = value;
    }
    CHECK(std::stod(values.at("mean_iou/all")) == doctest::Approx(1.0));
    CHECK(values.at("mean_iou/occ") == "-");  // nothing occluded in this dataset
    CHECK(values.at("mean_iou/trunc") == "-");
    CHECK(std::stod(values.at("ap_am/mean")) == doctest::Approx(100.0));
  }

  SUBCASE("id mismatch is an input error") {
    write_file(tmp.file("short.jsonl"),
               "{\"image_id\":\"zzz\",\"category\":\"car\",\"modal\":[0,0,1,1],\"amodal\":[0,0,1,1]}\n");
    CHECK(run_cli("eval-amodal --in " + tmp.file("short.jsonl") + " --truth " + ann + " --out " +
                  tmp.file("x.tsv")) == 2);
  }

  SUBCASE("deterministic output") {
    REQUIRE(run_cli("eval-amodal --in " + ann + " --truth " + ann + " --out " + tmp.file("e1.tsv")) == 0);
    REQUIRE(run_cli("eval-amodal --in " + ann + " --truth " + ann + " --out " + tmp.file("e2.tsv")) == 0);
    CHECK(slurp(tmp.file("e1.tsv")) == slurp(tmp.file("e2.tsv")));
  }
}

TEST_CASE("focal subcommands") {
  testsupport::TempDir tmp;

  // golden fixtures on disk, in their own directory so reports don't get
  // picked up by directory scans
  std::filesystem::create_directories(tmp.file("imgs"));
  const std::string imgs = tmp.file("imgs");
  testsupport::ExifFixture le;
  le.focal_num = 50;
  le.focal_den = 1;
  le.focal_35mm = 75;
  testsupport::ExifFixture be = le;
  be.big_endian = true;
  {
    const auto a = le.build_jpeg();
    const auto b = be.build_jpeg();
    std::ofstream(imgs + "/a_le.jpg", std::ios::binary)
        .write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size()));
    std::ofstream(imgs + "/b_be.jpg", std::ios::binary)
        .write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  }

  SUBCASE("parse extracts the expected rationals from both endiannesses") {
    const std::string report = tmp.file("focal.tsv");
    REQUIRE(run_cli("focal parse --in " + imgs + " --out " + report) == 0);
    const auto lines = io::read_data_lines(report);
    REQUIRE(lines.size() == 3);  // column header + 2 files
    int seen = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      std::istringstream ss(lines[i]);
      std::vector<std::string> f;
      std::string tok;
      while (std::getline(ss, tok, '\t')) f.push_back(tok);
      REQUIRE(f.size() >= 9);
      CHECK(f[1] == "ok");
      CHECK(f[2] == "50");
      CHECK(f[3] == "1");
      CHECK(std::stod(f[6]) == doctest::Approx(75.0 / 36.0).epsilon(1e-9));
      ++seen;
    }
    CHECK(seen == 2);
  }

  SUBCASE("sensor table overrides the 35mm path") {
    write_file(tmp.file("sensors.txt"), "Acme Shooter X100 25.0\n");
    const std::string report = tmp.file("focal_s.tsv");
    REQUIRE(run_cli("focal parse --in " + imgs + "/a_le.jpg --sensor-table " +
                    tmp.file("sensors.txt") + " --out " + report) == 0);
    const auto lines = io::read_data_lines(report);
    REQUIRE(lines.size() == 2);
    std::istringstream ss(lines[1]);
    std::vector<std::string> f;
    std::string tok;
    while (std::getline(ss, tok, '\t')) f.push_back(tok);
    CHECK(std::stod(f[6]) == doctest::Approx(50.0 / 25.0).epsilon(1e-9));
  }

  SUBCASE("bins, quantize and eval round trip") {
    // 10 crisp clusters of log ratios
    std::string values;
    for (int c = 0; c < 10; ++c)
      for (int i = 0; i < 30; ++i) values += io::format_double(c * 1.0 + 0.001 * i) + "\n";
    write_file(tmp.file("values.txt"), values);
    const std::string model = tmp.file("model.tsv");
    REQUIRE(run_cli("focal bins --in " + tmp.file("values.txt") + " --k 10 --out " + model) == 0);
    const auto model_lines = io::read_data_lines(model);
    REQUIRE(model_lines.size() == 11);  // header + 10 centers

    const std::string quantized = tmp.file("quantized.tsv");
    REQUIRE(run_cli("focal quantize --in " + tmp.file("values.txt") + " --model " + model +
                    " --out " + quantized) == 0);
    const auto qlines = io::read_data_lines(quantized);
    REQUIRE(qlines.size() == 301);

    // scores ranking bin 0 first everywhere; truth alternates 0 and 1
    std::string scores, truth;
    for (int i = 0; i < 100; ++i) {
      scores += "img" + std::to_string(i);
      for (int b = 0; b < 10; ++b) scores += " " + std::to_string(10 - b);
      scores += "\n";
      truth += "img" + std::to_string(i) + " " + std::to_string(i % 2) + "\n";
    }
    write_file(tmp.file("scores.txt"), scores);
    write_file(tmp.file("truth.txt"), truth);
    const std::string eval = tmp.file("eval.tsv");
    REQUIRE(run_cli("focal eval --in " + tmp.file("scores.txt") + " --truth " + tmp.file("truth.txt") +
                    " --topk 1,3,5 --out " + eval) == 0);
    const auto elines = io::read_data_lines(eval);
    REQUIRE(elines.size() == 4);
    // top-1 misses the odd half (truth 1), top-3 and top-5 cover both bins
    CHECK(elines[1] == "1\t0.500000");
    CHECK(elines[2] == "3\t0.000000");
    CHECK(elines[3] == "5\t0.000000");
  }

  SUBCASE("every focal command is deterministic") {
    const std::string r1 = tmp.file("p1.tsv"), r2 = tmp.file("p2.tsv");
    REQUIRE(run_cli("focal parse --in " + imgs + " --out " + r1) == 0);
    REQUIRE(run_cli("focal parse --in " + imgs + " --out " + r2) == 0);
    CHECK(slurp(r1) == slurp(r2));
  }
}
