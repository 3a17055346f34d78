#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenesize/boxes.hpp"
#include "scenesize/synth.hpp"

namespace scenesize::io {

// File formats shared between the library and the CLI. Annotations and
// detections are line-delimited JSON (one flat object per line); the
// ground-truth sidecar carries the generating camera and object parameters
// of synthetic datasets. All writers are deterministic: identical inputs
// produce byte-identical files.

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string format_fixed(double v, int precision) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Annotation / detection line format

namespace detail {

inline nlohmann::json box_json(const boxes::BoundingBox& b) {
  return nlohmann::json::array({b.x, b.y, b.w, b.h});
}

inline boxes::BoundingBox box_from_json(const nlohmann::json& j, const char* key, std::size_t line_no) {
  if (!j.is_array() || j.size() != 4 || !j[0].is_number() || !j[1].is_number() ||
      !j[2].is_number() || !j[3].is_number())
    throw io_error("line " + std::to_string(line_no) + ": '" + key + "' must be [x,y,w,h]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline nlohmann::json parse_line(const std::string& line, std::size_t line_no) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw io_error("line " + std::to_string(line_no) + ": not a JSON object");
  return j;
}

}  // namespace detail

inline std::string annotation_to_line(const boxes::InstanceRecord& rec) {
  nlohmann::json j;
  j["image_id"] = rec.image_id;
  j["category"] = rec.category;
  j["modal"] = detail::box_json(rec.modal);
  if (rec.amodal)
    j["amodal"] = detail::box_json(*rec.amodal);
  else
    j["amodal"] = nullptr;
  j["truncated"] = rec.truncated;
  j["occluded"] = rec.occluded;
  if (!rec.amodal_source.empty()) j["amodal_source"] = rec.amodal_source;
  return j.dump();
}

inline boxes::InstanceRecord annotation_from_line(const std::string& line, std::size_t line_no) {
  const nlohmann::json j = detail::parse_line(line, line_no);
  boxes::InstanceRecord rec;
  try {
    rec.image_id = j.at("image_id").get<std::string>();
    rec.category = j.at("category").get<std::string>();
    rec.modal = detail::box_from_json(j.at("modal"), "modal", line_no);
    if (j.contains("amodal") && !j.at("amodal").is_null())
      rec.amodal = detail::box_from_json(j.at("amodal"), "amodal", line_no);
    rec.truncated = j.value("truncated", false);
    rec.occluded = j.value("occluded", false);
    rec.amodal_source = j.value("amodal_source", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw io_error("line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!boxes::is_valid(rec.modal))
    throw io_error("line " + std::to_string(line_no) + ": degenerate modal box");
  if (rec.amodal && !boxes::is_valid(*rec.amodal))
    throw io_error("line " + std::to_string(line_no) + ": degenerate amodal box");
  return rec;
}

inline std::string detection_to_line(const boxes::DetectionRecord& det) {
  nlohmann::json j;
  j["image_id"] = det.image_id;
  j["category"] = det.category;
  j["score"] = det.score;
  j["modal"] = detail::box_json(det.modal);
  j["amodal_pred"] = detail::box_json(det.amodal_pred);
  return j.dump();
}

/// Detection lines accept either the full detector format (score +
/// amodal_pred) or annotation-style lines whose filled "amodal" field is the
/// prediction (score defaults to 1).
inline boxes::DetectionRecord detection_from_line(const std::string& line, std::size_t line_no) {
  const nlohmann::json j = detail::parse_line(line, line_no);
  boxes::DetectionRecord det;
  try {
    det.image_id = j.at("image_id").get<std::string>();
    det.category = j.at("category").get<std::string>();
    det.score = j.value("score", 1.0);
    det.modal = detail::box_from_json(j.at("modal"), "modal", line_no);
    if (j.contains("amodal_pred"))
      det.amodal_pred = detail::box_from_json(j.at("amodal_pred"), "amodal_pred", line_no);
    else if (j.contains("amodal") && !j.at("amodal").is_null())
      det.amodal_pred = detail::box_from_json(j.at("amodal"), "amodal", line_no);
    else
      throw io_error("line " + std::to_string(line_no) + ": detection lacks an amodal prediction");
  } catch (const nlohmann::json::exception& e) {
    throw io_error("line " + std::to_string(line_no) + ": " + e.what());
  }
  return det;
}

/// Reads data lines, skipping '#' header/comment lines.
inline std::vector<std::string> read_data_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

inline std::vector<boxes::InstanceRecord> read_annotations(const std::string& path) {
  std::vector<boxes::InstanceRecord> records;
  std::size_t line_no = 0;
  std::ifstream in(path);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    records.push_back(annotation_from_line(line, line_no));
  }
  return records;
}

inline std::vector<boxes::DetectionRecord> read_detections(const std::string& path) {
  std::vector<boxes::DetectionRecord> records;
  std::size_t line_no = 0;
  std::ifstream in(path);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    records.push_back(detection_from_line(line, line_no));
  }
  return records;
}

inline void write_lines(const std::string& path, const std::string& header,
                        std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  if (!header.empty()) out << header << '\n';
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw io_error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Ground-truth sidecar

/// One sidecar line per image: the generating camera and the per-instance
/// (category, H, d) list in annotation order.
inline std::string sidecar_to_line(const synth::SceneSpec& scene) {
  nlohmann::json j;
  j["image_id"] = scene.image_id;
  j["camera"] = {{"f", scene.focal_px},
                 {"h_c", scene.camera_height_m},
                 {"theta_x", scene.tilt_rad},
                 {"y_h", scene.focal_px * scene.tilt_rad}};
  j["image_w"] = scene.image_w;
  j["image_h"] = scene.image_h;
  nlohmann::json instances = nlohmann::json::array();
  for (const auto& obj : scene.objects) {
    instances.push_back({{"category", obj.category},
                         {"H", obj.height_m},
                         {"d", obj.depth_m},
                         {"x_center", obj.x_center_px}});
  }
  j["instances"] = instances;
  return j.dump();
}

inline synth::SceneSpec sidecar_from_line(const std::string& line, std::size_t line_no) {
  const nlohmann::json j = detail::parse_line(line, line_no);
  synth::SceneSpec scene;
  try {
    scene.image_id = j.at("image_id").get<std::string>();
    const auto& cam = j.at("camera");
    scene.focal_px = cam.at("f").get<double>();
    scene.camera_height_m = cam.at("h_c").get<double>();
    scene.tilt_rad = cam.at("theta_x").get<double>();
    scene.image_w = j.value("image_w", 0.0);
    scene.image_h = j.value("image_h", 0.0);
    for (const auto& inst : j.at("instances")) {
      synth::SceneObject obj;
      obj.category = inst.at("category").get<std::string>();
      obj.height_m = inst.at("H").get<double>();
      obj.depth_m = inst.at("d").get<double>();
      obj.x_center_px = inst.value("x_center", 0.0);
      scene.objects.push_back(std::move(obj));
    }
  } catch (const nlohmann::json::exception& e) {
    throw io_error("sidecar line " + std::to_string(line_no) + ": " + e.what());
  }
  return scene;
}

inline void write_sidecar(const std::string& path, const std::string& header,
                          std::span<const synth::SceneSpec> scenes) {
  std::vector<std::string> lines;
  lines.reserve(scenes.size());
  for (const auto& s : scenes) lines.push_back(sidecar_to_line(s));
  write_lines(path, header, lines);
}

inline std::vector<synth::SceneSpec> read_sidecar(const std::string& path) {
  std::vector<synth::SceneSpec> scenes;
  std::size_t line_no = 0;
  for (const auto& line : read_data_lines(path)) {
    ++line_no;
    scenes.push_back(sidecar_from_line(line, line_no));
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// Init heights and sensor table

/// Lines of `category height_meters`.
inline std::map<std::string, double> read_init_heights(const std::string& path) {
  std::map<std::string, double> heights;
  for (const auto& line : read_data_lines(path)) {
    std::istringstream ss(line);
    std::string category;
    double height = 0.0;
    if (!(ss >> category >> height) || !(height > 0.0))
      throw io_error("init heights: bad line '" + line + "'");
    heights[category] = height;
  }
  if (heights.empty()) throw io_error("init heights: no entries in '" + path + "'");
  return heights;
}

/// Lines of `make model... sensor_width_mm`; the model may contain spaces.
/// Lookup key is "make model" lowercased with single spaces.
inline std::map<std::string, double> read_sensor_table(const std::string& path) {
  std::map<std::string, double> table;
  for (const auto& line : read_data_lines(path)) {
    std::istringstream ss(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    if (tokens.size() < 3) throw io_error("sensor table: bad line '" + line + "'");
    double width = 0.0;
    try {
      width = std::stod(tokens.back());
    } catch (...) {
      throw io_error("sensor table: bad width in '" + line + "'");
    }
    if (!(width > 0.0)) throw io_error("sensor table: width must be > 0 in '" + line + "'");
    std::string key;
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
      if (i) key += ' ';
      for (char c : tokens[i]) key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    table[key] = width;
  }
  return table;
}

inline std::string sensor_key(const std::string& make, const std::string& model) {
  std::string key;
  auto append = [&](const std::string& s) {
    bool pending_space = !key.empty();
    for (char c : s) {
      if (c == ' ' || c == '\t') {
        pending_space = !key.empty();
        continue;
      }
      if (pending_space) {
        key += ' ';
        pending_space = false;
      }
      key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  };
  append(make);
  append(model);
  return key;
}

// ---------------------------------------------------------------------------
// Flat config

struct Config {
  std::map<std::string, std::string> values;

  bool has(const std::string& key) const { return values.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback = {}) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
      return std::stod(it->second);
    } catch (...) {
      throw io_error("config: '" + key + "' is not a number: '" + it->second + "'");
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
      return std::stoll(it->second);
    } catch (...) {
      throw io_error("config: '" + key + "' is not an integer: '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw io_error("config: '" + key + "' is not a boolean: '" + v + "'");
  }
};

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

/// `key = value` lines; '#' starts a comment.
inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config '" + path + "'");
  Config cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw io_error("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw io_error("config line " + std::to_string(line_no) + ": empty key");
    cfg.values[key] = value;
  }
  return cfg;
}

/// FNV-1a over the canonical `key=value\n` serialization.
inline std::uint64_t config_digest(const Config& cfg) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      hash ^= c;
      hash *= 0x100000001b3ULL;
    }
  };
  for (const auto& [key, value] : cfg.values) {
    mix(key);
    mix("=");
    mix(value);
    mix("\n");
  }
  return hash;
}

/// Standard header line embedded in every output file.
inline std::string output_header(const std::string& command, const Config& cfg, std::uint64_t seed) {
  char digest[20];
  std::snprintf(digest, sizeof(digest), "%016llx", static_cast<unsigned long long>(config_digest(cfg)));
  return "# scenesize " + command + " config_digest=" + digest + " seed=" + std::to_string(seed);
}

// ---------------------------------------------------------------------------
// Delimited tables and SVG histograms

inline void write_table(const std::string& path, const std::string& header,
                        std::span<const std::string> column_names,
                        std::span<const std::vector<std::string>> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  if (!header.empty()) out << header << '\n';
  for (std::size_t i = 0; i < column_names.size(); ++i) {
    if (i) out << '\t';
    out << column_names[i];
  }
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << '\t';
      out << row[i];
    }
    out << '\n';
  }
  if (!out) throw io_error("write failed for '" + path + "'");
}

/// Standalone SVG bar chart; no display dependency. The header line (config
/// digest + seed) is embedded as an XML comment.
inline void write_svg_histogram(const std::string& path, const std::string& title,
                                std::span<const double> bin_edges, std::span<const std::size_t> counts,
                                const std::string& header = {}) {
  if (bin_edges.size() != counts.size() + 1)
    throw std::invalid_argument("write_svg_histogram: edges must be counts+1");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  if (!header.empty()) out << "<!-- " << header << " -->\n";

  const int width = 640, height = 400, margin = 48;
  std::size_t max_count = 1;
  for (auto c : counts) max_count = std::max(max_count, c);

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"15\">" << title << "</text>\n";

  const double plot_w = width - 2.0 * margin;
  const double plot_h = height - 2.0 * margin;
  const double n = static_cast<double>(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double bar_h = plot_h * static_cast<double>(counts[i]) / static_cast<double>(max_count);
    const double x = margin + plot_w * static_cast<double>(i) / n;
    const double y = height - margin - bar_h;
    out << "<rect x=\"" << format_fixed(x, 2) << "\" y=\"" << format_fixed(y, 2) << "\" width=\""
        << format_fixed(plot_w / n * 0.92, 2) << "\" height=\"" << format_fixed(bar_h, 2)
        << "\" fill=\"#4878a8\"/>\n";
  }
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << margin << "\" y=\"" << height - margin + 18
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << format_fixed(bin_edges.front(), 3)
      << "</text>\n";
  out << "<text x=\"" << width - margin << "\" y=\"" << height - margin + 18
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << format_fixed(bin_edges.back(), 3) << "</text>\n";
  out << "<text x=\"" << margin - 6 << "\" y=\"" << margin << "\" text-anchor=\"end\" "
      << "font-family=\"sans-serif\" font-size=\"11\">" << max_count << "</text>\n";
  out << "</svg>\n";
  if (!out) throw io_error("write failed for '" + path + "'");
}

}  // namespace scenesize::io
