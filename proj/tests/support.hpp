#pragma once

// Test-only helpers: independent oracles and hand-built byte fixtures. These
// deliberately avoid the library's own code paths where they exist to check
// them.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scenesize/boxes.hpp"

namespace testsupport {

// ---------------------------------------------------------------------------
// Brute-force average precision oracle.
//
// For every prefix of the score-sorted detection list the greedy matching is
// re-run from scratch, giving one precision/recall operating point per
// prefix; the average precision is then integrated by scanning, for each
// recall increase, every operating point at or above that recall for the
// best precision. O(n^3), fine for tiny problems.

struct BruteApOptions {
  double iou_thresh = 0.5;
  bool require_amodal = true;  // false computes plain modal AP
};

inline std::map<std::string, double> brute_force_ap(
    std::span<const scenesize::boxes::DetectionRecord> detections,
    std::span<const scenesize::boxes::InstanceRecord> truth, const BruteApOptions& opt = {}) {
  using scenesize::boxes::DetectionRecord;
  using scenesize::boxes::InstanceRecord;
  using scenesize::boxes::iou;

  std::map<std::string, std::vector<const InstanceRecord*>> gt_by_cat;
  for (const auto& t : truth) gt_by_cat[t.category].push_back(&t);

  std::map<std::string, double> result;
  for (const auto& [category, gts] : gt_by_cat) {
    std::vector<const DetectionRecord*> dets;
    for (const auto& d : detections)
      if (d.category == category) dets.push_back(&d);
    std::stable_sort(dets.begin(), dets.end(),
                     [](const DetectionRecord* a, const DetectionRecord* b) { return a->score > b->score; });

    const double n_gt = static_cast<double>(gts.size());
    std::vector<double> recall, precision;
    for (std::size_t prefix = 1; prefix <= dets.size(); ++prefix) {
      std::vector<bool> matched(gts.size(), false);
      double tp = 0.0;
      for (std::size_t di = 0; di < prefix; ++di) {
        const DetectionRecord* d = dets[di];
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
          if (matched[gi] || gts[gi]->image_id != d->image_id) continue;
          const double v = iou(d->modal, gts[gi]->modal);
          if (v > best_iou) {
            best_iou = v;
            best = static_cast<int>(gi);
          }
        }
        if (best >= 0 && best_iou > opt.iou_thresh) {
          matched[static_cast<std::size_t>(best)] = true;
          if (!opt.require_amodal || iou(d->amodal_pred, *gts[static_cast<std::size_t>(best)]->amodal) > opt.iou_thresh)
            tp += 1.0;
        }
      }
      recall.push_back(tp / n_gt);
      precision.push_back(tp / static_cast<double>(prefix));
    }

    double ap = 0.0;
    double prev = 0.0;
    for (std::size_t k = 0; k < recall.size(); ++k) {
      if (recall[k] <= prev) continue;
      double best_prec = 0.0;
      for (std::size_t j = 0; j < recall.size(); ++j)
        if (recall[j] >= recall[k]) best_prec = std::max(best_prec, precision[j]);
      ap += (recall[k] - prev) * best_prec;
      prev = recall[k];
    }
    result[category] = ap;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Minimal EXIF fixtures assembled byte by byte from the TIFF layout.

struct ExifFixture {
  bool big_endian = false;
  bool include_focal = true;
  std::uint32_t focal_num = 50;
  std::uint32_t focal_den = 1;
  std::optional<std::uint16_t> focal_35mm;
  std::optional<std::uint32_t> pixel_x;
  std::string make = "Acme";
  std::string model = "Shooter X100";

  std::vector<std::uint8_t> build_tiff() const {
    std::vector<std::uint8_t> out;
    auto put8 = [&](std::uint8_t v) { out.push_back(v); };
    auto put16 = [&](std::uint16_t v) {
      if (big_endian) {
        put8(static_cast<std::uint8_t>(v >> 8));
        put8(static_cast<std::uint8_t>(v));
      } else {
        put8(static_cast<std::uint8_t>(v));
        put8(static_cast<std::uint8_t>(v >> 8));
      }
    };
    auto put32 = [&](std::uint32_t v) {
      if (big_endian) {
        put8(static_cast<std::uint8_t>(v >> 24));
        put8(static_cast<std::uint8_t>(v >> 16));
        put8(static_cast<std::uint8_t>(v >> 8));
        put8(static_cast<std::uint8_t>(v));
      } else {
        put8(static_cast<std::uint8_t>(v));
        put8(static_cast<std::uint8_t>(v >> 8));
        put8(static_cast<std::uint8_t>(v >> 16));
        put8(static_cast<std::uint8_t>(v >> 24));
      }
    };

    const std::string make_z = make + '\0';
    const std::string model_z = model + '\0';

    // Layout: header(8) | IFD0(2 + 3*12 + 4) | ExifIFD(2 + n*12 + 4) |
    //         rational(8)? | make | model
    const std::uint32_t ifd0_at = 8;
    const std::uint32_t ifd0_size = 2 + 3 * 12 + 4;
    const std::uint32_t exif_at = ifd0_at + ifd0_size;
    std::uint16_t exif_entries = 0;
    if (include_focal) ++exif_entries;
    if (pixel_x) ++exif_entries;
    if (focal_35mm) ++exif_entries;
    const std::uint32_t exif_size = 2 + static_cast<std::uint32_t>(exif_entries) * 12 + 4;
    std::uint32_t data_at = exif_at + exif_size;
    const std::uint32_t rational_at = data_at;
    if (include_focal) data_at += 8;
    const std::uint32_t make_at = data_at;
    data_at += static_cast<std::uint32_t>(make_z.size());
    const std::uint32_t model_at = data_at;

    // TIFF header
    put8(big_endian ? 'M' : 'I');
    put8(big_endian ? 'M' : 'I');
    put16(42);
    put32(ifd0_at);

    auto put_entry_head = [&](std::uint16_t tag, std::uint16_t type, std::uint32_t count) {
      put16(tag);
      put16(type);
      put32(count);
    };

    // IFD0: Make, Model, ExifIFD pointer (tags ascending)
    put16(3);
    put_entry_head(0x010F, 2, static_cast<std::uint32_t>(make_z.size()));
    if (make_z.size() <= 4) {
      for (char c : make_z) put8(static_cast<std::uint8_t>(c));
      for (std::size_t i = make_z.size(); i < 4; ++i) put8(0);
    } else {
      put32(make_at);
    }
    put_entry_head(0x0110, 2, static_cast<std::uint32_t>(model_z.size()));
    if (model_z.size() <= 4) {
      for (char c : model_z) put8(static_cast<std::uint8_t>(c));
      for (std::size_t i = model_z.size(); i < 4; ++i) put8(0);
    } else {
      put32(model_at);
    }
    put_entry_head(0x8769, 4, 1);
    put32(exif_at);
    put32(0);  // no next IFD

    // Exif IFD, tags ascending: 0x920A, 0xA002, 0xA405
    put16(exif_entries);
    if (include_focal) {
      put_entry_head(0x920A, 5, 1);
      put32(rational_at);
    }
    if (pixel_x) {
      put_entry_head(0xA002, 4, 1);
      put32(*pixel_x);
    }
    if (focal_35mm) {
      put_entry_head(0xA405, 3, 1);
      put16(*focal_35mm);
      put16(0);
    }
    put32(0);

    if (include_focal) {
      put32(focal_num);
      put32(focal_den);
    }
    for (char c : make_z) put8(static_cast<std::uint8_t>(c));
    for (char c : model_z) put8(static_cast<std::uint8_t>(c));
    return out;
  }

  std::vector<std::uint8_t> build_jpeg() const {
    const std::vector<std::uint8_t> tiff = build_tiff();
    std::vector<std::uint8_t> out = {0xFF, 0xD8};
    // A bare APP0 segment before APP1, so the walker has to skip something.
    const std::vector<std::uint8_t> app0 = {'J', 'F', 'I', 'F', 0};
    out.push_back(0xFF);
    out.push_back(0xE0);
    const std::uint16_t app0_len = static_cast<std::uint16_t>(2 + app0.size());
    out.push_back(static_cast<std::uint8_t>(app0_len >> 8));
    out.push_back(static_cast<std::uint8_t>(app0_len));
    out.insert(out.end(), app0.begin(), app0.end());

    out.push_back(0xFF);
    out.push_back(0xE1);
    const std::uint16_t app1_len = static_cast<std::uint16_t>(2 + 6 + tiff.size());
    out.push_back(static_cast<std::uint8_t>(app1_len >> 8));
    out.push_back(static_cast<std::uint8_t>(app1_len));
    const char exif_header[6] = {'E', 'x', 'i', 'f', 0, 0};
    out.insert(out.end(), exif_header, exif_header + 6);
    out.insert(out.end(), tiff.begin(), tiff.end());

    out.push_back(0xFF);
    out.push_back(0xD9);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Scratch directories for file-format and CLI tests.

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "scenesize_test_XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (mkdtemp(buf.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (std::filesystem::path(path_) / name).string(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace testsupport
