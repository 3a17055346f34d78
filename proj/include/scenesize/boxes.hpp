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

#include "scenesize/geometry.hpp"

namespace scenesize::boxes {

/// Axis-aligned box in raster coordinates: (x, y) is the top-left corner,
/// y grows downward, all values real-valued pixels.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double area() const { return w * h; }
};

inline bool is_valid(const BoundingBox& b) {
  return b.w > 0.0 && b.h > 0.0 && std::isfinite(b.x) && std::isfinite(b.y) &&
         std::isfinite(b.w) && std::isfinite(b.h);
}

/// Regression targets tying a modal box b to its amodal box b*:
/// ((x-x*)/w, (y-y*)/h, ((x+w)-(x*+w*))/w, (h-h*)/h).
struct AmodalTargets {
  double t1 = 0.0;
  double t2 = 0.0;
  double t3 = 0.0;
  double t4 = 0.0;
};

/// One annotated object. `amodal` is absent until a completion step fills it.
struct InstanceRecord {
  std::string image_id;
  std::string category;
  BoundingBox modal;
  std::optional<BoundingBox> amodal;
  bool truncated = false;
  bool occluded = false;
  std::string amodal_source;  // provenance, set by completion
};

/// Output of an external detector plus an amodal prediction for it.
struct DetectionRecord {
  std::string image_id;
  std::string category;
  double score = 0.0;
  BoundingBox modal;
  BoundingBox amodal_pred;
};

inline AmodalTargets encode_targets(const BoundingBox& modal, const BoundingBox& amodal) {
  if (!(modal.w > 0.0) || !(modal.h > 0.0))
    throw std::invalid_argument("encode_targets: degenerate modal box");
  return {(modal.x - amodal.x) / modal.w, (modal.y - amodal.y) / modal.h,
          (modal.right() - amodal.right()) / modal.w, (modal.h - amodal.h) / modal.h};
}

inline BoundingBox decode_targets(const BoundingBox& modal, const AmodalTargets& t) {
  if (!(modal.w > 0.0) || !(modal.h > 0.0))
    throw std::invalid_argument("decode_targets: degenerate modal box");
  BoundingBox out;
  out.x = modal.x - t.t1 * modal.w;
  out.y = modal.y - t.t2 * modal.h;
  out.w = (modal.right() - t.t3 * modal.w) - out.x;
  out.h = modal.h - t.t4 * modal.h;
  if (!(out.w > 0.0) || !(out.h > 0.0))
    throw std::invalid_argument("decode_targets: decoded box has non-positive extent");
  return out;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  if (!is_valid(a) || !is_valid(b)) throw std::invalid_argument("iou: invalid box");
  const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

enum class Subset { all, truncated, occluded, truncated_or_occluded };

struct AmodalIouRecord {
  BoundingBox predicted;
  BoundingBox truth;
  bool truncated = false;
  bool occluded = false;
};

inline bool in_subset(bool truncated, bool occluded, Subset subset) {
  switch (subset) {
    case Subset::all: return true;
    case Subset::truncated: return truncated;
    case Subset::occluded: return occluded;
    case Subset::truncated_or_occluded: return truncated || occluded;
  }
  return false;
}

/// Mean IoU of predicted amodal boxes against ground truth over a flag
/// subset. Throws when the filtered subset is empty.
inline double mean_amodal_iou(std::span<const AmodalIouRecord> records, Subset subset) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (!in_subset(r.truncated, r.occluded, subset)) continue;
    sum += iou(r.predicted, r.truth);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mean_amodal_iou: empty subset");
  return sum / static_cast<double>(n);
}

/// Binary occupancy grid, row-major.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> cells;  // rows*cols

  std::uint8_t at(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }
  std::uint8_t& at(std::size_t r, std::size_t c) { return cells[r * cols + c]; }
};

inline Mask make_mask(std::size_t rows, std::size_t cols) {
  return Mask{rows, cols, std::vector<std::uint8_t>(rows * cols, 0)};
}

/// Tightest axis-aligned box around the set cells of a mask.
inline BoundingBox mask_to_box(const Mask& mask) {
  std::size_t min_r = mask.rows, max_r = 0, min_c = mask.cols, max_c = 0;
  bool any = false;
  for (std::size_t r = 0; r < mask.rows; ++r) {
    for (std::size_t c = 0; c < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      any = true;
      min_r = std::min(min_r, r);
      max_r = std::max(max_r, r);
      min_c = std::min(min_c, c);
      max_c = std::max(max_c, c);
    }
  }
  if (!any) throw std::invalid_argument("mask_to_box: empty mask");
  return {static_cast<double>(min_c), static_cast<double>(min_r),
          static_cast<double>(max_c - min_c + 1), static_cast<double>(max_r - min_r + 1)};
}

/// Ground-contact reading of a raster box in centered, up-positive
/// coordinates: the bottom edge ordinate and the pixel height.
struct GroundReading {
  geometry::ImageOrdinate y_b;  // bottom edge, measured from the optical center
  double h;                     // box height in pixels
};

inline GroundReading raster_to_centered(const BoundingBox& box, double image_w, double image_h) {
  if (!is_valid(box) || !(image_w > 0.0) || !(image_h > 0.0))
    throw std::invalid_argument("raster_to_centered: invalid box or image size");
  (void)image_w;
  return {{image_h / 2.0 - box.bottom()}, box.h};
}

/// Inverse of raster_to_centered for rendering: places a box of height h
/// (pixels) and width w with its bottom edge at centered ordinate y_b.
inline BoundingBox centered_to_raster(double y_b, double h, double x_center, double w,
                                      double image_h) {
  const double top_row = image_h / 2.0 - (y_b + h);
  return {x_center - w / 2.0, top_row, w, h};
}

namespace detail {

struct PrPoint {
  double recall;
  double precision;
};

/// All-point interpolated AP: area under the exact precision envelope over
/// the recall-change points of a PR curve listed in detection order.
inline double average_precision(const std::vector<PrPoint>& curve) {
  if (curve.empty()) return 0.0;
  std::vector<double> envelope(curve.size());
  double running = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    running = std::max(running, curve[i].precision);
    envelope[i] = running;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i].recall > prev_recall) {
      ap += (curve[i].recall - prev_recall) * envelope[i];
      prev_recall = curve[i].recall;
    }
  }
  return ap;
}

}  // namespace detail

/// Average precision per category where a detection counts as correct only
/// when its modal box matches an unmatched ground-truth instance with
/// IoU > iou_thresh AND its amodal prediction overlaps that same instance's
/// amodal box with IoU > iou_thresh. Matching is greedy in descending score
/// against the best-modal-IoU unmatched instance; a detection whose match
/// fails the amodal condition still consumes the instance and counts as a
/// false positive, as does any duplicate match.
///
/// Categories without ground truth are absent from the result (AP undefined).
inline std::map<std::string, double> ap_amodal(std::span<const DetectionRecord> detections,
                                               std::span<const InstanceRecord> truth,
                                               double iou_thresh = 0.5) {
  struct GtRef {
    const InstanceRecord* rec;
    bool matched = false;
  };
  // category -> image -> instances
  std::map<std::string, std::map<std::string, std::vector<GtRef>>> gt;
  std::map<std::string, std::size_t> gt_count;
  for (const auto& t : truth) {
    if (!t.amodal.has_value())
      throw std::invalid_argument("ap_amodal: ground-truth instance lacks an amodal box");
    gt[t.category][t.image_id].push_back(GtRef{&t});
    ++gt_count[t.category];
  }

  std::map<std::string, std::vector<const DetectionRecord*>> dets_by_cat;
  for (const auto& d : detections) dets_by_cat[d.category].push_back(&d);

  std::map<std::string, double> ap;
  for (auto& [category, images] : gt) {
    std::vector<const DetectionRecord*> dets;
    if (auto it = dets_by_cat.find(category); it != dets_by_cat.end()) dets = it->second;
    std::stable_sort(dets.begin(), dets.end(),
                     [](const DetectionRecord* a, const DetectionRecord* b) { return a->score > b->score; });

    const double n_gt = static_cast<double>(gt_count[category]);
    std::vector<detail::PrPoint> curve;
    curve.reserve(dets.size());
    double tp = 0.0, fp = 0.0;
    for (const DetectionRecord* d : dets) {
      GtRef* best = nullptr;
      double best_iou = 0.0;
      if (auto img_it = images.find(d->image_id); img_it != images.end()) {
        for (auto& cand : img_it->second) {
          if (cand.matched) continue;
          const double v = iou(d->modal, cand.rec->modal);
          if (v > best_iou) {
            best_iou = v;
            best = &cand;
          }
        }
      }
      if (best != nullptr && best_iou > iou_thresh) {
        best->matched = true;
        if (iou(d->amodal_pred, *best->rec->amodal) > iou_thresh)
          tp += 1.0;
        else
          fp += 1.0;
      } else {
        fp += 1.0;
      }
      curve.push_back({tp / n_gt, tp / (tp + fp)});
    }
    ap[category] = detail::average_precision(curve);
  }
  return ap;
}

}  // namespace scenesize::boxes
