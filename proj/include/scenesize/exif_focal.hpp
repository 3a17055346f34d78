#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scenesize::exif_focal {

// Byte-level extraction of focal-length metadata from JPEG/TIFF EXIF blocks,
// plus the log focal-ratio binning used to pose focal-length prediction as
// classification. The parser never reads outside the supplied byte range:
// every access goes through a bounds-checked reader and malformed input maps
// to an error code, not a crash.

struct Rational {
  std::uint32_t numerator = 0;
  std::uint32_t denominator = 1;

  double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
};

struct FocalMetadata {
  Rational focal_length_mm;                 // tag 0x920A
  std::optional<int> focal_35mm_equiv;      // tag 0xA405, millimeters
  std::optional<int> image_width_px;        // tag 0xA002
  std::string make;                         // tag 0x010F, for sensor-table lookup
  std::string model;                        // tag 0x0110
};

enum class ExifError {
  ok = 0,
  not_jpeg_or_tiff,   // stream starts with neither 0xFFD8 nor a TIFF header
  no_exif_segment,    // JPEG without an APP1 "Exif\0\0" segment
  bad_tiff_header,    // wrong byte-order marker or magic
  bad_ifd_offset,     // IFD or value offset out of bounds / truncated
  missing_focal_tag,  // no usable FocalLength entry
  zero_denominator,
};

inline const char* to_string(ExifError e) {
  switch (e) {
    case ExifError::ok: return "ok";
    case ExifError::not_jpeg_or_tiff: return "not a JPEG or TIFF stream";
    case ExifError::no_exif_segment: return "no APP1 Exif segment";
    case ExifError::bad_tiff_header: return "bad TIFF header";
    case ExifError::bad_ifd_offset: return "IFD offset out of bounds";
    case ExifError::missing_focal_tag: return "missing FocalLength tag";
    case ExifError::zero_denominator: return "zero denominator in FocalLength";
  }
  return "unknown";
}

struct ExifParseResult {
  ExifError error = ExifError::ok;
  FocalMetadata meta;

  bool ok() const { return error == ExifError::ok; }
};

namespace detail {

class BoundedReader {
 public:
  BoundedReader(std::span<const std::uint8_t> bytes, bool big_endian)
      : bytes_(bytes), big_endian_(big_endian) {}

  bool in_range(std::size_t offset, std::size_t size) const {
    return offset <= bytes_.size() && size <= bytes_.size() - offset;
  }

  bool read_u8(std::size_t offset, std::uint8_t& out) const {
    if (!in_range(offset, 1)) return false;
    out = bytes_[offset];
    return true;
  }

  bool read_u16(std::size_t offset, std::uint16_t& out) const {
    if (!in_range(offset, 2)) return false;
    const std::uint16_t a = bytes_[offset], b = bytes_[offset + 1];
    out = big_endian_ ? static_cast<std::uint16_t>((a << 8) | b)
                      : static_cast<std::uint16_t>((b << 8) | a);
    return true;
  }

  bool read_u32(std::size_t offset, std::uint32_t& out) const {
    if (!in_range(offset, 4)) return false;
    const std::uint32_t a = bytes_[offset], b = bytes_[offset + 1], c = bytes_[offset + 2],
                        d = bytes_[offset + 3];
    out = big_endian_ ? (a << 24) | (b << 16) | (c << 8) | d : (d << 24) | (c << 16) | (b << 8) | a;
    return true;
  }

  std::size_t size() const { return bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  bool big_endian_;
};

struct IfdEntry {
  std::uint16_t tag = 0;
  std::uint16_t type = 0;
  std::uint32_t count = 0;
  std::size_t entry_offset = 0;  // offset of the 12-byte entry itself
};

constexpr std::uint16_t kTagMake = 0x010F;
constexpr std::uint16_t kTagModel = 0x0110;
constexpr std::uint16_t kTagExifIfd = 0x8769;
constexpr std::uint16_t kTagFocalLength = 0x920A;
constexpr std::uint16_t kTagFocal35mm = 0xA405;
constexpr std::uint16_t kTagPixelXDimension = 0xA002;

constexpr std::uint16_t kTypeAscii = 2;
constexpr std::uint16_t kTypeShort = 3;
constexpr std::uint16_t kTypeLong = 4;
constexpr std::uint16_t kTypeRational = 5;

inline std::size_t type_size(std::uint16_t type) {
  switch (type) {
    case 1: case 2: case 6: case 7: return 1;
    case 3: case 8: return 2;
    case 4: case 9: case 11: return 4;
    case 5: case 10: case 12: return 8;
    default: return 0;
  }
}

/// Offset of an entry's value: inline within the 4-byte field when it fits,
/// otherwise at the pointed-to TIFF offset. Returns false when the value
/// would fall outside the buffer.
inline bool value_offset(const BoundedReader& tiff, const IfdEntry& entry, std::size_t& out) {
  const std::size_t unit = type_size(entry.type);
  if (unit == 0) return false;
  const std::size_t total = unit * entry.count;
  if (total <= 4) {
    out = entry.entry_offset + 8;
    return tiff.in_range(out, total);
  }
  std::uint32_t offset = 0;
  if (!tiff.read_u32(entry.entry_offset + 8, offset)) return false;
  out = offset;
  return tiff.in_range(out, total);
}

/// Walks one IFD, collecting its entries. Returns false on a truncated or
/// out-of-bounds table.
inline bool read_ifd(const BoundedReader& tiff, std::size_t offset, std::vector<IfdEntry>& out) {
  std::uint16_t count = 0;
  if (!tiff.read_u16(offset, count)) return false;
  if (!tiff.in_range(offset + 2, static_cast<std::size_t>(count) * 12)) return false;
  out.clear();
  out.reserve(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    const std::size_t at = offset + 2 + static_cast<std::size_t>(i) * 12;
    IfdEntry entry;
    entry.entry_offset = at;
    if (!tiff.read_u16(at, entry.tag) || !tiff.read_u16(at + 2, entry.type) ||
        !tiff.read_u32(at + 4, entry.count))
      return false;
    out.push_back(entry);
  }
  return true;
}

inline const IfdEntry* find_tag(const std::vector<IfdEntry>& entries, std::uint16_t tag) {
  for (const auto& e : entries)
    if (e.tag == tag) return &e;
  return nullptr;
}

inline std::string read_ascii(const BoundedReader& tiff, const IfdEntry& entry) {
  if (entry.type != kTypeAscii || entry.count == 0) return {};
  std::size_t offset = 0;
  if (!value_offset(tiff, entry, offset)) return {};
  const std::size_t len = std::min<std::size_t>(entry.count, 256);
  std::string s;
  s.reserve(len);
  for (std::size_t i = 0; i < len; ++i) {
    std::uint8_t ch = 0;
    if (!tiff.read_u8(offset + i, ch) || ch == 0) break;
    s.push_back(static_cast<char>(ch));
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
  return s;
}

/// Parses the TIFF block (starting at the byte-order marker).
inline ExifParseResult parse_tiff(std::span<const std::uint8_t> tiff_bytes) {
  ExifParseResult result;
  if (tiff_bytes.size() < 8) {
    result.error = ExifError::bad_tiff_header;
    return result;
  }
  bool big_endian = false;
  if (tiff_bytes[0] == 'I' && tiff_bytes[1] == 'I')
    big_endian = false;
  else if (tiff_bytes[0] == 'M' && tiff_bytes[1] == 'M')
    big_endian = true;
  else {
    result.error = ExifError::bad_tiff_header;
    return result;
  }
  const BoundedReader tiff(tiff_bytes, big_endian);
  std::uint16_t magic = 0;
  std::uint32_t ifd0_offset = 0;
  if (!tiff.read_u16(2, magic) || magic != 42 || !tiff.read_u32(4, ifd0_offset)) {
    result.error = ExifError::bad_tiff_header;
    return result;
  }

  std::vector<IfdEntry> ifd0;
  if (!read_ifd(tiff, ifd0_offset, ifd0)) {
    result.error = ExifError::bad_ifd_offset;
    return result;
  }
  if (const IfdEntry* e = find_tag(ifd0, kTagMake)) result.meta.make = read_ascii(tiff, *e);
  if (const IfdEntry* e = find_tag(ifd0, kTagModel)) result.meta.model = read_ascii(tiff, *e);

  const IfdEntry* exif_ptr = find_tag(ifd0, kTagExifIfd);
  if (exif_ptr == nullptr || (exif_ptr->type != kTypeLong && exif_ptr->type != kTypeShort) ||
      exif_ptr->count != 1) {
    result.error = ExifError::missing_focal_tag;  // no Exif sub-IFD, so no focal tag
    return result;
  }
  std::uint32_t exif_offset = 0;
  if (!tiff.read_u32(exif_ptr->entry_offset + 8, exif_offset)) {
    result.error = ExifError::bad_ifd_offset;
    return result;
  }
  if (exif_ptr->type == kTypeShort) exif_offset &= 0xFFFFu;

  std::vector<IfdEntry> exif_ifd;
  if (!read_ifd(tiff, exif_offset, exif_ifd)) {
    result.error = ExifError::bad_ifd_offset;
    return result;
  }

  const IfdEntry* focal = find_tag(exif_ifd, kTagFocalLength);
  if (focal == nullptr || focal->type != kTypeRational || focal->count < 1) {
    result.error = ExifError::missing_focal_tag;
    return result;
  }
  std::size_t at = 0;
  if (!value_offset(tiff, *focal, at)) {
    result.error = ExifError::bad_ifd_offset;
    return result;
  }
  std::uint32_t num = 0, den = 0;
  if (!tiff.read_u32(at, num) || !tiff.read_u32(at + 4, den)) {
    result.error = ExifError::bad_ifd_offset;
    return result;
  }
  if (den == 0) {
    result.error = ExifError::zero_denominator;
    return result;
  }
  if (num == 0) {
    result.error = ExifError::missing_focal_tag;
    return result;
  }
  result.meta.focal_length_mm = {num, den};

  if (const IfdEntry* e = find_tag(exif_ifd, kTagFocal35mm);
      e != nullptr && e->type == kTypeShort && e->count == 1) {
    std::uint16_t v = 0;
    std::size_t off = 0;
    if (value_offset(tiff, *e, off) && tiff.read_u16(off, v) && v > 0)
      result.meta.focal_35mm_equiv = static_cast<int>(v);
  }
  if (const IfdEntry* e = find_tag(exif_ifd, kTagPixelXDimension); e != nullptr && e->count == 1) {
    std::size_t off = 0;
    if (e->type == kTypeShort) {
      std::uint16_t v = 0;
      if (value_offset(tiff, *e, off) && tiff.read_u16(off, v) && v > 0)
        result.meta.image_width_px = static_cast<int>(v);
    } else if (e->type == kTypeLong) {
      std::uint32_t v = 0;
      if (value_offset(tiff, *e, off) && tiff.read_u32(off, v) && v > 0 && v <= 0x7FFFFFFFu)
        result.meta.image_width_px = static_cast<int>(v);
    }
  }
  return result;
}

}  // namespace detail

/// Extracts focal-length metadata from a JPEG stream or a raw TIFF block.
/// Never throws on malformed input; every failure maps to a distinct
/// ExifError and no read ever leaves the supplied byte range.
inline ExifParseResult parse_exif_focal(std::span<const std::uint8_t> bytes) {
  ExifParseResult result;
  if (bytes.size() >= 2 && ((bytes[0] == 'I' && bytes[1] == 'I') || (bytes[0] == 'M' && bytes[1] == 'M')))
    return detail::parse_tiff(bytes);

  if (bytes.size() < 2 || bytes[0] != 0xFF || bytes[1] != 0xD8) {
    result.error = ExifError::not_jpeg_or_tiff;
    return result;
  }

  // Walk JPEG segments looking for APP1/"Exif\0\0".
  std::size_t pos = 2;
  while (pos + 4 <= bytes.size()) {
    if (bytes[pos] != 0xFF) {
      result.error = ExifError::no_exif_segment;
      return result;
    }
    const std::uint8_t marker = bytes[pos + 1];
    if (marker == 0xD8 || marker == 0x01 || (marker >= 0xD0 && marker <= 0xD7)) {
      pos += 2;  // bare markers carry no payload
      continue;
    }
    if (marker == 0xD9 || marker == 0xDA) break;  // EOI / SOS: no metadata past here
    const std::size_t length = (static_cast<std::size_t>(bytes[pos + 2]) << 8) | bytes[pos + 3];
    if (length < 2 || pos + 2 + length > bytes.size()) {
      result.error = ExifError::no_exif_segment;
      return result;
    }
    if (marker == 0xE1 && length >= 8) {
      const std::size_t payload = pos + 4;
      static constexpr std::uint8_t kExifHeader[6] = {'E', 'x', 'i', 'f', 0, 0};
      if (std::equal(kExifHeader, kExifHeader + 6, bytes.begin() + static_cast<std::ptrdiff_t>(payload)))
        return detail::parse_tiff(bytes.subspan(payload + 6, length - 2 - 6));
    }
    pos += 2 + length;
  }
  result.error = ExifError::no_exif_segment;
  return result;
}

/// Focal ratio = focal length / sensor width. With an explicit sensor width
/// the EXIF rational is used directly; otherwise the 35mm-equivalent tag is
/// referred to the 36 mm full-frame width.
inline double focal_ratio(const FocalMetadata& meta, std::optional<double> sensor_width_mm = std::nullopt) {
  if (sensor_width_mm) {
    if (!(*sensor_width_mm > 0.0)) throw std::invalid_argument("focal_ratio: sensor width must be > 0");
    return meta.focal_length_mm.value() / *sensor_width_mm;
  }
  if (meta.focal_35mm_equiv) return static_cast<double>(*meta.focal_35mm_equiv) / 36.0;
  throw std::invalid_argument("focal_ratio: neither sensor width nor 35mm-equivalent focal available");
}

/// Focal length in pixels: ratio times the image width in pixels.
inline double focal_pixels(double ratio, int image_width_px) {
  if (!(ratio > 0.0) || image_width_px <= 0)
    throw std::invalid_argument("focal_pixels: inputs must be positive");
  return ratio * static_cast<double>(image_width_px);
}

// ---------------------------------------------------------------------------
// Focal bins: k-means over log focal ratios, quantization, top-k evaluation

struct FocalBinModel {
  std::vector<double> centers;     // strictly increasing
  std::vector<double> boundaries;  // midpoints between adjacent centers
};

struct KMeansConfig {
  int max_iters = 200;
  std::uint64_t seed = 0;  // interface parity; quantile init is deterministic
};

/// Lloyd's algorithm in one dimension with quantile initialization. Runs to
/// a fixed point (assignments stable). An emptied cluster is repaired by
/// moving its center to the farthest member of the widest cluster. When
/// inertia_trace is given it receives the within-cluster squared distance
/// after every assignment step.
inline FocalBinModel kmeans_1d(std::span<const double> values, int k, const KMeansConfig& cfg = {},
                               std::vector<double>* inertia_trace = nullptr) {
  if (k < 2) throw std::invalid_argument("kmeans_1d: k must be >= 2");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::size_t distinct = sorted.empty() ? 0 : 1;
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i] != sorted[i - 1]) ++distinct;
  if (distinct < static_cast<std::size_t>(k))
    throw std::invalid_argument("kmeans_1d: fewer distinct values than clusters");

  const std::size_t n = sorted.size();
  std::vector<double> centers(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    const double pos = ((j + 0.5) / k) * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    centers[static_cast<std::size_t>(j)] = sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
  }

  std::vector<int> assign(n, -1);
  if (inertia_trace != nullptr) inertia_trace->clear();
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::fabs(sorted[i] - centers[0]);
      for (int j = 1; j < k; ++j) {
        const double d = std::fabs(sorted[i] - centers[static_cast<std::size_t>(j)]);
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      inertia += best_d * best_d;
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (inertia_trace != nullptr) inertia_trace->push_back(inertia);
    if (!changed && iter > 0) break;

    std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
    std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
    std::vector<double> lo(static_cast<std::size_t>(k), 0.0), hi(static_cast<std::size_t>(k), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = static_cast<std::size_t>(assign[i]);
      if (count[j] == 0) lo[j] = hi[j] = sorted[i];
      lo[j] = std::min(lo[j], sorted[i]);
      hi[j] = std::max(hi[j], sorted[i]);
      sum[j] += sorted[i];
      ++count[j];
    }
    for (int j = 0; j < k; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      if (count[ju] > 0) {
        centers[ju] = sum[ju] / static_cast<double>(count[ju]);
        continue;
      }
      // Empty cluster: split the widest populated cluster at its farthest
      // member from the current center.
      int widest = -1;
      double widest_span = -1.0;
      for (int w = 0; w < k; ++w) {
        const auto wu = static_cast<std::size_t>(w);
        if (count[wu] < 2) continue;
        if (hi[wu] - lo[wu] > widest_span) {
          widest_span = hi[wu] - lo[wu];
          widest = w;
        }
      }
      if (widest < 0) continue;
      const auto wu = static_cast<std::size_t>(widest);
      const double center = sum[wu] / static_cast<double>(count[wu]);
      centers[ju] = (hi[wu] - center >= center - lo[wu]) ? hi[wu] : lo[wu];
    }
  }

  std::sort(centers.begin(), centers.end());
  FocalBinModel model;
  model.centers = std::move(centers);
  model.boundaries.reserve(static_cast<std::size_t>(k) - 1);
  for (int j = 0; j + 1 < k; ++j)
    model.boundaries.push_back(0.5 * (model.centers[static_cast<std::size_t>(j)] +
                                      model.centers[static_cast<std::size_t>(j) + 1]));
  return model;
}

/// Index of the nearest center; ties go to the lower index.
inline int quantize(double log_ratio, const FocalBinModel& model) {
  if (model.centers.empty()) throw std::invalid_argument("quantize: unfitted model");
  int best = 0;
  double best_d = std::fabs(log_ratio - model.centers[0]);
  for (std::size_t j = 1; j < model.centers.size(); ++j) {
    const double d = std::fabs(log_ratio - model.centers[j]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

/// Ranking of bins by descending score; ties go to the lower bin index.
inline std::vector<int> ranking_from_scores(std::span<const double> scores) {
  std::vector<int> order(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });
  return order;
}

/// Ranking of bins by descending training-set frequency (the mode baseline).
inline std::vector<int> mode_ranking(std::span<const int> training_bins, int n_bins) {
  std::vector<double> freq(static_cast<std::size_t>(n_bins), 0.0);
  for (int b : training_bins) {
    if (b < 0 || b >= n_bins) throw std::invalid_argument("mode_ranking: bin out of range");
    freq[static_cast<std::size_t>(b)] += 1.0;
  }
  return ranking_from_scores(freq);
}

/// Top-k misclassification rates: for each k, the fraction of images whose
/// true bin is absent from the first k ranked predictions.
inline std::vector<double> eval_topk(std::span<const std::vector<int>> rankings,
                                     std::span<const int> truth, std::span<const int> k_list) {
  if (rankings.size() != truth.size())
    throw std::invalid_argument("eval_topk: rankings/truth size mismatch");
  if (rankings.empty()) throw std::invalid_argument("eval_topk: no predictions");
  int max_k = 0;
  for (int k : k_list) {
    if (k < 1) throw std::invalid_argument("eval_topk: k must be >= 1");
    max_k = std::max(max_k, k);
  }
  for (const auto& r : rankings)
    if (r.size() < static_cast<std::size_t>(max_k))
      throw std::invalid_argument("eval_topk: ranking shorter than requested k");

  std::vector<double> errors;
  errors.reserve(k_list.size());
  for (int k : k_list) {
    std::size_t misses = 0;
    for (std::size_t i = 0; i < rankings.size(); ++i) {
      const auto& r = rankings[i];
      bool hit = false;
      for (int j = 0; j < k; ++j)
        if (r[static_cast<std::size_t>(j)] == truth[i]) {
          hit = true;
          break;
        }
      if (!hit) ++misses;
    }
    errors.push_back(static_cast<double>(misses) / static_cast<double>(rankings.size()));
  }
  return errors;
}

}  // namespace scenesize::exif_focal
