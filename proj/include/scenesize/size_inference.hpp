#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scenesize/boxes.hpp"
#include "scenesize/linalg.hpp"

namespace scenesize::size_inference {

// Alternating estimation of per-image cameras and per-cluster object sizes.
// The measurement model ties a ground contact ordinate y_b (centered pixels,
// up-positive) to the camera through
//     y_b = y_h - (h / H) * h_c
// which is the small-tilt ground equation with depth eliminated via
// h = f*H/d. Heights are observable only through pairwise ratios, so the
// global solve works in log space and fixes the scale gauge per connected
// component of the ratio graph.

struct rank_deficient_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct underdetermined_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SizeCluster {
  std::string category;
  int cluster_id = 0;    // index within the category
  double log_height = 0.0;
};

struct GmmComponent {
  double mean = 0.0;
  double variance = 0.0;
  double weight = 0.0;
};

struct SizeModel {
  std::vector<SizeCluster> clusters;
  std::map<std::string, std::vector<GmmComponent>> gmm;
};

struct CameraSolution {
  std::string image_id;
  double height_m = 0.0;   // h_c
  double horizon_px = 0.0; // y_h, centered pixels
};

struct RatioObservation {
  int cluster_i = 0;
  int cluster_j = 0;
  double log_ratio = 0.0;  // log(H_i / H_j)
  double weight = 1.0;
};

namespace detail {

inline double huber_weight(double residual, double delta) {
  const double a = std::fabs(residual);
  return a <= delta ? 1.0 : delta / a;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Per-image camera least squares

struct CameraObservation {
  double y_b = 0.0;  // centered ground contact, pixels
  double h = 0.0;    // apparent height, pixels
  double H = 0.0;    // current metric height estimate, meters
};

struct CameraPrior {
  double h_c0 = 1.4;
  double strength = 1.0;
};

struct CameraFit {
  double height_m = 0.0;
  double horizon_px = 0.0;
};

/// Least-squares minimizer of sum (y_b - y_h + (h/H) h_c)^2, optionally with
/// a quadratic prior strength*(h_c - h_c0)^2. Throws rank_deficient_error
/// when the system is underdetermined (fewer than two distinct h/H ratios
/// and no prior). The solved h_c is clamped to stay positive.
inline CameraFit solve_camera(std::span<const CameraObservation> obs,
                              const std::optional<CameraPrior>& prior = std::nullopt,
                              std::optional<double> huber_delta = std::nullopt) {
  if (obs.empty()) throw std::invalid_argument("solve_camera: no observations");
  const std::size_t n = obs.size();
  std::vector<double> slope(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(obs[i].h > 0.0) || !(obs[i].H > 0.0) || !std::isfinite(obs[i].y_b))
      throw std::invalid_argument("solve_camera: invalid observation");
    slope[i] = obs[i].h / obs[i].H;
  }
  const double lambda = prior ? prior->strength : 0.0;
  const double h_c0 = prior ? prior->h_c0 : 0.0;
  constexpr double kHeightFloor = 1e-9;

  std::vector<double> w(n, 1.0);
  CameraFit fit{};
  const int irls_rounds = huber_delta ? 30 : 1;
  for (int round = 0; round < irls_rounds; ++round) {
    double sw = 0.0, swa = 0.0, swaa = 0.0, swy = 0.0, sway = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sw += w[i];
      swa += w[i] * slope[i];
      swaa += w[i] * slope[i] * slope[i];
      swy += w[i] * obs[i].y_b;
      sway += w[i] * slope[i] * obs[i].y_b;
    }
    const double det = (swaa + lambda) * sw - swa * swa;
    const double scale = (swaa + lambda) * sw + swa * swa;
    if (!(det > 1e-10 * std::max(scale, 1e-300)))
      throw rank_deficient_error("solve_camera: rank-deficient system (indistinct h/H ratios and no prior)");
    double h_c = ((-sway + lambda * h_c0) * sw + swa * swy) / det;
    if (h_c < kHeightFloor) h_c = kHeightFloor;
    const double y_h = (swy + swa * h_c) / sw;

    const CameraFit prev = fit;
    fit = {h_c, y_h};
    if (huber_delta) {
      for (std::size_t i = 0; i < n; ++i)
        w[i] = detail::huber_weight(fit.horizon_px - slope[i] * fit.height_m - obs[i].y_b, *huber_delta);
      if (round > 0 && std::fabs(prev.height_m - fit.height_m) < 1e-13 &&
          std::fabs(prev.horizon_px - fit.horizon_px) < 1e-13)
        break;
    }
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Pairwise height-ratio collection

struct RatioInput {
  double y_b = 0.0;
  double h = 0.0;
  int cluster = 0;
};

struct RatioCollection {
  std::vector<RatioObservation> observations;
  int skipped_near_horizon = 0;   // instances too close to the horizon
  int skipped_opposite_sign = 0;  // pairs straddling the horizon
  int skipped_same_cluster = 0;   // pairs carrying no cross-cluster constraint
};

/// Ratio update of the alternating loop: for objects i, j in one image,
/// H_i/H_j = (h_i/h_j) * ((y_b_j - y_h)/(y_b_i - y_h)). Instances within
/// eps_px of the horizon are excluded (the ratio blows up there), as are
/// pairs whose contact points fall on opposite sides of the horizon.
inline RatioCollection pairwise_log_ratios(std::span<const RatioInput> instances, double y_h,
                                           double eps_px) {
  RatioCollection out;
  std::vector<std::size_t> kept;
  kept.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (std::fabs(instances[i].y_b - y_h) > eps_px)
      kept.push_back(i);
    else
      ++out.skipped_near_horizon;
  }
  for (std::size_t a = 0; a < kept.size(); ++a) {
    for (std::size_t b = a + 1; b < kept.size(); ++b) {
      const RatioInput& pi = instances[kept[a]];
      const RatioInput& pj = instances[kept[b]];
      const double si = pi.y_b - y_h;
      const double sj = pj.y_b - y_h;
      if (si * sj < 0.0) {
        ++out.skipped_opposite_sign;
        continue;
      }
      if (pi.cluster == pj.cluster) {
        ++out.skipped_same_cluster;
        continue;
      }
      const double log_ratio = std::log(pi.h / pj.h) + std::log(sj / si);
      out.observations.push_back({pi.cluster, pj.cluster, log_ratio, 1.0});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Global log-height least squares with gauge fixing

/// Connected components of the cluster-constraint graph; edges with
/// non-positive weight are ignored. Component ids are dense, assigned in
/// increasing order of the lowest cluster index they contain.
inline std::vector<int> cluster_components(std::size_t n_clusters,
                                           std::span<const RatioObservation> obs) {
  std::vector<std::size_t> parent(n_clusters);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const auto& o : obs) {
    if (!(o.weight > 0.0)) continue;
    const auto a = find(static_cast<std::size_t>(o.cluster_i));
    const auto b = find(static_cast<std::size_t>(o.cluster_j));
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<int> component(n_clusters, -1);
  int next = 0;
  for (std::size_t v = 0; v < n_clusters; ++v) {
    const auto root = find(v);
    if (component[root] < 0) component[root] = next++;
    component[v] = component[root];
  }
  return component;
}

/// Minimizes sum over observations of weight*(x_i - x_j - log_ratio)^2.
/// The gauge left free by ratio-only constraints is fixed per connected
/// component: the mean log height of each component is anchored to its mean
/// under `init`. Clusters with no observations keep their init value.
inline std::vector<double> solve_log_heights(std::span<const RatioObservation> obs,
                                             std::span<const double> init,
                                             std::optional<double> huber_delta = std::nullopt) {
  const std::size_t n = init.size();
  for (const auto& o : obs) {
    if (o.cluster_i < 0 || o.cluster_j < 0 || static_cast<std::size_t>(o.cluster_i) >= n ||
        static_cast<std::size_t>(o.cluster_j) >= n || o.cluster_i == o.cluster_j ||
        !std::isfinite(o.log_ratio) || !(o.weight >= 0.0))
      throw std::invalid_argument("solve_log_heights: malformed observation");
  }
  std::vector<double> x(init.begin(), init.end());
  if (obs.empty()) return x;

  const std::vector<int> component = cluster_components(n, obs);
  const int n_components = component.empty() ? 0 : *std::max_element(component.begin(), component.end()) + 1;

  // Lowest-index cluster of each component gets pinned during elimination.
  std::vector<int> pin(n_components, -1);
  for (std::size_t v = 0; v < n; ++v)
    if (pin[component[v]] < 0) pin[component[v]] = static_cast<int>(v);

  std::vector<double> scaled_w(obs.size(), 1.0);
  const int irls_rounds = huber_delta ? 30 : 1;
  std::vector<double> prev_x;
  for (int round = 0; round < irls_rounds; ++round) {
    linalg::Matrix a(n, n);
    std::vector<double> b(n, 0.0);
    for (std::size_t e = 0; e < obs.size(); ++e) {
      const auto& o = obs[e];
      const double w = o.weight * scaled_w[e];
      if (!(w > 0.0)) continue;
      const auto i = static_cast<std::size_t>(o.cluster_i);
      const auto j = static_cast<std::size_t>(o.cluster_j);
      a(i, i) += w;
      a(j, j) += w;
      a(i, j) -= w;
      a(j, i) -= w;
      b[i] += w * o.log_ratio;
      b[j] -= w * o.log_ratio;
    }
    // Pin one node per component to remove the gauge nullspace, and give
    // isolated clusters an identity row so the system is nonsingular.
    for (std::size_t v = 0; v < n; ++v) {
      const bool pinned = pin[component[v]] == static_cast<int>(v);
      const bool isolated = a(v, v) == 0.0;
      if (!pinned && !isolated) continue;
      for (std::size_t c = 0; c < n; ++c) a(v, c) = 0.0;
      a(v, v) = 1.0;
      b[v] = init[v];
    }
    // Move pinned values out of the remaining rows.
    for (std::size_t r = 0; r < n; ++r) {
      if (pin[component[r]] == static_cast<int>(r)) continue;
      const auto p = static_cast<std::size_t>(pin[component[r]]);
      if (a(r, p) != 0.0) {
        b[r] -= a(r, p) * init[p];
        a(r, p) = 0.0;
      }
    }
    auto solved = linalg::solve_dense(a, b);
    if (!solved) throw rank_deficient_error("solve_log_heights: singular normal equations");
    x = std::move(*solved);

    if (huber_delta) {
      for (std::size_t e = 0; e < obs.size(); ++e) {
        const auto& o = obs[e];
        scaled_w[e] = detail::huber_weight(x[o.cluster_i] - x[o.cluster_j] - o.log_ratio, *huber_delta);
      }
      if (!prev_x.empty()) {
        double change = 0.0;
        for (std::size_t v = 0; v < n; ++v) change = std::max(change, std::fabs(x[v] - prev_x[v]));
        if (change < 1e-13) break;
      }
      prev_x = x;
    }
  }

  // Gauge: shift each component so its mean matches the init mean.
  std::vector<double> sum_init(n_components, 0.0), sum_x(n_components, 0.0);
  std::vector<std::size_t> count(n_components, 0);
  for (std::size_t v = 0; v < n; ++v) {
    sum_init[component[v]] += init[v];
    sum_x[component[v]] += x[v];
    ++count[component[v]];
  }
  for (std::size_t v = 0; v < n; ++v) {
    const int c = component[v];
    x[v] += (sum_init[c] - sum_x[c]) / static_cast<double>(count[c]);
  }
  return x;
}

// ---------------------------------------------------------------------------
// 1-D Gaussian mixture fitting and cluster assignment

struct GmmConfig {
  double variance_floor = 1e-4;
  double tol = 1e-8;
  int max_iters = 200;
  std::uint64_t seed = 0;  // kept for interface parity; the fit is closed-form deterministic
};

struct GmmFit {
  std::vector<GmmComponent> components;  // sorted by mean
  int k_requested = 0;
  int k_used = 0;
  bool reduced = false;
};

/// EM fit of a 1-D Gaussian mixture with quantile initialization. When the
/// sample has fewer distinct values than k, k is reduced and the fit flagged.
inline GmmFit gmm_fit_1d(std::span<const double> samples, int k, const GmmConfig& cfg = {}) {
  if (samples.empty()) throw std::invalid_argument("gmm_fit_1d: no samples");
  if (k < 1) throw std::invalid_argument("gmm_fit_1d: k must be >= 1");
  const std::size_t n = samples.size();

  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  std::size_t distinct = 1;
  for (std::size_t i = 1; i < n; ++i)
    if (sorted[i] != sorted[i - 1]) ++distinct;

  GmmFit fit;
  fit.k_requested = k;
  fit.k_used = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(k), distinct));
  fit.reduced = fit.k_used < k;
  const int K = fit.k_used;

  const double mean_all = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  double var_all = 0.0;
  for (double v : sorted) var_all += (v - mean_all) * (v - mean_all);
  var_all /= static_cast<double>(n);

  if (K == 1) {
    fit.components = {{mean_all, std::max(var_all, cfg.variance_floor), 1.0}};
    return fit;
  }

  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
  };

  std::vector<GmmComponent> comp(K);
  for (int j = 0; j < K; ++j) {
    comp[j].mean = quantile((j + 0.5) / K);
    comp[j].variance = std::max(var_all / (K * K), cfg.variance_floor);
    comp[j].weight = 1.0 / K;
  }

  std::vector<double> resp(n * K);
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    // E-step with log-sum-exp
    for (std::size_t i = 0; i < n; ++i) {
      double max_log = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < K; ++j) {
        const double d = sorted[i] - comp[j].mean;
        const double lg = std::log(comp[j].weight) - 0.5 * std::log(2.0 * std::numbers::pi * comp[j].variance) -
                          d * d / (2.0 * comp[j].variance);
        resp[i * K + j] = lg;
        max_log = std::max(max_log, lg);
      }
      double denom = 0.0;
      for (int j = 0; j < K; ++j) denom += std::exp(resp[i * K + j] - max_log);
      for (int j = 0; j < K; ++j) resp[i * K + j] = std::exp(resp[i * K + j] - max_log) / denom;
    }
    // M-step
    double change = 0.0;
    for (int j = 0; j < K; ++j) {
      double nk = 0.0, sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * K + j];
        sum += resp[i * K + j] * sorted[i];
      }
      GmmComponent next = comp[j];
      if (nk > 1e-300) {
        next.mean = sum / nk;
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = sorted[i] - next.mean;
          ss += resp[i * K + j] * d * d;
        }
        next.variance = std::max(ss / nk, cfg.variance_floor);
        next.weight = nk / static_cast<double>(n);
      }
      change = std::max({change, std::fabs(next.mean - comp[j].mean),
                         std::fabs(next.variance - comp[j].variance),
                         std::fabs(next.weight - comp[j].weight)});
      comp[j] = next;
    }
    if (change < cfg.tol) break;
  }

  std::stable_sort(comp.begin(), comp.end(),
                   [](const GmmComponent& a, const GmmComponent& b) { return a.mean < b.mean; });
  double wsum = 0.0;
  for (const auto& c : comp) wsum += c.weight;
  for (auto& c : comp) c.weight /= wsum;
  fit.components = std::move(comp);
  return fit;
}

/// Maximum-posterior component for one log height; ties break toward the
/// lower component index.
inline int assign_component(double log_height, std::span<const GmmComponent> components) {
  if (components.empty()) throw std::invalid_argument("assign_component: no components");
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < components.size(); ++j) {
    const auto& c = components[j];
    if (!(c.weight > 0.0)) continue;
    const double d = log_height - c.mean;
    const double score = std::log(c.weight) - 0.5 * std::log(2.0 * std::numbers::pi * c.variance) -
                         d * d / (2.0 * c.variance);
    if (score > best_score) {
      best_score = score;
      best = static_cast<int>(j);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Full alternating loop

struct SizeInstance {
  std::string image_id;
  std::string category;
  double y_b = 0.0;  // centered ground contact, pixels
  double h = 0.0;    // apparent height, pixels
};

struct InferenceConfig {
  double tol = 1e-6;
  int max_iters = 50;
  double eps_px = 1.0;
  std::optional<double> huber_delta;
  bool prior_enabled = false;
  double prior_h_c0 = 1.4;
  double prior_strength = 1.0;
  std::map<std::string, int> clusters_per_category;  // default 1
  GmmConfig gmm;
  std::uint64_t seed = 0;
};

struct EstimateResult {
  SizeModel model;
  std::vector<CameraSolution> cameras;          // solved images, sorted by image_id
  std::vector<int> assignment;                  // per instance, index into model.clusters
  std::vector<double> instance_log_heights;     // final per-instance log size estimates
  std::vector<double> relative_depths;          // d/f = H/h per instance
  std::vector<std::optional<double>> depths_m;  // absolute depth when focal known
  std::vector<double> loss_trace;               // ground-contact MSE per outer iteration
  std::vector<int> cluster_component;           // ratio-graph component per cluster
  bool converged = false;
  int iterations = 0;
  int unsolved_images = 0;
  int skipped_near_horizon = 0;
  int skipped_opposite_sign = 0;
  int skipped_same_cluster = 0;
};

/// Converts annotation records (with completed amodal boxes) into the
/// centered measurements the solver consumes. Throws when a record lacks an
/// amodal box: callers complete boxes first.
inline std::vector<SizeInstance> measurements_from_records(
    std::span<const boxes::InstanceRecord> records, double image_w, double image_h) {
  std::vector<SizeInstance> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.amodal.has_value())
      throw std::invalid_argument("measurements_from_records: instance lacks an amodal box (run completion first)");
    const auto reading = boxes::raster_to_centered(*r.amodal, image_w, image_h);
    out.push_back({r.image_id, r.category, reading.y_b.px, reading.h});
  }
  return out;
}

/// Algorithm: iterate per-image camera solves, pairwise ratio collection,
/// the global log-height solve, GMM clustering of per-instance log sizes,
/// and cluster reassignment until the cluster log heights stop moving.
/// Non-convergence is reported through the result, not thrown.
inline EstimateResult estimate_sizes(std::span<const SizeInstance> instances,
                                     const std::map<std::string, double>& init_heights_m,
                                     const InferenceConfig& cfg = {},
                                     const std::map<std::string, double>* focal_px_by_image = nullptr) {
  if (instances.empty()) throw std::invalid_argument("estimate_sizes: empty dataset");
  for (const auto& inst : instances) {
    if (!(inst.h > 0.0) || !std::isfinite(inst.y_b))
      throw std::invalid_argument("estimate_sizes: invalid measurement");
    if (!init_heights_m.count(inst.category))
      throw std::invalid_argument("estimate_sizes: no init height for category '" + inst.category + "'");
  }

  // Cluster table: categories in sorted order, K clusters each.
  std::map<std::string, int> first_cluster;
  std::vector<SizeCluster> clusters;
  {
    std::map<std::string, bool> seen;
    for (const auto& inst : instances) seen[inst.category] = true;
    for (const auto& [category, _] : seen) {
      int k = 1;
      if (auto it = cfg.clusters_per_category.find(category); it != cfg.clusters_per_category.end())
        k = std::max(1, it->second);
      first_cluster[category] = static_cast<int>(clusters.size());
      const double log_init = std::log(init_heights_m.at(category));
      if (!std::isfinite(log_init))
        throw std::invalid_argument("estimate_sizes: invalid init height for '" + category + "'");
      for (int j = 0; j < k; ++j) clusters.push_back({category, j, log_init});
    }
  }
  const std::size_t n_clusters = clusters.size();
  std::vector<double> anchor(n_clusters);
  for (std::size_t c = 0; c < n_clusters; ++c) anchor[c] = clusters[c].log_height;

  // Canonical image grouping: ids ascending, input order within an image.
  std::map<std::string, std::vector<std::size_t>> images;
  for (std::size_t i = 0; i < instances.size(); ++i) images[instances[i].image_id].push_back(i);

  std::vector<int> assignment(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i)
    assignment[i] = first_cluster.at(instances[i].category);

  const std::optional<CameraPrior> prior =
      cfg.prior_enabled ? std::optional<CameraPrior>({cfg.prior_h_c0, cfg.prior_strength})
                        : std::nullopt;

  std::vector<double> x = anchor;
  std::vector<double> provisional(instances.size(), 0.0);
  std::map<std::string, CameraFit> cameras;
  std::map<std::string, std::vector<GmmComponent>> gmm_by_category;
  std::vector<RatioObservation> last_obs;

  EstimateResult result;
  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    result.iterations = iter;

    // 1. Per-image camera solves with the current height estimates.
    cameras.clear();
    result.unsolved_images = 0;
    for (const auto& [image_id, members] : images) {
      std::vector<CameraObservation> obs;
      obs.reserve(members.size());
      for (std::size_t i : members)
        obs.push_back({instances[i].y_b, instances[i].h, std::exp(x[assignment[i]])});
      try {
        cameras[image_id] = solve_camera(obs, prior, cfg.huber_delta);
      } catch (const rank_deficient_error&) {
        ++result.unsolved_images;
      }
    }
    if (cameras.empty())
      throw underdetermined_error(
          "estimate_sizes: no image admits a camera solution (single-instance images without a prior)");

    // 2. Pairwise ratio observations in canonical order.
    last_obs.clear();
    result.skipped_near_horizon = result.skipped_opposite_sign = result.skipped_same_cluster = 0;
    for (const auto& [image_id, members] : images) {
      auto cam_it = cameras.find(image_id);
      if (cam_it == cameras.end()) continue;
      std::vector<RatioInput> inputs;
      inputs.reserve(members.size());
      for (std::size_t i : members) inputs.push_back({instances[i].y_b, instances[i].h, assignment[i]});
      auto collected = pairwise_log_ratios(inputs, cam_it->second.horizon_px, cfg.eps_px);
      result.skipped_near_horizon += collected.skipped_near_horizon;
      result.skipped_opposite_sign += collected.skipped_opposite_sign;
      result.skipped_same_cluster += collected.skipped_same_cluster;
      last_obs.insert(last_obs.end(), collected.observations.begin(), collected.observations.end());
    }

    // 3. Global log-height solve, gauge anchored to the init means.
    std::vector<double> x_new = solve_log_heights(last_obs, anchor, cfg.huber_delta);
    double delta = 0.0;
    for (std::size_t c = 0; c < n_clusters; ++c) delta = std::max(delta, std::fabs(x_new[c] - x[c]));
    x = std::move(x_new);

    // 4. Per-instance provisional log sizes from the solved cameras.
    for (const auto& [image_id, members] : images) {
      auto cam_it = cameras.find(image_id);
      for (std::size_t i : members) {
        if (cam_it != cameras.end()) {
          const double drop = cam_it->second.horizon_px - instances[i].y_b;
          if (drop > cfg.eps_px && cam_it->second.height_m > 0.0) {
            provisional[i] = std::log(instances[i].h * cam_it->second.height_m / drop);
            continue;
          }
        }
        provisional[i] = x[assignment[i]];
      }
    }

    // 5. GMM per category on the provisional log sizes.
    gmm_by_category.clear();
    for (const auto& entry : first_cluster) {
      const std::string& category = entry.first;
      int k = 1;
      if (auto it = cfg.clusters_per_category.find(category); it != cfg.clusters_per_category.end())
        k = std::max(1, it->second);
      std::vector<double> samples;
      for (std::size_t i = 0; i < instances.size(); ++i)
        if (instances[i].category == category) samples.push_back(provisional[i]);
      GmmConfig gcfg = cfg.gmm;
      gcfg.seed = cfg.seed;
      gmm_by_category[category] = gmm_fit_1d(samples, k, gcfg).components;
    }

    // 6. Reassignment to maximum-posterior components.
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto& comps = gmm_by_category.at(instances[i].category);
      assignment[i] = first_cluster.at(instances[i].category) + assign_component(provisional[i], comps);
    }

    // 7. Ground-contact loss trace.
    double sse = 0.0;
    std::size_t counted = 0;
    for (const auto& [image_id, members] : images) {
      auto cam_it = cameras.find(image_id);
      if (cam_it == cameras.end()) continue;
      for (std::size_t i : members) {
        const double pred = cam_it->second.horizon_px -
                            instances[i].h / std::exp(x[assignment[i]]) * cam_it->second.height_m;
        sse += (instances[i].y_b - pred) * (instances[i].y_b - pred);
        ++counted;
      }
    }
    result.loss_trace.push_back(counted ? sse / static_cast<double>(counted) : 0.0);

    if (delta < cfg.tol) {
      result.converged = true;
      break;
    }
  }

  for (std::size_t c = 0; c < n_clusters; ++c) clusters[c].log_height = x[c];
  result.model.clusters = std::move(clusters);
  result.model.gmm = std::move(gmm_by_category);
  result.cluster_component = cluster_components(n_clusters, last_obs);
  result.assignment = std::move(assignment);
  result.instance_log_heights.assign(provisional.begin(), provisional.end());

  result.cameras.reserve(cameras.size());
  for (const auto& [image_id, fit] : cameras)
    result.cameras.push_back({image_id, fit.height_m, fit.horizon_px});

  result.relative_depths.resize(instances.size());
  result.depths_m.resize(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const double height = std::exp(x[result.assignment[i]]);
    result.relative_depths[i] = height / instances[i].h;
    if (focal_px_by_image != nullptr) {
      if (auto it = focal_px_by_image->find(instances[i].image_id); it != focal_px_by_image->end())
        result.depths_m[i] = it->second * result.relative_depths[i];
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reporting

struct Histogram {
  double lo = 0.0;
  double bin_width = 0.0;
  std::vector<std::size_t> counts;
};

struct CameraHeightSummary {
  double median = 0.0;
  Histogram histogram;
};

/// Median camera height (lower of the middle pair for even counts) plus a
/// fixed-width histogram for reporting.
inline CameraHeightSummary camera_height_summary(std::span<const CameraSolution> solutions,
                                                 std::size_t n_bins = 20) {
  if (solutions.empty()) throw std::invalid_argument("camera_height_summary: empty input");
  std::vector<double> heights;
  heights.reserve(solutions.size());
  for (const auto& s : solutions) heights.push_back(s.height_m);
  std::sort(heights.begin(), heights.end());

  CameraHeightSummary out;
  const std::size_t n = heights.size();
  out.median = (n % 2 == 1) ? heights[n / 2] : heights[n / 2 - 1];

  const double lo = heights.front();
  const double hi = heights.back();
  out.histogram.lo = lo;
  if (hi == lo) {
    out.histogram.bin_width = 0.0;
    out.histogram.counts = {n};
    return out;
  }
  out.histogram.bin_width = (hi - lo) / static_cast<double>(n_bins);
  out.histogram.counts.assign(n_bins, 0);
  for (double v : heights) {
    auto bin = static_cast<std::size_t>((v - lo) / out.histogram.bin_width);
    if (bin >= n_bins) bin = n_bins - 1;
    ++out.histogram.counts[bin];
  }
  return out;
}

}  // namespace scenesize::size_inference
