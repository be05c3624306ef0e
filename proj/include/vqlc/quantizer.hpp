#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "vqlc/checkpoint.hpp"
#include "vqlc/error.hpp"
#include "vqlc/rng.hpp"
#include "vqlc/tensor.hpp"

namespace vqlc {

// ---------------------------------------------------------------------------
// K-Means (k-means++ seeding + Lloyd iterations, Euclidean)

struct KMeansResult {
  Tensor2 centroids;                   // K×d
  std::vector<std::size_t> assignment;  // N
  std::vector<std::size_t> sizes;       // K
  std::vector<double> objective;        // within-cluster sum of squares after each iteration
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

inline std::size_t nearest_euclidean(std::span<const double> x, const Tensor2& centroids, double* best_out = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centroids.rows(); ++k) {
    const double d = squared_distance(x, centroids.row(k));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  if (best_out) *best_out = best_d;
  return best;
}

inline Tensor2 kmeanspp_seed(const Tensor2& pool, std::size_t k, Rng& rng) {
  const std::size_t n = pool.rows();
  Tensor2 centroids(k, pool.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(n, 0);
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : d2[i];
      if (total > 0.0) {
        double u = uniform01(rng) * total;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (chosen[i] || d2[i] == 0.0) continue;
          u -= d2[i];
          pick = i;
          if (u < 0.0) break;
        }
      } else {
        // Remaining points all coincide with chosen centers.
        pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), 0) - chosen.begin());
      }
    }
    chosen[pick] = 1;
    const auto src = pool.row(pick);
    std::copy(src.begin(), src.end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(pool.row(i), src));
  }
  return centroids;
}

}  // namespace detail

namespace detail {

inline KMeansResult lloyd(const Tensor2& pool, std::size_t k, std::size_t max_iters, Rng& rng) {
  const std::size_t n = pool.rows(), d = pool.cols();
  KMeansResult res;
  res.centroids = detail::kmeanspp_seed(pool, k, rng);
  res.assignment.assign(n, k);  // k == "unassigned"
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < std::max<std::size_t>(max_iters, 1); ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = detail::nearest_euclidean(pool.row(i), res.centroids, &dist[i]);
      if (a != res.assignment[i]) {
        changed = true;
        res.assignment[i] = a;
      }
    }
    if (!changed) {
      res.converged = true;
      break;
    }
    Tensor2 sums(k, d);
    res.sizes.assign(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = res.assignment[i];
      ++res.sizes[a];
      auto s = sums.row(a);
      const auto x = pool.row(i);
      for (std::size_t j = 0; j < d; ++j) s[j] += x[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (res.sizes[c] == 0) continue;
      auto dst = res.centroids.row(c);
      const auto s = sums.row(c);
      for (std::size_t j = 0; j < d; ++j) dst[j] = s[j] / static_cast<double>(res.sizes[c]);
    }
    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = squared_distance(pool.row(i), res.centroids.row(res.assignment[i]));
      wcss += dist[i];
    }
    res.objective.push_back(wcss);
    ++res.iterations;
    for (std::size_t c = 0; c < k; ++c) {
      if (res.sizes[c] != 0) continue;
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i) {
        if (dist[i] > dist[far]) far = i;
      }
      const auto src = pool.row(far);
      std::copy(src.begin(), src.end(), res.centroids.row(c).begin());
      dist[far] = 0.0;
    }
  }
  res.sizes.assign(k, 0);
  for (std::size_t a : res.assignment) ++res.sizes[a];
  return res;
}

}  // namespace detail

/// Lloyd's algorithm from k-means++ seeds. Stops after `max_iters` iterations
/// or when no assignment changes. A cluster that empties is reseeded to the
/// point farthest from its current centroid (smallest index on ties).
/// With restarts > 1 the run with the lowest final objective wins; earliest on ties.
inline KMeansResult kmeans(const Tensor2& pool, std::size_t k, std::size_t max_iters, std::uint64_t seed,
                           std::size_t restarts = 1) {
  const std::size_t n = pool.rows();
  detail::require(k >= 1, "kmeans: K must be >= 1");
  detail::require(n >= k, "kmeans: need at least K=" + std::to_string(k) + " points, got " + std::to_string(n));
  detail::require(restarts >= 1, "kmeans: restarts must be >= 1");
  KMeansResult best;
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng = make_rng(seed, r == 0 ? std::string("kmeans++") : "kmeans++/" + std::to_string(r));
    KMeansResult res = detail::lloyd(pool, k, max_iters, rng);
    if (r == 0 || res.objective.back() < best.objective.back()) best = std::move(res);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Codebook

/// K concept vectors maintained by exponential moving averages of assigned
/// encoder outputs. Invariant: vectors.row(j) == ema_sums.row(j) / ema_counts[j]
/// whenever ema_counts[j] > 0.
struct Codebook {
  Tensor2 vectors;                 // K×d
  std::vector<double> ema_counts;  // K
  Tensor2 ema_sums;                // K×d
  double decay = 0.999;

  std::size_t size() const noexcept { return vectors.rows(); }
  std::size_t dim() const noexcept { return vectors.cols(); }

  void save_to(TensorBlob& blob, const std::string& prefix = "quantizer/") const {
    blob.put(prefix + "vectors", vectors);
    blob.put(prefix + "ema_counts", Tensor2::row_vector(ema_counts));
    blob.put(prefix + "ema_sums", ema_sums);
    blob.put(prefix + "decay", Tensor2(1, 1, decay));
  }

  static Codebook load_from(const TensorBlob& blob, const std::string& prefix = "quantizer/") {
    Codebook cb;
    cb.vectors = blob.get(prefix + "vectors");
    const auto counts = blob.get(prefix + "ema_counts").flat();
    cb.ema_counts.assign(counts.begin(), counts.end());
    cb.ema_sums = blob.get(prefix + "ema_sums");
    cb.decay = blob.get(prefix + "decay")[0];
    detail::require(cb.ema_counts.size() == cb.size() && cb.ema_sums.same_shape(cb.vectors),
                    "codebook: inconsistent serialized shapes");
    return cb;
  }
};

inline Codebook codebook_from_centroids(const Tensor2& centroids, std::span<const std::size_t> sizes, double decay) {
  Codebook cb;
  cb.vectors = centroids;
  cb.decay = decay;
  cb.ema_counts.assign(sizes.begin(), sizes.end());
  cb.ema_sums = centroids;
  for (std::size_t j = 0; j < cb.size(); ++j) {
    for (double& v : cb.ema_sums.row(j)) v *= cb.ema_counts[j];
  }
  return cb;
}

/// Codebook from K-Means over a representation pool.
inline Codebook kmeans_init(const Tensor2& pool, std::size_t k, std::size_t iters, std::uint64_t seed,
                            double decay = 0.999, std::size_t restarts = 1) {
  const KMeansResult km = kmeans(pool, k, iters, seed, restarts);
  return codebook_from_centroids(km.centroids, km.sizes, decay);
}

/// Codebook drawn uniformly from the pool's bounding box. Each code starts
/// with the average K-Means cluster size (N/K) as its EMA count so that both
/// initializations carry the same EMA inertia.
inline Codebook random_init(const Tensor2& pool, std::size_t k, std::uint64_t seed, double decay = 0.999) {
  detail::require(pool.rows() >= 1 && k >= 1, "random_init: empty pool or K=0");
  const std::size_t d = pool.cols();
  std::vector<double> lo(d, std::numeric_limits<double>::infinity()), hi(d, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < pool.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      lo[j] = std::min(lo[j], pool(i, j));
      hi[j] = std::max(hi[j], pool(i, j));
    }
  }
  Rng rng = make_rng(seed, "random-init");
  Tensor2 v(k, d);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) v(c, j) = lo[j] + (hi[j] - lo[j]) * uniform01(rng);
  }
  const std::vector<std::size_t> sizes(k, std::max<std::size_t>(1, pool.rows() / k));
  return codebook_from_centroids(v, sizes, decay);
}

// ---------------------------------------------------------------------------
// Distances and assignment

inline double cosine_distance(std::span<const double> z, std::span<const double> v) {
  detail::require(z.size() == v.size(), "cosine_distance: dimension mismatch");
  const double nz = norm(z), nv = norm(v);
  if (nz == 0.0 || nv == 0.0) throw ValidationError("cosine_distance: zero-norm vector");
  return 1.0 - dot(z, v) / (nz * nv);
}

namespace detail {

inline std::vector<double> row_norms(const Tensor2& m, const char* what) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out[i] = norm(m.row(i));
    if (out[i] == 0.0) throw ValidationError(std::string(what) + " row " + std::to_string(i) + " has zero norm");
  }
  return out;
}

/// Cosine distances from one row to every code, given precomputed code norms.
inline void cosine_distances(std::span<const double> z, const Tensor2& codes, std::span<const double> code_norms,
                             std::span<double> out, std::size_t row_for_error = 0) {
  const double nz = norm(z);
  if (nz == 0.0) throw ValidationError("input row " + std::to_string(row_for_error) + " has zero norm");
  for (std::size_t k = 0; k < codes.rows(); ++k) out[k] = 1.0 - dot(z, codes.row(k)) / (nz * code_norms[k]);
}

}  // namespace detail

/// Nearest code by cosine distance for every row; ties go to the smaller index.
inline std::vector<std::size_t> assign_nearest_cosine(const Tensor2& z, const Tensor2& codes) {
  detail::require(codes.rows() >= 1, "assign: empty codebook");
  detail::require(z.cols() == codes.cols(), "assign: dimension mismatch " + z.shape_str() + " vs " + codes.shape_str());
  const auto cn = detail::row_norms(codes, "codebook");
  std::vector<double> dist(codes.rows());
  std::vector<std::size_t> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    detail::cosine_distances(z.row(i), codes, cn, dist, i);
    out[i] = static_cast<std::size_t>(std::min_element(dist.begin(), dist.end()) - dist.begin());
  }
  return out;
}

inline std::vector<std::size_t> assign_inference(const Tensor2& z, const Codebook& cb) {
  return assign_nearest_cosine(z, cb.vectors);
}

struct SamplerConfig {
  std::size_t top_k = 5;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate(std::size_t codebook_size) const {
    detail::require(top_k >= 1, "sampler: top_k must be >= 1");
    detail::require(top_k <= codebook_size, "sampler: top_k=" + std::to_string(top_k) + " exceeds codebook size " +
                                                std::to_string(codebook_size));
    detail::require(temperature > 0.0, "sampler: temperature must be > 0");
  }
};

namespace detail {

inline std::size_t sample_from_distances(std::span<const double> dist, const SamplerConfig& cfg, Rng& rng,
                                         std::vector<std::size_t>& order, std::vector<double>& weights) {
  order.resize(dist.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto less = [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.top_k), order.end(), less);
  weights.resize(cfg.top_k);
  const double dmin = dist[order[0]];
  double z = 0.0;
  for (std::size_t i = 0; i < cfg.top_k; ++i) {
    weights[i] = std::exp(-(dist[order[i]] - dmin) / cfg.temperature);
    z += weights[i];
  }
  double u = uniform01(rng) * z;
  for (std::size_t i = 0; i < cfg.top_k; ++i) {
    u -= weights[i];
    if (u < 0.0) return order[i];
  }
  return order[cfg.top_k - 1];
}

}  // namespace detail

/// Training-time assignment: softmax(−D/τ) over the top_k nearest codes.
inline std::size_t sample_code_train(std::span<const double> z, const Codebook& cb, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate(cb.size());
  const auto cn = detail::row_norms(cb.vectors, "codebook");
  std::vector<double> dist(cb.size());
  detail::cosine_distances(z, cb.vectors, cn, dist);
  std::vector<std::size_t> order;
  std::vector<double> w;
  return detail::sample_from_distances(dist, cfg, rng, order, w);
}

inline std::vector<std::size_t> sample_codes_train(const Tensor2& z, const Codebook& cb, const SamplerConfig& cfg,
                                                   Rng& rng) {
  cfg.validate(cb.size());
  detail::require(z.cols() == cb.dim(), "sample_codes_train: dimension mismatch");
  const auto cn = detail::row_norms(cb.vectors, "codebook");
  std::vector<double> dist(cb.size());
  std::vector<std::size_t> order;
  std::vector<double> w;
  std::vector<std::size_t> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    detail::cosine_distances(z.row(i), cb.vectors, cn, dist, i);
    out[i] = detail::sample_from_distances(dist, cfg, rng, order, w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// EMA update

/// n_j ← λn_j + (1−λ)·count_j,  m_j ← λm_j + (1−λ)·Σ z_i,  v_j ← m_j / n_j.
/// Codes that received no assignment keep their vector as is.
inline void ema_update(Codebook& cb, const Tensor2& z, std::span<const std::size_t> assignments) {
  detail::require(z.rows() == assignments.size(), "ema_update: assignment count mismatch");
  detail::require(z.cols() == cb.dim(), "ema_update: dimension mismatch");
  const std::size_t k = cb.size(), d = cb.dim();
  std::vector<double> counts(k, 0.0);
  Tensor2 sums(k, d);
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    const std::size_t a = assignments[i];
    detail::require(a < k, "ema_update: assignment " + std::to_string(a) + " out of range");
    counts[a] += 1.0;
    auto s = sums.row(a);
    const auto x = z.row(i);
    for (std::size_t j = 0; j < d; ++j) s[j] += x[j];
  }
  const double lam = cb.decay;
  for (std::size_t c = 0; c < k; ++c) {
    cb.ema_counts[c] = lam * cb.ema_counts[c] + (1.0 - lam) * counts[c];
    auto m = cb.ema_sums.row(c);
    const auto s = sums.row(c);
    for (std::size_t j = 0; j < d; ++j) m[j] = lam * m[j] + (1.0 - lam) * s[j];
    if (counts[c] > 0.0 && cb.ema_counts[c] > 0.0) {
      auto v = cb.vectors.row(c);
      for (std::size_t j = 0; j < d; ++j) v[j] = m[j] / cb.ema_counts[c];
    }
  }
}

// ---------------------------------------------------------------------------
// Usage diagnostics

struct UsageStats {
  std::vector<std::size_t> counts;
  std::size_t active_codes = 0;
  double perplexity = 0.0;
};

inline UsageStats usage_stats(std::span<const std::size_t> assignments, std::size_t k) {
  detail::require(!assignments.empty(), "usage_stats: empty assignment list");
  UsageStats u;
  u.counts.assign(k, 0);
  for (std::size_t a : assignments) {
    detail::require(a < k, "usage_stats: assignment out of range");
    ++u.counts[a];
  }
  const double total = static_cast<double>(assignments.size());
  double h = 0.0;
  for (std::size_t c : u.counts) {
    if (c == 0) continue;
    ++u.active_codes;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  u.perplexity = std::exp(h);
  return u;
}

}  // namespace vqlc
