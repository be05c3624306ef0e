#pragma once

// Clustering baselines sharing the Assigner surface with VqlcModel:
// K-Means and agglomerative Ward clustering, both ending in a set of centroids
// (member means of the raw representations) and nearest-centroid assignment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqlc/assigner.hpp"
#include "vqlc/checkpoint.hpp"
#include "vqlc/error.hpp"
#include "vqlc/memory.hpp"
#include "vqlc/quantizer.hpp"
#include "vqlc/tensor.hpp"

namespace vqlc {

enum class Metric { cosine, euclidean };

inline std::string to_string(Metric m) { return m == Metric::cosine ? "cosine" : "euclidean"; }

inline Metric parse_metric(const std::string& s) {
  if (s == "cosine") return Metric::cosine;
  if (s == "euclidean") return Metric::euclidean;
  throw ValidationError("unknown metric '" + s + "' (expected cosine or euclidean)");
}

struct CentroidAssigner {
  Tensor2 centroids;  // K×d
  Metric metric = Metric::cosine;
  std::string tag = "kmeans";  // kmeans | hierarchical

  std::size_t size() const noexcept { return centroids.rows(); }
  const Tensor2& concept_vectors() const noexcept { return centroids; }
  std::string method() const { return tag; }

  /// Nearest centroid per row; smallest index on ties.
  std::vector<std::size_t> assign(const Tensor2& z) const {
    detail::require(z.cols() == centroids.cols(), "assign: input width " + std::to_string(z.cols()) +
                                                      " does not match centroid dim " +
                                                      std::to_string(centroids.cols()));
    if (metric == Metric::cosine) return assign_nearest_cosine(z, centroids);
    std::vector<std::size_t> out(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) out[i] = detail::nearest_euclidean(z.row(i), centroids);
    return out;
  }

  void validate() const {
    detail::require(centroids.rows() >= 1, "assigner: K must be >= 1");
    detail::require(centroids.all_finite(), "assigner: centroids must be finite");
  }

  TensorBlob to_blob() const {
    TensorBlob blob;
    blob.put("centroids", centroids);
    blob.meta() = {{"kind", "centroid-assigner"}, {"method", tag}, {"metric", to_string(metric)}, {"K", size()}};
    return blob;
  }

  static CentroidAssigner from_blob(const TensorBlob& blob) {
    const auto& m = blob.meta();
    detail::require(m.value("kind", std::string{}) == "centroid-assigner", "checkpoint: not a baseline assigner");
    CentroidAssigner a;
    a.centroids = blob.get("centroids");
    a.metric = parse_metric(m.at("metric").get<std::string>());
    a.tag = m.at("method").get<std::string>();
    detail::require(m.at("K").get<std::size_t>() == a.size(), "checkpoint: K disagrees with centroid rows");
    a.validate();
    return a;
  }

  void save(const std::filesystem::path& path) const { to_blob().save(path); }
  static CentroidAssigner load(const std::filesystem::path& path) { return from_blob(TensorBlob::load(path)); }
};

static_assert(Assigner<CentroidAssigner>);

/// Member means per cluster label in [0, k).
inline Tensor2 cluster_means(const Tensor2& pool, std::span<const std::size_t> labels, std::size_t k) {
  Tensor2 means(k, pool.cols());
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++counts[labels[i]];
    auto dst = means.row(labels[i]);
    const auto x = pool.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += x[j];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (double& v : means.row(c)) v /= static_cast<double>(counts[c]);
  }
  return means;
}

// ---------------------------------------------------------------------------
// K-Means

inline CentroidAssigner kmeans_discover(const Tensor2& pool, std::size_t k, std::size_t iters, std::uint64_t seed,
                                        std::size_t restarts = 10) {
  const KMeansResult km = kmeans(pool, k, iters, seed, restarts);
  CentroidAssigner a;
  a.centroids = km.centroids;
  a.metric = Metric::cosine;
  a.tag = "kmeans";
  return a;
}

// ---------------------------------------------------------------------------
// Agglomerative Ward clustering

inline constexpr std::size_t kDefaultMemoryGuard = std::size_t{2} << 30;

struct Merge {
  std::size_t step = 0;
  std::size_t a = 0;  // cluster ids: points are 0..N-1, the merge at step s creates N+s
  std::size_t b = 0;
  double distance = 0.0;
  std::size_t size = 0;

  nlohmann::json to_json() const {
    return {{"step", step}, {"a", a}, {"b", b}, {"distance", distance}, {"size", size}};
  }
};

struct HierarchicalResult {
  CentroidAssigner assigner;
  std::vector<Merge> merges;          // full dendrogram, non-decreasing distance
  std::vector<std::size_t> labels;    // cut at K, per pool row; clusters ordered by smallest member
};

inline std::size_t ward_matrix_bytes(std::size_t n) { return n * n * sizeof(float); }

namespace detail {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
};

}  // namespace detail

/// Full Ward dendrogram over Euclidean distances (nearest-neighbour chain on
/// an N×N float32 matrix of squared Ward distances, Lance-Williams updates).
/// Throws MemoryGuardError before allocating when the matrix exceeds `memory_limit`.
inline std::vector<Merge> ward_linkage(const Tensor2& pool, std::size_t memory_limit = kDefaultMemoryGuard) {
  const std::size_t n = pool.rows();
  detail::require(n >= 1, "hierarchical: empty pool");
  const std::size_t need = ward_matrix_bytes(n);
  if (need > memory_limit) {
    throw MemoryGuardError("hierarchical: the O(N^2) distance matrix for N=" + std::to_string(n) + " needs " +
                               std::to_string(need) + " bytes (N*N*4), over the " + std::to_string(memory_limit) +
                               "-byte memory guard",
                           need, memory_limit);
  }
  std::vector<float, TrackingAllocator<float>> dist(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    dist[i * n + i] = 0.0f;
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto v = static_cast<float>(squared_distance(pool.row(i), pool.row(j)));
      dist[i * n + j] = v;
      dist[j * n + i] = v;
    }
  }

  std::vector<std::size_t> size(n, 1);
  std::vector<char> active(n, 1);
  std::vector<std::size_t> rep(n);  // a member point of the cluster held in each slot
  std::iota(rep.begin(), rep.end(), std::size_t{0});
  struct RawMerge {
    std::size_t rep_a, rep_b;
    double d2;
  };
  std::vector<RawMerge> raw;
  raw.reserve(n > 0 ? n - 1 : 0);
  std::vector<std::size_t> chain;
  chain.reserve(n);
  std::size_t remaining = n;
  std::size_t next_start = 0;

  while (remaining > 1) {
    if (chain.empty()) {
      while (!active[next_start]) ++next_start;
      chain.push_back(next_start);
    }
    const std::size_t a = chain.back();
    const std::size_t prev = chain.size() >= 2 ? chain[chain.size() - 2] : n;
    // Nearest active neighbour; the previous chain element wins ties so the chain terminates.
    std::size_t b = prev;
    float best = prev < n ? dist[a * n + prev] : std::numeric_limits<float>::infinity();
    const float* row = &dist[a * n];
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a || !active[j]) continue;
      if (row[j] < best) {
        best = row[j];
        b = j;
      }
    }
    if (b != prev) {
      chain.push_back(b);
      continue;
    }
    chain.pop_back();
    chain.pop_back();
    // Merge a and b into slot lo; slot hi retires.
    const std::size_t lo = std::min(a, b), hi = std::max(a, b);
    const double dab = best;
    raw.push_back({rep[lo], rep[hi], dab});
    const double na = static_cast<double>(size[lo]), nb = static_cast<double>(size[hi]);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == lo || k == hi) continue;
      const double nk = static_cast<double>(size[k]);
      const double v =
          ((na + nk) * dist[lo * n + k] + (nb + nk) * dist[hi * n + k] - nk * dab) / (na + nb + nk);
      const auto f = static_cast<float>(std::max(v, 0.0));
      dist[lo * n + k] = f;
      dist[k * n + lo] = f;
    }
    active[hi] = 0;
    size[lo] += size[hi];
    --remaining;
  }

  std::stable_sort(raw.begin(), raw.end(), [](const RawMerge& x, const RawMerge& y) { return x.d2 < y.d2; });
  detail::DisjointSets sets(n);
  std::vector<std::size_t> cluster_id(n), cluster_size(n, 1);
  std::iota(cluster_id.begin(), cluster_id.end(), std::size_t{0});
  std::vector<Merge> merges;
  merges.reserve(raw.size());
  for (std::size_t s = 0; s < raw.size(); ++s) {
    const std::size_t ra = sets.find(raw[s].rep_a), rb = sets.find(raw[s].rep_b);
    Merge m;
    m.step = s;
    m.a = std::min(cluster_id[ra], cluster_id[rb]);
    m.b = std::max(cluster_id[ra], cluster_id[rb]);
    m.distance = std::sqrt(raw[s].d2);
    m.size = cluster_size[ra] + cluster_size[rb];
    sets.parent[rb] = ra;
    cluster_id[ra] = n + s;
    cluster_size[ra] = m.size;
    merges.push_back(m);
  }
  return merges;
}

/// Flat labels after applying the first N−K merges; clusters are numbered by
/// their smallest member index.
inline std::vector<std::size_t> cut_dendrogram(std::size_t n, std::span<const Merge> merges, std::size_t k) {
  detail::require(k >= 1 && k <= n, "cut: K must lie in [1, N]");
  detail::require(merges.size() + 1 >= n || n == 0, "cut: dendrogram is incomplete");
  // Cluster id → a member point.
  std::vector<std::size_t> member(n + merges.size());
  std::iota(member.begin(), member.begin() + static_cast<std::ptrdiff_t>(n), std::size_t{0});
  detail::DisjointSets sets(n);
  for (std::size_t s = 0; s < n - k; ++s) {
    const std::size_t ra = sets.find(member[merges[s].a]), rb = sets.find(member[merges[s].b]);
    sets.parent[std::max(ra, rb)] = std::min(ra, rb);
    member[n + s] = std::min(ra, rb);
  }
  std::vector<std::size_t> labels(n);
  std::vector<std::size_t> root_label(n, n);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = sets.find(i);
    if (root_label[r] == n) root_label[r] = next++;
    labels[i] = root_label[r];
  }
  return labels;
}

inline HierarchicalResult hierarchical_discover(const Tensor2& pool, std::size_t k,
                                                std::size_t memory_limit = kDefaultMemoryGuard) {
  const std::size_t n = pool.rows();
  detail::require(k >= 1, "hierarchical: K must be >= 1");
  detail::require(n >= k, "hierarchical: need at least K=" + std::to_string(k) + " points, got " + std::to_string(n));
  HierarchicalResult res;
  res.merges = ward_linkage(pool, memory_limit);
  res.labels = cut_dendrogram(n, res.merges, k);
  res.assigner.centroids = cluster_means(pool, res.labels, k);
  res.assigner.metric = Metric::cosine;
  res.assigner.tag = "hierarchical";
  return res;
}

inline std::string dendrogram_to_jsonl(std::span<const Merge> merges) {
  std::string out;
  for (const auto& m : merges) out += m.to_json().dump() + "\n";
  return out;
}

}  // namespace vqlc
