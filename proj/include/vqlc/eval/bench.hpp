#pragma once

// Peak-memory scaling of concept discovery. Each (method, N) run starts from
// a pre-built synthetic dataset; the measured quantity is the increase over
// the memory held before discovery began.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqlc/baselines.hpp"
#include "vqlc/dataset.hpp"
#include "vqlc/error.hpp"
#include "vqlc/memory.hpp"
#include "vqlc/trainer.hpp"

namespace vqlc {

struct BenchConfig {
  std::vector<std::size_t> sizes = {1000, 2000, 4000, 8000};
  std::size_t dim = 256;
  std::vector<std::string> methods = {"hierarchical", "vqlc"};
  std::size_t memory_limit = kDefaultMemoryGuard;
  std::size_t clusters = 10;
  std::uint64_t seed = 0;
  std::size_t codebook_size = 64;  // K for vqlc and kmeans
  std::size_t kmeans_iters = 20;
  std::size_t vqlc_epochs = 1;
  bool poll_rss = true;  // off: allocation accounting only
  bool timing = true;    // off: seconds reported as null

  void validate() const {
    detail::require(!sizes.empty(), "bench: no sizes");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      detail::require(sizes[i] >= 1, "bench: sizes must be >= 1");
      detail::require(i == 0 || sizes[i] > sizes[i - 1], "bench: sizes must be strictly increasing");
    }
    detail::require(dim >= 2, "bench: dim must be >= 2");
    detail::require(clusters >= 1 && codebook_size >= 1, "bench: cluster and codebook sizes must be >= 1");
    for (const auto& m : methods) {
      detail::require(m == "hierarchical" || m == "vqlc" || m == "kmeans",
                      "bench: unknown method '" + m + "' (expected hierarchical, vqlc or kmeans)");
    }
  }

  nlohmann::json to_json() const {
    return {{"sizes", sizes},
            {"dim", dim},
            {"methods", methods},
            {"memory_limit", memory_limit},
            {"clusters", clusters},
            {"seed", seed},
            {"codebook_size", codebook_size},
            {"kmeans_iters", kmeans_iters},
            {"vqlc_epochs", vqlc_epochs},
            {"poll_rss", poll_rss},
            {"timing", timing}};
  }
};

struct BenchPoint {
  std::string method;
  std::size_t n = 0;
  std::size_t peak_bytes = 0;
  std::size_t tracked_bytes = 0;
  std::size_t rss_bytes = 0;
  std::optional<double> seconds;
  bool completed = false;
  std::string note;

  nlohmann::json to_json() const {
    return {{"method", method},
            {"n", n},
            {"peak_bytes", peak_bytes},
            {"tracked_bytes", tracked_bytes},
            {"rss_bytes", rss_bytes},
            {"seconds", seconds ? nlohmann::json(*seconds) : nlohmann::json(nullptr)},
            {"completed", completed},
            {"note", note}};
  }
};

struct BenchResult {
  BenchConfig config;
  std::vector<BenchPoint> points;
  std::map<std::string, std::optional<double>> slopes;

  nlohmann::json to_json() const {
    nlohmann::json series = nlohmann::json::array();
    for (const auto& p : points) series.push_back(p.to_json());
    nlohmann::json s = nlohmann::json::object();
    for (const auto& [m, v] : slopes) s[m] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    return {{"config", config.to_json()}, {"series", std::move(series)}, {"slopes", std::move(s)}};
  }

  std::string to_csv() const {
    std::string out = "method,n,peak_bytes,tracked_bytes,rss_bytes,seconds,completed\n";
    for (const auto& p : points) {
      out += p.method + "," + std::to_string(p.n) + "," + std::to_string(p.peak_bytes) + "," +
             std::to_string(p.tracked_bytes) + "," + std::to_string(p.rss_bytes) + "," +
             (p.seconds ? nlohmann::json(*p.seconds).dump() : std::string()) + "," + (p.completed ? "true" : "false") +
             "\n";
    }
    return out;
  }
};

/// Least-squares slope of log(y) against log(x); needs two distinct x values.
inline std::optional<double> loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= 0.0 || y[i] <= 0.0) return std::nullopt;
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) return std::nullopt;
  return sxy / sxx;
}

/// Runs one discovery method over all rows of `ds`.
inline void run_discovery(const std::string& method, const ActivationDataset& ds, const BenchConfig& cfg) {
  if (method == "hierarchical") {
    (void)hierarchical_discover(ds.representations, cfg.clusters, cfg.memory_limit);
  } else if (method == "kmeans") {
    (void)kmeans_discover(ds.representations, cfg.codebook_size, cfg.kmeans_iters, cfg.seed, 1);
  } else {
    TrainConfig tc;
    tc.codebook_size = cfg.codebook_size;
    tc.epochs = cfg.vqlc_epochs;
    tc.kmeans_iters = cfg.kmeans_iters;
    tc.kmeans_restarts = 1;
    tc.seed = cfg.seed;
    tc.val_fraction = 0.0;
    tc.top_k = std::min(tc.top_k, tc.codebook_size);
    tc.filter.min_token_frequency = 1;
    tc.filter.max_occurrences_per_token = std::numeric_limits<std::size_t>::max();
    const FitResult fit_result = fit(ds, tc);
    (void)fit_result.model.assign(ds.representations);
  }
}

inline BenchPoint measure_discovery(const std::string& method, const ActivationDataset& ds, const BenchConfig& cfg) {
  BenchPoint p;
  p.method = method;
  p.n = ds.num_tokens();
  auto& tracker = MemoryTracker::instance();
  tracker.reset_peak();
  const std::size_t base = tracker.live();
  std::optional<RssPoller> poller;
  if (cfg.poll_rss) poller.emplace();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    run_discovery(method, ds, cfg);
    p.completed = true;
  } catch (const MemoryGuardError& e) {
    p.completed = false;
    p.note = e.what();
  }
  const auto t1 = std::chrono::steady_clock::now();
  if (poller) {
    poller->stop();
    p.rss_bytes = poller->peak_delta();
  }
  p.tracked_bytes = tracker.peak() - base;
  p.peak_bytes = std::max(p.tracked_bytes, p.rss_bytes);
  if (cfg.timing) p.seconds = std::chrono::duration<double>(t1 - t0).count();
  if (p.completed && p.peak_bytes > cfg.memory_limit) {
    p.completed = false;
    p.note = "peak " + std::to_string(p.peak_bytes) + " bytes exceeded the " + std::to_string(cfg.memory_limit) +
             "-byte limit";
  }
  return p;
}

inline BenchResult bench_scalability(const BenchConfig& cfg) {
  cfg.validate();
  BenchResult res;
  res.config = cfg;
  for (std::size_t n : cfg.sizes) {
    const ActivationDataset ds = synthesize_dataset(n, cfg.dim, cfg.clusters, cfg.seed);
    for (const auto& m : cfg.methods) res.points.push_back(measure_discovery(m, ds, cfg));
  }
  for (const auto& m : cfg.methods) {
    std::vector<double> x, y;
    for (const auto& p : res.points) {
      if (p.method == m && p.completed) {
        x.push_back(static_cast<double>(p.n));
        y.push_back(static_cast<double>(p.peak_bytes));
      }
    }
    res.slopes[m] = loglog_slope(x, y);
  }
  return res;
}

}  // namespace vqlc
