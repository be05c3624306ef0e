#pragma once

// Judge rank tables: per-sample majority rank, per-method average rank and
// ordinal Krippendorff's alpha between evaluators.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqlc/error.hpp"

namespace vqlc {

inline constexpr int kMinRank = 1;
inline constexpr int kMaxRank = 3;

class RankTable {
 public:
  std::vector<std::string> samples;
  std::vector<std::string> evaluators;
  std::vector<std::string> methods;

  /// Records r(e)_{i,a}; new names are appended in first-seen order.
  void set(const std::string& sample, const std::string& evaluator, const std::string& method, int rank) {
    detail::require(rank >= kMinRank && rank <= kMaxRank,
                    "rank table: rank " + std::to_string(rank) + " outside {1,2,3} for sample " + sample);
    for (const std::string* s : {&sample, &evaluator, &method}) {
      detail::require(!s->empty() && s->find_first_of(",\n\r") == std::string::npos,
                      "rank table: name '" + *s + "' is empty or contains a comma or newline");
    }
    const std::size_t i = intern(samples, sample), e = intern(evaluators, evaluator), a = intern(methods, method);
    ranks_[{i, e, a}] = rank;
  }

  std::optional<int> get(std::size_t sample, std::size_t evaluator, std::size_t method) const {
    const auto it = ranks_.find({sample, evaluator, method});
    if (it == ranks_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t entries() const noexcept { return ranks_.size(); }

  /// Rank every evaluator gave to (sample, method), skipping absent votes.
  std::vector<int> votes(std::size_t sample, std::size_t method) const {
    std::vector<int> out;
    for (std::size_t e = 0; e < evaluators.size(); ++e) {
      if (auto r = get(sample, e, method)) out.push_back(*r);
    }
    return out;
  }

  /// CSV with header sample_id,evaluator,method,rank; rows in sample,evaluator,method order.
  std::string to_csv() const {
    std::string out = "sample_id,evaluator,method,rank\n";
    for (const auto& [key, r] : ranks_) {
      const auto& [i, e, a] = key;
      out += samples[i] + "," + evaluators[e] + "," + methods[a] + "," + std::to_string(r) + "\n";
    }
    return out;
  }

  static RankTable from_csv(const std::string& text, const std::string& origin = "rank table") {
    RankTable t;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool header = true;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) f.push_back(cell);
      const std::string where = origin + " line " + std::to_string(lineno);
      if (header) {
        header = false;
        detail::require(f == std::vector<std::string>{"sample_id", "evaluator", "method", "rank"},
                        where + ": expected header sample_id,evaluator,method,rank");
        continue;
      }
      detail::require(f.size() == 4, where + ": expected 4 fields, got " + std::to_string(f.size()));
      int r = 0;
      try {
        std::size_t used = 0;
        r = std::stoi(f[3], &used);
        detail::require(used == f[3].size(), where + ": rank is not an integer");
      } catch (const std::logic_error&) {
        throw ValidationError(where + ": rank '" + f[3] + "' is not an integer");
      }
      if (t.get_index(f[0], f[1], f[2])) throw ValidationError(where + ": duplicate entry");
      try {
        t.set(f[0], f[1], f[2], r);
      } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + e.what());
      }
    }
    return t;
  }

  static RankTable load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_csv(ss.str(), path);
  }

 private:
  static std::size_t intern(std::vector<std::string>& names, const std::string& s) {
    const auto it = std::find(names.begin(), names.end(), s);
    if (it != names.end()) return static_cast<std::size_t>(it - names.begin());
    names.push_back(s);
    return names.size() - 1;
  }

  bool get_index(const std::string& s, const std::string& e, const std::string& m) const {
    const auto find = [](const std::vector<std::string>& v, const std::string& x) {
      return static_cast<std::size_t>(std::find(v.begin(), v.end(), x) - v.begin());
    };
    const std::size_t i = find(samples, s), ei = find(evaluators, e), a = find(methods, m);
    return i < samples.size() && ei < evaluators.size() && a < methods.size() && get(i, ei, a).has_value();
  }

  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, int> ranks_;
};

/// The rank held by strictly more than half of the votes, if any.
inline std::optional<int> majority_rank(const std::vector<int>& votes) {
  std::map<int, std::size_t> count;
  for (int r : votes) ++count[r];
  for (const auto& [r, n] : count) {
    if (2 * n > votes.size()) return r;
  }
  return std::nullopt;
}

struct MethodRank {
  std::string method;
  std::optional<double> avg_rank;  // absent when no sample has a majority
  std::size_t n_valid = 0;
};

/// Per method, mean majority rank over samples where a majority exists.
inline std::vector<MethodRank> average_rank(const RankTable& t) {
  detail::require(!t.evaluators.empty(), "average_rank: table has no evaluators");
  std::vector<MethodRank> out;
  for (std::size_t a = 0; a < t.methods.size(); ++a) {
    MethodRank m;
    m.method = t.methods[a];
    double sum = 0.0;
    for (std::size_t i = 0; i < t.samples.size(); ++i) {
      if (auto r = majority_rank(t.votes(i, a))) {
        sum += *r;
        ++m.n_valid;
      }
    }
    if (m.n_valid) m.avg_rank = sum / static_cast<double>(m.n_valid);
    out.push_back(m);
  }
  return out;
}

inline nlohmann::json average_rank_json(const std::vector<MethodRank>& ranks) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& m : ranks) {
    j.push_back({{"method", m.method},
                 {"avg_rank", m.avg_rank ? nlohmann::json(*m.avg_rank) : nlohmann::json(nullptr)},
                 {"n_valid", m.n_valid}});
  }
  return j;
}

/// Ordinal Krippendorff's alpha. Units are (sample, method) pairs, coders are
/// evaluators; units with fewer than two votes are not pairable and skipped.
/// Returns 1.0 when expected disagreement is zero.
inline double krippendorff_alpha(const RankTable& t) {
  detail::require(t.evaluators.size() >= 2, "krippendorff: need at least 2 evaluators");
  detail::require(!t.samples.empty(), "krippendorff: need at least 1 item");
  constexpr int V = kMaxRank - kMinRank + 1;
  double o[V][V] = {};
  for (std::size_t i = 0; i < t.samples.size(); ++i) {
    for (std::size_t a = 0; a < t.methods.size(); ++a) {
      const auto v = t.votes(i, a);
      if (v.size() < 2) continue;
      const double w = 1.0 / static_cast<double>(v.size() - 1);
      for (std::size_t p = 0; p < v.size(); ++p) {
        for (std::size_t q = 0; q < v.size(); ++q) {
          if (p != q) o[v[p] - kMinRank][v[q] - kMinRank] += w;
        }
      }
    }
  }
  double nc[V] = {};
  double n = 0.0;
  for (int c = 0; c < V; ++c) {
    for (int k = 0; k < V; ++k) nc[c] += o[c][k];
    n += nc[c];
  }
  if (n <= 1.0) return 1.0;
  const auto delta2 = [&](int c, int k) {
    if (c > k) std::swap(c, k);
    double s = 0.0;
    for (int g = c; g <= k; ++g) s += nc[g];
    s -= (nc[c] + nc[k]) / 2.0;
    return s * s;
  };
  double dobs = 0.0, dexp = 0.0;
  for (int c = 0; c < V; ++c) {
    for (int k = 0; k < V; ++k) {
      const double d = delta2(c, k);
      dobs += o[c][k] * d;
      dexp += nc[c] * nc[k] * d;
    }
  }
  if (dexp == 0.0) return 1.0;
  return 1.0 - (n - 1.0) * dobs / dexp;
}

}  // namespace vqlc
