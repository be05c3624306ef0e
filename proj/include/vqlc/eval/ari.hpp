#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <utility>

#include "vqlc/error.hpp"

namespace vqlc {

/// Adjusted Rand index from the contingency table of two labelings.
/// Degenerate cases where both partitions are trivial in the same way score 1.
inline double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  detail::require(a.size() == b.size(), "ari: length mismatch (" + std::to_string(a.size()) + " vs " +
                                            std::to_string(b.size()) + ")");
  const auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  std::map<std::pair<std::size_t, std::size_t>, double> cell;
  std::map<std::size_t, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++cell[{a[i], b[i]}];
    ++rows[a[i]];
    ++cols[b[i]];
  }
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [_, n] : cell) index += pairs(n);
  for (const auto& [_, n] : rows) sa += pairs(n);
  for (const auto& [_, n] : cols) sb += pairs(n);
  const double total = pairs(static_cast<double>(a.size()));
  if (total == 0.0) return 1.0;
  const double expected = sa * sb / total;
  const double max_index = (sa + sb) / 2.0;
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace vqlc
