#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace vqlc {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace detail

/// Seed for the named sub-stream of a run seed ("init", "sampling", "shuffle",
/// "judge-shuffle", ...). Sub-streams are independent of each other, so adding
/// draws to one never perturbs another.
constexpr std::uint64_t substream_seed(std::uint64_t seed, std::string_view name) noexcept {
  return detail::splitmix64(detail::splitmix64(seed) ^ detail::fnv1a(name));
}

inline Rng make_rng(std::uint64_t seed, std::string_view name) { return Rng(substream_seed(seed, name)); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

}  // namespace vqlc
