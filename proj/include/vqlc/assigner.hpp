#pragma once

// Common surface of every concept-discovery method: a mapping from
// representation rows to concept ids plus one vector per concept.

#include <concepts>
#include <cstddef>
#include <string>
#include <vector>

#include "vqlc/tensor.hpp"

namespace vqlc {

template <class A>
concept Assigner = requires(const A& a, const Tensor2& h) {
  { a.assign(h) } -> std::convertible_to<std::vector<std::size_t>>;
  { a.concept_vectors() } -> std::convertible_to<const Tensor2&>;
  { a.method() } -> std::convertible_to<std::string>;
};

}  // namespace vqlc
