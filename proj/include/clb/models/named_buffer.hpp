#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "clb/core/tensor.hpp"

namespace clb {

/// A serialisable block: parameter values or non-trainable state.
template <typename T>
struct NamedBuffer {
  std::string name;
  Shape shape;
  std::vector<T>* values;
};

std::uint64_t fnv1a64(std::string_view text);

}  // namespace clb
