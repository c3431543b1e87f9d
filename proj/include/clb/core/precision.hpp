#pragma once

#include <string_view>

#ifndef CLB_REAL_BITS
#define CLB_REAL_BITS 32
#endif

namespace clb {

#if CLB_REAL_BITS == 64
using Real = double;
#elif CLB_REAL_BITS == 32
using Real = float;
#else
#error "CLB_REAL_BITS must be 32 or 64"
#endif

inline constexpr int kRealBits = CLB_REAL_BITS;

template <typename T>
constexpr std::string_view precision_name() {
  return sizeof(T) == 8 ? "float64" : "float32";
}

}  // namespace clb
