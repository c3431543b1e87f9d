#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "clb/core/parameters.hpp"

namespace clb {

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-2;
  std::size_t samples = 50;  // 0 checks every coordinate
  std::uint64_t seed = 0;
  /// Denominator floor for the relative error, max(|a|, |n|, floor). Below
  /// the floor the comparison is effectively absolute, which absorbs the
  /// rounding noise of the perturbed loss values.
  double abs_floor = 0.0;
  /// When positive, a coordinate whose forward and backward one-sided slopes
  /// differ by more than this fraction sits on a ReLU/max-pool kink within
  /// +-step; it is skipped and another coordinate is drawn. 0 disables.
  double kink_tolerance = 0.0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

/// 64-bit: h = 1e-5, tolerance 1e-5. 32-bit: h = 1e-3, tolerance 1e-2, and
/// a denominator floor of 0.05 because a float loss near 2 moves in steps of
/// ~2.4e-7, i.e. ~1.2e-4 in the difference quotient.
template <typename T>
GradCheckOptions default_gradcheck_options() {
  GradCheckOptions o;
  if constexpr (sizeof(T) == 8) {
    o.step = 1e-5;
    o.tolerance = 1e-5;
    o.abs_floor = 1e-4;
  } else {
    o.step = 1e-3;
    o.tolerance = 1e-2;
    o.abs_floor = 5e-2;
  }
  o.kink_tolerance = 5e-2;
  return o;
}

/// Compares tape gradients of `loss_fn` against central differences on
/// sampled coordinates. `loss_fn` must be deterministic and return a scalar.
template <typename T>
GradCheckReport finite_difference_check(const std::function<Tensor<T>()>& loss_fn,
                                        ParameterSet<T>& params, const GradCheckOptions& options);

}  // namespace clb
