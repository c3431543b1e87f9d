#pragma once

#include <cstdint>

#include "clb/core/parameters.hpp"

namespace clb {

struct AdamConfig {
  double learning_rate = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  ParamSlots<T> m;
  ParamSlots<T> v;
  std::int64_t t = 0;

  AdamState() = default;
  explicit AdamState(const ParameterSet<T>& params) : m(params.zeros_like()), v(params.zeros_like()) {}
};

/// One bias-corrected Adam update in place, driven by the tensors' grads.
/// Parameters with requires_grad off are frozen and left untouched.
/// Throws NumericError naming the parameter on a non-finite gradient.
template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state, const AdamConfig& config);

/// Convenience owner of a parameter set and its optimiser state.
template <typename T>
class Adam {
 public:
  Adam(ParameterSet<T> params, AdamConfig config)
      : params_(std::move(params)), state_(params_), config_(config) {}

  void zero_grad() { params_.zero_grad(); }
  void step() { adam_step(params_, state_, config_); }

  ParameterSet<T>& parameters() { return params_; }
  const AdamState<T>& state() const { return state_; }
  const AdamConfig& config() const { return config_; }

 private:
  ParameterSet<T> params_;
  AdamState<T> state_;
  AdamConfig config_;
};

}  // namespace clb
