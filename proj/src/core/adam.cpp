#include "clb/core/adam.hpp"

#include <cmath>

#include "clb/core/errors.hpp"

namespace clb {

template <typename T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state, const AdamConfig& config) {
  if (state.m.size() != params.size()) {
    state = AdamState<T>(params);
  }
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    if (!p.tensor.has_grad()) throw ArgumentError("adam: no gradient for parameter " + p.name);
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in parameter " + p.name);
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
  const T one_b1 = static_cast<T>(1.0 - config.beta1), one_b2 = static_cast<T>(1.0 - config.beta2);
  const T step = static_cast<T>(config.learning_rate / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(config.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    if (!tensor.requires_grad()) continue;
    auto g = tensor.grad();
    auto theta = tensor.values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = b1 * m[j] + one_b1 * g[j];
      v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
      theta[j] -= step * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
    }
  }
}

template void adam_step(ParameterSet<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step(ParameterSet<double>&, AdamState<double>&, const AdamConfig&);

}  // namespace clb
