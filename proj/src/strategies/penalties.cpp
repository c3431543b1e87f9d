#include "clb/strategies/penalties.hpp"

#include <cmath>

#include "clb/core/errors.hpp"

namespace clb {

template <typename T>
ParamSlots<T> estimate_fisher(ParameterSet<T>& params, std::size_t n,
                              const std::function<Tensor<T>(std::size_t)>& sample_nll) {
  if (n == 0) throw ArgumentError("estimate_fisher: no samples");
  std::vector<std::vector<double>> acc(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) acc[p].assign(params[p].tensor.numel(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    Tape<T> tape;
    Tensor<T> nll;
    {
      TapeScope<T> scope(tape);
      nll = sample_nll(i);
    }
    params.zero_grad();
    tape.backward(nll);
    for (std::size_t p = 0; p < params.size(); ++p) {
      const auto& t = params[p].tensor;
      if (!t.has_grad()) continue;
      const auto g = t.grad();
      for (std::size_t j = 0; j < g.size(); ++j) acc[p][j] += static_cast<double>(g[j]) * g[j];
    }
  }
  params.zero_grad();
  ParamSlots<T> out(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    out[p].resize(acc[p].size());
    for (std::size_t j = 0; j < acc[p].size(); ++j) out[p][j] = static_cast<T>(acc[p][j] / static_cast<double>(n));
  }
  return out;
}

template <typename T>
double quadratic_penalty(const ParameterSet<T>& params, const QuadraticAnchor<T>& anchor,
                         double coefficient, bool add_gradient) {
  if (anchor.weight.size() != params.size() || anchor.center.size() != params.size()) {
    throw ShapeError("penalty: anchor does not match the parameter set");
  }
  double total = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& t = params[p].tensor;
    const auto theta = t.values();
    const auto& w = anchor.weight[p];
    const auto& c = anchor.center[p];
    const bool grad = add_gradient && t.requires_grad();
    std::span<T> g = grad ? t.grad() : std::span<T>{};
    double s = 0.0;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double d = static_cast<double>(theta[j]) - c[j];
      s += w[j] * d * d;
      if (grad) g[j] += static_cast<T>(2.0 * coefficient * w[j] * d);
    }
    total += s;
  }
  return coefficient * total;
}

template <typename T>
double ewc_penalty(const ParameterSet<T>& params, const std::vector<QuadraticAnchor<T>>& tasks, double lambda,
                   bool add_gradient) {
  double total = 0.0;
  for (const auto& a : tasks) total += quadratic_penalty(params, a, 0.5 * lambda, add_gradient);
  return total;
}

template <typename T>
void ewc_online_update(ParamSlots<T>& running, const ParamSlots<T>& new_fisher, double gamma) {
  if (running.empty()) {
    running = new_fisher;
    for (auto& v : running) std::fill(v.begin(), v.end(), T(0));
  }
  if (running.size() != new_fisher.size()) throw ShapeError("ewc_online_update: slot count mismatch");
  for (std::size_t p = 0; p < running.size(); ++p) {
    if (running[p].size() != new_fisher[p].size()) throw ShapeError("ewc_online_update: slot size mismatch");
    for (std::size_t j = 0; j < running[p].size(); ++j) {
      running[p][j] = static_cast<T>(gamma * running[p][j] + new_fisher[p][j]);
    }
  }
}

template <typename T>
SiState<T>::SiState(const ParameterSet<T>& params, double damping)
    : path(params.zeros_like()),
      importance(params.zeros_like()),
      start(params.snapshot()),
      anchor(params.snapshot()),
      xi(damping) {}

template <typename T>
void si_accumulate(ParamSlots<T>& path, const ParamSlots<T>& grad, const ParamSlots<T>& delta) {
  for (std::size_t p = 0; p < path.size(); ++p) {
    for (std::size_t j = 0; j < path[p].size(); ++j) path[p][j] -= grad[p][j] * delta[p][j];
  }
}

template <typename T>
void si_consolidate(SiState<T>& s, const ParameterSet<T>& params) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto theta = params[p].tensor.values();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double d = static_cast<double>(theta[j]) - s.start[p][j];
      s.importance[p][j] = static_cast<T>(s.importance[p][j] + s.path[p][j] / (d * d + s.xi));
      s.path[p][j] = T(0);
    }
  }
  s.anchor = params.snapshot();
  s.start = s.anchor;
  s.has_anchor = true;
}

template <typename T>
double si_penalty(const ParameterSet<T>& params, const SiState<T>& state, double c, bool add_gradient) {
  if (!state.has_anchor) return 0.0;
  return quadratic_penalty(params, QuadraticAnchor<T>{state.importance, state.anchor}, c, add_gradient);
}

template <typename T>
std::vector<T> agem_project(std::span<const T> g, std::span<const T> g_ref, bool* degenerate) {
  if (g.size() != g_ref.size()) throw ShapeError("agem_project: gradient lengths differ");
  if (degenerate) *degenerate = false;
  std::vector<T> out(g.begin(), g.end());
  double dot = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    dot += static_cast<double>(g[i]) * g_ref[i];
    ref += static_cast<double>(g_ref[i]) * g_ref[i];
  }
  if (ref == 0.0) {
    if (degenerate) *degenerate = true;
    return out;
  }
  if (dot >= 0.0) return out;
  const double k = dot / ref;
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = static_cast<T>(g[i] - k * g_ref[i]);
  return out;
}

template <typename T>
std::vector<T> distill_targets(const Tensor<T>& teacher_logits, double temperature, const ClassMask& mask) {
  if (!(temperature > 0.0)) throw ArgumentError("distill_targets: temperature must be > 0");
  NoGradScope<T> no_grad;
  const auto p = softmax_with_temperature(teacher_logits, static_cast<T>(temperature), mask);
  return p.buffer();
}

template <typename T>
Tensor<T> distill_loss(const Tensor<T>& student_logits, std::span<const T> soft_targets, double temperature,
                       const ClassMask& mask) {
  if (!(temperature > 0.0)) throw ArgumentError("distill_loss: temperature must be > 0");
  return softmax_cross_entropy<T>(student_logits, soft_targets, mask, {},
                                  SoftmaxLossOptions{temperature, temperature * temperature});
}

#define CLB_INSTANTIATE(T)                                                                             \
  template ParamSlots<T> estimate_fisher<T>(ParameterSet<T>&, std::size_t,                              \
                                            const std::function<Tensor<T>(std::size_t)>&);              \
  template double quadratic_penalty<T>(const ParameterSet<T>&, const QuadraticAnchor<T>&, double, bool); \
  template double ewc_penalty<T>(const ParameterSet<T>&, const std::vector<QuadraticAnchor<T>>&, double, \
                                 bool);                                                                 \
  template void ewc_online_update<T>(ParamSlots<T>&, const ParamSlots<T>&, double);                    \
  template struct SiState<T>;                                                                           \
  template void si_accumulate<T>(ParamSlots<T>&, const ParamSlots<T>&, const ParamSlots<T>&);          \
  template void si_consolidate<T>(SiState<T>&, const ParameterSet<T>&);                                \
  template double si_penalty<T>(const ParameterSet<T>&, const SiState<T>&, double, bool);              \
  template std::vector<T> agem_project<T>(std::span<const T>, std::span<const T>, bool*);              \
  template std::vector<T> distill_targets<T>(const Tensor<T>&, double, const ClassMask&);              \
  template Tensor<T> distill_loss<T>(const Tensor<T>&, std::span<const T>, double, const ClassMask&);

CLB_INSTANTIATE(float)
CLB_INSTANTIATE(double)

}  // namespace clb
