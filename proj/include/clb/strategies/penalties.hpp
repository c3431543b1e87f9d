#pragma once

#include <functional>
#include <span>
#include <vector>

#include "clb/core/ops.hpp"
#include "clb/core/parameters.hpp"

namespace clb {

/// Diagonal Fisher estimate: mean over samples of the squared gradient of
/// `sample_nll(i)` (a scalar -log p(y_i | x_i)) for i in [0, n). Each call
/// runs its own tape; gradients of `params` are overwritten.
/// Throws ArgumentError for n == 0.
template <typename T>
ParamSlots<T> estimate_fisher(ParameterSet<T>& params, std::size_t n,
                              const std::function<Tensor<T>(std::size_t)>& sample_nll);

/// A quadratic well sum_i weight_i (theta_i - center_i)^2.
template <typename T>
struct QuadraticAnchor {
  ParamSlots<T> weight;
  ParamSlots<T> center;
};

/// coefficient * sum_i weight_i (theta_i - center_i)^2. When `add_gradient`
/// is set, the analytic gradient is added into the grads of parameters that
/// require them.
template <typename T>
double quadratic_penalty(const ParameterSet<T>& params, const QuadraticAnchor<T>& anchor,
                         double coefficient, bool add_gradient);

/// 1/2 lambda sum_tasks sum_i F_t,i (theta_i - theta*_t,i)^2.
template <typename T>
double ewc_penalty(const ParameterSet<T>& params, const std::vector<QuadraticAnchor<T>>& tasks,
                   double lambda, bool add_gradient = false);

/// F~ <- gamma F~ + new_F. An empty running value is taken as 0.
template <typename T>
void ewc_online_update(ParamSlots<T>& running, const ParamSlots<T>& new_fisher, double gamma);

template <typename T>
struct SiState {
  ParamSlots<T> path;        // w_k, reset after every unit
  ParamSlots<T> importance;  // Omega_k, summed over units
  ParamSlots<T> start;       // theta at the start of the current unit
  ParamSlots<T> anchor;      // theta* at the end of the previous unit
  double xi = 0.1;
  bool has_anchor = false;

  SiState() = default;
  SiState(const ParameterSet<T>& params, double damping);
};

/// w_k += -grad_k * delta_k for one optimiser step.
template <typename T>
void si_accumulate(ParamSlots<T>& path, const ParamSlots<T>& grad, const ParamSlots<T>& delta);

/// End of unit: Omega_k += w_k / ((theta_end - theta_start)^2 + xi), then
/// w reset, anchor and start set to theta_end.
template <typename T>
void si_consolidate(SiState<T>& state, const ParameterSet<T>& params);

/// c sum_k Omega_k (theta*_k - theta_k)^2; 0 before the first consolidation.
template <typename T>
double si_penalty(const ParameterSet<T>& params, const SiState<T>& state, double c,
                  bool add_gradient = false);

/// Projection that keeps the reference loss from increasing to first
/// order: g' = g - (g.g_ref / g_ref.g_ref) g_ref when g.g_ref < 0, else g.
/// A zero-norm g_ref returns g and sets *degenerate.
template <typename T>
std::vector<T> agem_project(std::span<const T> g, std::span<const T> g_ref, bool* degenerate = nullptr);

/// Temperature-T softmax of teacher logits (detached), masked entries 0.
template <typename T>
std::vector<T> distill_targets(const Tensor<T>& teacher_logits, double temperature, const ClassMask& mask = {});

/// -T^2 sum_c y~_c log softmax(z/T)_c, mean over rows.
template <typename T>
Tensor<T> distill_loss(const Tensor<T>& student_logits, std::span<const T> soft_targets, double temperature,
                       const ClassMask& mask = {});

}  // namespace clb
