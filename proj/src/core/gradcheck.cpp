#include "clb/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "clb/core/rng.hpp"

namespace clb {

template <typename T>
GradCheckReport finite_difference_check(const std::function<Tensor<T>()>& loss_fn,
                                        ParameterSet<T>& params, const GradCheckOptions& options) {
  params.zero_grad();
  for (auto& p : params) p.tensor.ensure_grad();
  {
    Tape<T> tape;
    Tensor<T> loss;
    {
      TapeScope<T> scope(tape);
      loss = loss_fn();
    }
    tape.backward(loss);
  }
  const std::vector<T> analytic = params.flat_grad();

  // (parameter, offset) of every coordinate, addressed by flat index.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  coords.reserve(analytic.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i].tensor.numel(); ++j) coords.emplace_back(i, j);
  }
  std::vector<std::size_t> picks = iota_indices(coords.size());
  const bool sampled = options.samples != 0 && options.samples < picks.size();
  if (sampled) {
    Rng rng(options.seed);
    rng.shuffle(picks);
  }
  const std::size_t wanted = sampled ? options.samples : picks.size();

  auto evaluate = [&]() {
    NoGradScope<T> no_grad;
    const double v = static_cast<double>(loss_fn().item());
    if (!std::isfinite(v)) throw NumericError("finite_difference_check: loss not finite at perturbed point");
    return v;
  };

  GradCheckReport report;
  const bool detect_kinks = options.kink_tolerance > 0.0;
  const double base = detect_kinks ? evaluate() : 0.0;
  const T h = static_cast<T>(options.step);
  for (std::size_t flat : picks) {
    if (report.checked == wanted) break;
    const auto [pi, j] = coords[flat];
    T& theta = params[pi].tensor.buffer()[j];
    const T saved = theta;
    theta = saved + h;
    const double plus = evaluate();
    theta = saved - h;
    const double minus = evaluate();
    theta = saved;
    // The realised steps can differ from h once rounded into T.
    const double up = static_cast<double>(saved + h) - static_cast<double>(saved);
    const double down = static_cast<double>(saved) - static_cast<double>(saved - h);
    if (detect_kinks) {
      const double fwd = (plus - base) / up, bwd = (base - minus) / down;
      const double scale = std::max({std::abs(fwd), std::abs(bwd), options.abs_floor});
      if (std::abs(fwd - bwd) > options.kink_tolerance * scale) {
        ++report.skipped_kinks;
        continue;
      }
    }
    const double numeric = (plus - minus) / (up + down);
    const double a = static_cast<double>(analytic[flat]);
    const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
    const double rel = denom == 0.0 ? 0.0 : std::abs(a - numeric) / denom;
    ++report.checked;
    if (rel >= report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter = params[pi].name;
      report.worst_index = j;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  // A check that mostly lands on non-differentiable points says nothing.
  report.passed = report.max_relative_error < options.tolerance && report.checked == wanted &&
                  report.skipped_kinks <= report.checked;
  return report;
}

template GradCheckReport finite_difference_check(const std::function<Tensor<float>()>&,
                                                 ParameterSet<float>&, const GradCheckOptions&);
template GradCheckReport finite_difference_check(const std::function<Tensor<double>()>&,
                                                 ParameterSet<double>&, const GradCheckOptions&);

}  // namespace clb
