#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "clb/core/tensor.hpp"

namespace clb {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

/// One buffer per parameter, aligned with a ParameterSet's order. Holds
/// auxiliary per-parameter state: Adam moments, Fisher diagonals, anchors.
template <typename T>
using ParamSlots = std::vector<std::vector<T>>;

/// Named, ordered handles onto trainable tensors. Copying the set copies
/// handles, not values.
template <typename T>
class ParameterSet {
 public:
  void add(std::string name, Tensor<T> tensor) {
    params_.push_back({std::move(name), std::move(tensor)});
  }
  void append(const ParameterSet& other) {
    params_.insert(params_.end(), other.params_.begin(), other.params_.end());
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void set_trainable(bool on) {
    for (auto& p : params_) p.tensor.set_requires_grad(on);
  }

  /// Deep copy of current values (an anchor).
  ParamSlots<T> snapshot() const {
    ParamSlots<T> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor.buffer());
    return out;
  }

  ParamSlots<T> zeros_like() const {
    ParamSlots<T> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.emplace_back(p.tensor.numel(), T(0));
    return out;
  }

  /// Gradients of all parameters concatenated (missing grads read as 0).
  std::vector<T> flat_grad() const {
    std::vector<T> out;
    out.reserve(scalar_count());
    for (const auto& p : params_) {
      if (p.tensor.has_grad()) {
        out.insert(out.end(), p.tensor.grad().begin(), p.tensor.grad().end());
      } else {
        out.insert(out.end(), p.tensor.numel(), T(0));
      }
    }
    return out;
  }

  void set_flat_grad(const std::vector<T>& flat) {
    std::size_t off = 0;
    for (auto& p : params_) {
      auto g = p.tensor.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = flat[off + i];
      off += g.size();
    }
  }

  /// Copies values from an equally shaped set.
  void assign_from(const ParameterSet& other) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      params_[i].tensor.buffer() = other.params_[i].tensor.buffer();
    }
  }

 private:
  std::vector<Parameter<T>> params_;
};

/// Largest |a - b| over all entries of two aligned slot sets.
template <typename T>
double max_abs_difference(const ParamSlots<T>& a, const ParamSlots<T>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      worst = std::max(worst, std::abs(static_cast<double>(a[i][j]) - static_cast<double>(b[i][j])));
    }
  }
  return worst;
}

}  // namespace clb
