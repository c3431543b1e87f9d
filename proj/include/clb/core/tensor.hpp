#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clb/core/errors.hpp"

namespace clb {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
};

/// Handle to a shared n-dimensional buffer. Copies alias; use clone() for a
/// deep copy.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : data_(std::make_shared<TensorStorage<T>>()) {
    data_->value.assign(shape_numel(shape), fill);
    data_->shape = std::move(shape);
    data_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : data_(std::make_shared<TensorStorage<T>>()) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_to_string(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    data_->shape = std::move(shape);
    data_->value = std::move(values);
    data_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return data_->shape.at(axis); }
  std::size_t numel() const { return data_->value.size(); }

  std::span<T> values() { return data_->value; }
  std::span<const T> values() const { return data_->value; }
  std::vector<T>& buffer() { return data_->value; }
  const std::vector<T>& buffer() const { return data_->value; }
  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor is not a scalar");
    return data_->value[0];
  }
  T& operator[](std::size_t i) { return data_->value[i]; }
  T operator[](std::size_t i) const { return data_->value[i]; }

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool on) { data_->requires_grad = on; }

  bool has_grad() const { return !data_->grad.empty(); }
  /// Gradient buffer, allocated as zeros on first access. The handle is
  /// const-callable because gradients belong to the shared storage.
  std::span<T> grad() const {
    ensure_grad();
    return data_->grad;
  }
  void ensure_grad() const {
    if (data_->grad.size() != data_->value.size()) {
      data_->grad.assign(data_->value.size(), T(0));
    }
  }
  void zero_grad() const {
    if (has_grad()) std::fill(data_->grad.begin(), data_->grad.end(), T(0));
  }
  void clear_grad() { data_->grad.clear(); }

  /// Deep copy of shape and values. The copy carries no gradient.
  Tensor clone() const {
    Tensor out(data_->shape, data_->value, data_->requires_grad);
    return out;
  }

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }
  const std::shared_ptr<TensorStorage<T>>& storage() const { return data_; }

 private:
  std::shared_ptr<TensorStorage<T>> data_;
};

/// Ordered record of differentiable operations. Backward replays the
/// entries in reverse recording order.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Tensor<T> output, BackwardFn fn) {
    entries_.push_back({std::move(output), std::move(fn)});
  }

  std::size_t size() const { return entries_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable tensor
  /// that requires gradients.
  void backward(Tensor<T> loss);

  void clear() { entries_.clear(); }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  struct Entry {
    Tensor<T> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

/// Makes `tape` the recording target for the current thread for the
/// lifetime of the scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active()) {
    Tape<T>::active() = &tape;
  }
  ~TapeScope() { Tape<T>::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording; ops run forward only.
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<T>::active()) { Tape<T>::active() = nullptr; }
  ~NoGradScope() { Tape<T>::active() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

void check_finite(std::span<const float> values, const std::string& what);
void check_finite(std::span<const double> values, const std::string& what);

template <typename T>
void Tape<T>::backward(Tensor<T> loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_to_string(loss.shape()));
  }
  check_finite(loss.values(), "loss");
  if (!loss.requires_grad()) return;
  loss.grad()[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->fn();
  }
}

}  // namespace clb
