#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clb/core/tensor.hpp"

namespace clb {

enum class Mode { Train, Eval };

template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormStats(std::size_t features = 0)
      : running_mean(features, T(0)), running_var(features, T(1)) {}
};

/// Class mask for softmax-type ops: empty (all classes), one entry per
/// class (shared by every row), or one entry per (row, class).
using ClassMask = std::vector<std::uint8_t>;

// Elementwise and shape ops. All record onto the active tape when any input
// requires gradients.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Stacks two batches along axis 0.
template <typename T> Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> detach(const Tensor<T>& a);

/// Valid (unpadded) stride-1 convolution. input [N,C,H,W], kernels
/// [K,C,kh,kw], bias [K] -> [N,K,H-kh+1,W-kw+1].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias);

/// Non-overlapping max pooling. Trailing rows/columns that do not fill a
/// window are dropped. Gradient goes to the first maximal cell in
/// row-major order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::size_t window = 2);

/// Per-feature batch normalisation over axis 1 ([N,F] or [N,C,H,W]).
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormStats<T>& stats, Mode mode);

/// input [N,D] x weight [D,M] + bias [M].
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> softmax_with_temperature(const Tensor<T>& logits, T temperature,
                                   const ClassMask& mask = {});

/// Mean over rows of -sum_c t_c log p_c, log clamped at p >= 1e-12.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probabilities, const Tensor<T>& targets);

struct SoftmaxLossOptions {
  double temperature = 1.0;
  /// Multiplies the loss (T^2 for distillation).
  double scale = 1.0;
};

/// Fused softmax + cross-entropy on logits. Returns
/// scale * sum_n w_n * (-sum_c t_nc log softmax(z_n / T)_c) over unmasked
/// classes. With empty `row_weights` every row weighs 1/N.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const T> targets,
                                const ClassMask& mask, std::span<const T> row_weights,
                                SoftmaxLossOptions options = {});

/// Mean over rows of the summed binary cross-entropy, logs clamped at 1e-12.
template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& probabilities, const Tensor<T>& targets);

/// Mean over rows of KL(N(mu, exp(logvar)) || N(0, I)).
template <typename T>
Tensor<T> gaussian_kl(const Tensor<T>& mu, const Tensor<T>& logvar);

/// Index of the largest unmasked entry per row.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits, const ClassMask& mask = {});

/// Expands a class mask to one byte per (row, class).
ClassMask expand_mask(const ClassMask& mask, std::size_t rows, std::size_t classes);

template <typename T>
std::vector<T> one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  std::vector<T> out(labels.size() * classes, T(0));
  for (std::size_t n = 0; n < labels.size(); ++n) out[n * classes + labels[n]] = T(1);
  return out;
}

}  // namespace clb
