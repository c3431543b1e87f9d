#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clb/core/ops.hpp"
#include "clb/core/parameters.hpp"
#include "clb/models/named_buffer.hpp"

namespace clb {

struct InputShape {
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t numel() const { return channels * height * width; }
  bool operator==(const InputShape&) const = default;
};

/// conv(20,5x5)-BN-ReLU-pool, conv(50,5x5)-BN-ReLU-pool, fc(500)-BN-ReLU,
/// linear head over every class.
///
/// Everything up to the 500-wide post-ReLU activation is the "root"; the
/// final linear layer is the "head". Latent replay stores root outputs.
template <typename T>
class LeNet {
 public:
  static constexpr std::size_t kConv1Filters = 20;
  static constexpr std::size_t kConv2Filters = 50;
  static constexpr std::size_t kHiddenWidth = 500;
  static constexpr std::size_t kKernel = 5;

  /// He-uniform weights, zero biases, BN gamma 1 / beta 0, all drawn from
  /// `seed`. Throws ArgumentError when the input cannot survive two
  /// conv+pool stages.
  LeNet(InputShape input, std::size_t num_classes, std::uint64_t seed);

  /// Logits [N, num_classes] for images [N,C,H,W].
  Tensor<T> forward(const Tensor<T>& images, Mode mode);
  /// Post-ReLU fc1 activations [N, 500]. A frozen root always runs in eval mode.
  Tensor<T> features(const Tensor<T>& images, Mode mode);
  /// Head applied to root activations.
  Tensor<T> classify_latent(const Tensor<T>& latent);

  ParameterSet<T> parameters();
  ParameterSet<T> root_parameters();
  ParameterSet<T> head_parameters();

  void freeze_root();
  bool root_frozen() const { return root_frozen_; }

  std::size_t parameter_count() const;
  std::size_t flatten_width() const { return flatten_width_; }
  std::size_t num_classes() const { return num_classes_; }
  const InputShape& input_shape() const { return input_; }
  std::string architecture() const;

  /// Deep copy, including BN running statistics and the frozen flag.
  LeNet clone() const;

  /// Parameters plus BN running statistics, in declaration order.
  std::vector<NamedBuffer<T>> named_buffers();

 private:
  LeNet() = default;

  InputShape input_;
  std::size_t num_classes_ = 0;
  std::size_t flatten_width_ = 0;
  bool root_frozen_ = false;

  Tensor<T> conv1_w_, conv1_b_, bn1_g_, bn1_b_;
  Tensor<T> conv2_w_, conv2_b_, bn2_g_, bn2_b_;
  Tensor<T> fc1_w_, fc1_b_, bn3_g_, bn3_b_;
  Tensor<T> head_w_, head_b_;
  BatchNormStats<T> bn1_, bn2_, bn3_;
};

/// Root activations computed in eval mode without recording.
template <typename T>
Tensor<T> extract_latent(LeNet<T>& model, const Tensor<T>& images);

}  // namespace clb
