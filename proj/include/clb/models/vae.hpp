#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clb/core/ops.hpp"
#include "clb/core/parameters.hpp"
#include "clb/core/rng.hpp"
#include "clb/models/named_buffer.hpp"

namespace clb {

/// Fully connected VAE: input -> hidden -> (mu, logvar) of `latent_dim`;
/// latent -> hidden -> sigmoid output of `output_dim` (= input_dim).
template <typename T>
class VaeGenerator {
 public:
  static constexpr T kLogVarBound = T(10);

  VaeGenerator(std::size_t data_dim, std::size_t hidden, std::size_t latent_dim, std::uint64_t seed);

  struct Pass {
    Tensor<T> reconstruction;
    Tensor<T> mu;
    Tensor<T> logvar;  // clamped to [-10, 10]
  };

  /// Encodes [N, data_dim], samples z with the reparameterisation trick,
  /// decodes.
  Pass forward(const Tensor<T>& batch, Rng& rng);
  Tensor<T> decode(const Tensor<T>& z);

  std::size_t data_dim() const { return data_dim_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t latent_dim() const { return latent_dim_; }

  ParameterSet<T> parameters();
  VaeGenerator clone() const;
  std::string architecture() const;
  std::vector<NamedBuffer<T>> named_buffers();

 private:
  VaeGenerator() = default;

  std::size_t data_dim_ = 0, hidden_ = 0, latent_dim_ = 0;
  Tensor<T> enc_w_, enc_b_, mu_w_, mu_b_, lv_w_, lv_b_;
  Tensor<T> dec1_w_, dec1_b_, dec2_w_, dec2_b_;
};

template <typename T>
struct VaeLoss {
  Tensor<T> total;
  double reconstruction = 0.0;
  double kl = 0.0;
};

/// Mean over the batch of summed BCE reconstruction plus
/// KL(N(mu, sigma^2) || N(0, I)). Rejects inputs outside [0, 1].
template <typename T>
VaeLoss<T> vae_loss(VaeGenerator<T>& gen, const Tensor<T>& batch, Rng& rng);

/// Decodes n draws of z ~ N(0, I); rows are [data_dim] in (0, 1).
template <typename T>
Tensor<T> vae_sample(VaeGenerator<T>& gen, std::size_t n, Rng& rng);
template <typename T>
Tensor<T> vae_sample(VaeGenerator<T>& gen, std::size_t n, std::uint64_t seed);

}  // namespace clb
