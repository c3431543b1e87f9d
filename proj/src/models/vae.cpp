#include "clb/models/vae.hpp"

#include <cmath>

namespace clb {

namespace {

template <typename T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape), T(0), true);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (T& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
Tensor<T> zeros_param(std::size_t n) {
  return Tensor<T>(Shape{n}, T(0), true);
}

template <typename T>
Tensor<T> as_rows(const Tensor<T>& batch) {
  if (batch.rank() == 2) return batch;
  const std::size_t n = batch.dim(0);
  return reshape(batch, Shape{n, batch.numel() / n});
}

}  // namespace

template <typename T>
VaeGenerator<T>::VaeGenerator(std::size_t data_dim, std::size_t hidden, std::size_t latent_dim,
                              std::uint64_t seed)
    : data_dim_(data_dim), hidden_(hidden), latent_dim_(latent_dim) {
  if (data_dim == 0 || hidden == 0 || latent_dim == 0) throw ArgumentError("vae: dimensions must be positive");
  Rng rng(seed);
  enc_w_ = he_uniform<T>({data_dim, hidden}, data_dim, rng);
  enc_b_ = zeros_param<T>(hidden);
  mu_w_ = he_uniform<T>({hidden, latent_dim}, hidden, rng);
  mu_b_ = zeros_param<T>(latent_dim);
  lv_w_ = he_uniform<T>({hidden, latent_dim}, hidden, rng);
  lv_b_ = zeros_param<T>(latent_dim);
  dec1_w_ = he_uniform<T>({latent_dim, hidden}, latent_dim, rng);
  dec1_b_ = zeros_param<T>(hidden);
  dec2_w_ = he_uniform<T>({hidden, data_dim}, hidden, rng);
  dec2_b_ = zeros_param<T>(data_dim);
}

template <typename T>
Tensor<T> VaeGenerator<T>::decode(const Tensor<T>& z) {
  if (z.rank() != 2 || z.dim(1) != latent_dim_) {
    throw ShapeError("vae: latent code must be [N," + std::to_string(latent_dim_) + "], got " + shape_to_string(z.shape()));
  }
  return sigmoid(dense(relu(dense(z, dec1_w_, dec1_b_)), dec2_w_, dec2_b_));
}

template <typename T>
typename VaeGenerator<T>::Pass VaeGenerator<T>::forward(const Tensor<T>& batch, Rng& rng) {
  Tensor<T> x = as_rows(batch);
  if (x.dim(1) != data_dim_) {
    throw ShapeError("vae: expected rows of " + std::to_string(data_dim_) + " values, got " + shape_to_string(batch.shape()));
  }
  Tensor<T> h = relu(dense(x, enc_w_, enc_b_));
  Pass pass;
  pass.mu = dense(h, mu_w_, mu_b_);
  pass.logvar = clamp(dense(h, lv_w_, lv_b_), -kLogVarBound, kLogVarBound);
  Tensor<T> eps(pass.mu.shape());
  for (T& e : eps.values()) e = static_cast<T>(rng.normal());
  Tensor<T> z = add(pass.mu, mul(exp(scale(pass.logvar, T(0.5))), eps));
  pass.reconstruction = decode(z);
  return pass;
}

template <typename T>
ParameterSet<T> VaeGenerator<T>::parameters() {
  ParameterSet<T> p;
  p.add("enc.weight", enc_w_);
  p.add("enc.bias", enc_b_);
  p.add("mu.weight", mu_w_);
  p.add("mu.bias", mu_b_);
  p.add("logvar.weight", lv_w_);
  p.add("logvar.bias", lv_b_);
  p.add("dec1.weight", dec1_w_);
  p.add("dec1.bias", dec1_b_);
  p.add("dec2.weight", dec2_w_);
  p.add("dec2.bias", dec2_b_);
  return p;
}

template <typename T>
VaeGenerator<T> VaeGenerator<T>::clone() const {
  VaeGenerator<T> out;
  out.data_dim_ = data_dim_;
  out.hidden_ = hidden_;
  out.latent_dim_ = latent_dim_;
  out.enc_w_ = enc_w_.clone();
  out.enc_b_ = enc_b_.clone();
  out.mu_w_ = mu_w_.clone();
  out.mu_b_ = mu_b_.clone();
  out.lv_w_ = lv_w_.clone();
  out.lv_b_ = lv_b_.clone();
  out.dec1_w_ = dec1_w_.clone();
  out.dec1_b_ = dec1_b_.clone();
  out.dec2_w_ = dec2_w_.clone();
  out.dec2_b_ = dec2_b_.clone();
  return out;
}

template <typename T>
std::string VaeGenerator<T>::architecture() const {
  return "vae/v1/data=" + std::to_string(data_dim_) + "/hidden=" + std::to_string(hidden_) +
         "/z=" + std::to_string(latent_dim_) + "/bits=" + std::to_string(sizeof(T) * 8);
}

template <typename T>
std::vector<NamedBuffer<T>> VaeGenerator<T>::named_buffers() {
  std::vector<NamedBuffer<T>> out;
  for (auto& p : parameters()) out.push_back({p.name, p.tensor.shape(), &p.tensor.buffer()});
  return out;
}

template <typename T>
VaeLoss<T> vae_loss(VaeGenerator<T>& gen, const Tensor<T>& batch, Rng& rng) {
  for (std::size_t i = 0; i < batch.numel(); ++i) {
    const T v = batch[i];
    if (!(v >= T(0) && v <= T(1))) {
      throw ArgumentError("vae_loss: input value outside [0,1] at index " + std::to_string(i));
    }
  }
  auto pass = gen.forward(batch, rng);
  Tensor<T> target = detach(as_rows(batch));
  Tensor<T> bce = binary_cross_entropy(pass.reconstruction, target);
  Tensor<T> kl = gaussian_kl(pass.mu, pass.logvar);
  VaeLoss<T> out;
  out.reconstruction = static_cast<double>(bce.item());
  out.kl = static_cast<double>(kl.item());
  out.total = add(bce, kl);
  return out;
}

template <typename T>
Tensor<T> vae_sample(VaeGenerator<T>& gen, std::size_t n, Rng& rng) {
  if (n == 0) throw ArgumentError("vae_sample: n must be at least 1");
  NoGradScope<T> no_grad;
  Tensor<T> z(Shape{n, gen.latent_dim()});
  for (T& v : z.values()) v = static_cast<T>(rng.normal());
  return gen.decode(z);
}

template <typename T>
Tensor<T> vae_sample(VaeGenerator<T>& gen, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return vae_sample(gen, n, rng);
}

template class VaeGenerator<float>;
template class VaeGenerator<double>;
template VaeLoss<float> vae_loss(VaeGenerator<float>&, const Tensor<float>&, Rng&);
template VaeLoss<double> vae_loss(VaeGenerator<double>&, const Tensor<double>&, Rng&);
template Tensor<float> vae_sample(VaeGenerator<float>&, std::size_t, Rng&);
template Tensor<double> vae_sample(VaeGenerator<double>&, std::size_t, Rng&);
template Tensor<float> vae_sample(VaeGenerator<float>&, std::size_t, std::uint64_t);
template Tensor<double> vae_sample(VaeGenerator<double>&, std::size_t, std::uint64_t);

}  // namespace clb
