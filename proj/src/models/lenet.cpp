#include "clb/models/lenet.hpp"

#include <cmath>

#include "clb/core/rng.hpp"

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
Tensor<T> filled(std::size_t n, T value) {
  return Tensor<T>(Shape{n}, value, true);
}

std::size_t after_stage(std::size_t extent, std::size_t kernel) {
  if (extent < kernel) return 0;
  return (extent - kernel + 1) / 2;
}

}  // namespace

template <typename T>
LeNet<T>::LeNet(InputShape input, std::size_t num_classes, std::uint64_t seed)
    : input_(input), num_classes_(num_classes), bn1_(kConv1Filters), bn2_(kConv2Filters), bn3_(kHiddenWidth) {
  if (num_classes == 0) throw ArgumentError("lenet: need at least one class");
  if (input.channels == 0) throw ArgumentError("lenet: need at least one input channel");
  const std::size_t h = after_stage(after_stage(input.height, kKernel), kKernel);
  const std::size_t w = after_stage(after_stage(input.width, kKernel), kKernel);
  if (h == 0 || w == 0 || input.height < 16 || input.width < 16) {
    throw ArgumentError("lenet: input " + std::to_string(input.height) + "x" + std::to_string(input.width) +
                        " too small for two 5x5 conv + 2x2 pool stages (need at least 16x16)");
  }
  flatten_width_ = kConv2Filters * h * w;

  Rng rng(seed);
  const std::size_t k2 = kKernel * kKernel;
  conv1_w_ = he_uniform<T>({kConv1Filters, input.channels, kKernel, kKernel}, input.channels * k2, rng);
  conv1_b_ = filled<T>(kConv1Filters, T(0));
  bn1_g_ = filled<T>(kConv1Filters, T(1));
  bn1_b_ = filled<T>(kConv1Filters, T(0));
  conv2_w_ = he_uniform<T>({kConv2Filters, kConv1Filters, kKernel, kKernel}, kConv1Filters * k2, rng);
  conv2_b_ = filled<T>(kConv2Filters, T(0));
  bn2_g_ = filled<T>(kConv2Filters, T(1));
  bn2_b_ = filled<T>(kConv2Filters, T(0));
  fc1_w_ = he_uniform<T>({flatten_width_, kHiddenWidth}, flatten_width_, rng);
  fc1_b_ = filled<T>(kHiddenWidth, T(0));
  bn3_g_ = filled<T>(kHiddenWidth, T(1));
  bn3_b_ = filled<T>(kHiddenWidth, T(0));
  head_w_ = he_uniform<T>({kHiddenWidth, num_classes}, kHiddenWidth, rng);
  head_b_ = filled<T>(num_classes, T(0));
}

template <typename T>
Tensor<T> LeNet<T>::features(const Tensor<T>& images, Mode mode) {
  if (images.rank() != 4 || images.dim(1) != input_.channels || images.dim(2) != input_.height ||
      images.dim(3) != input_.width) {
    throw ShapeError("lenet: expected [N," + std::to_string(input_.channels) + "," +
                     std::to_string(input_.height) + "," + std::to_string(input_.width) + "], got " +
                     shape_to_string(images.shape()));
  }
  const Mode root_mode = root_frozen_ ? Mode::Eval : mode;
  Tensor<T> x = conv2d(images, conv1_w_, conv1_b_);
  x = maxpool2d(relu(batchnorm(x, bn1_g_, bn1_b_, bn1_, root_mode)), 2);
  x = conv2d(x, conv2_w_, conv2_b_);
  x = maxpool2d(relu(batchnorm(x, bn2_g_, bn2_b_, bn2_, root_mode)), 2);
  x = reshape(x, Shape{images.dim(0), flatten_width_});
  x = dense(x, fc1_w_, fc1_b_);
  return relu(batchnorm(x, bn3_g_, bn3_b_, bn3_, root_mode));
}

template <typename T>
Tensor<T> LeNet<T>::classify_latent(const Tensor<T>& latent) {
  return dense(latent, head_w_, head_b_);
}

template <typename T>
Tensor<T> LeNet<T>::forward(const Tensor<T>& images, Mode mode) {
  return classify_latent(features(images, mode));
}

template <typename T>
ParameterSet<T> LeNet<T>::root_parameters() {
  ParameterSet<T> p;
  p.add("conv1.weight", conv1_w_);
  p.add("conv1.bias", conv1_b_);
  p.add("bn1.gamma", bn1_g_);
  p.add("bn1.beta", bn1_b_);
  p.add("conv2.weight", conv2_w_);
  p.add("conv2.bias", conv2_b_);
  p.add("bn2.gamma", bn2_g_);
  p.add("bn2.beta", bn2_b_);
  p.add("fc1.weight", fc1_w_);
  p.add("fc1.bias", fc1_b_);
  p.add("bn3.gamma", bn3_g_);
  p.add("bn3.beta", bn3_b_);
  return p;
}

template <typename T>
ParameterSet<T> LeNet<T>::head_parameters() {
  ParameterSet<T> p;
  p.add("head.weight", head_w_);
  p.add("head.bias", head_b_);
  return p;
}

template <typename T>
ParameterSet<T> LeNet<T>::parameters() {
  ParameterSet<T> p = root_parameters();
  p.append(head_parameters());
  return p;
}

template <typename T>
void LeNet<T>::freeze_root() {
  root_parameters().set_trainable(false);
  for (auto& p : root_parameters()) p.tensor.clear_grad();
  root_frozen_ = true;
}

template <typename T>
std::size_t LeNet<T>::parameter_count() const {
  const std::size_t k2 = kKernel * kKernel;
  return kConv1Filters * input_.channels * k2 + kConv1Filters * 3 +
         kConv2Filters * kConv1Filters * k2 + kConv2Filters * 3 +
         flatten_width_ * kHiddenWidth + kHiddenWidth * 3 +
         kHiddenWidth * num_classes_ + num_classes_;
}

template <typename T>
std::string LeNet<T>::architecture() const {
  return "lenet/v1/in=" + std::to_string(input_.channels) + "x" + std::to_string(input_.height) + "x" +
         std::to_string(input_.width) + "/classes=" + std::to_string(num_classes_) +
         "/bits=" + std::to_string(sizeof(T) * 8);
}

template <typename T>
LeNet<T> LeNet<T>::clone() const {
  LeNet<T> out;
  out.input_ = input_;
  out.num_classes_ = num_classes_;
  out.flatten_width_ = flatten_width_;
  out.root_frozen_ = root_frozen_;
  out.conv1_w_ = conv1_w_.clone();
  out.conv1_b_ = conv1_b_.clone();
  out.bn1_g_ = bn1_g_.clone();
  out.bn1_b_ = bn1_b_.clone();
  out.conv2_w_ = conv2_w_.clone();
  out.conv2_b_ = conv2_b_.clone();
  out.bn2_g_ = bn2_g_.clone();
  out.bn2_b_ = bn2_b_.clone();
  out.fc1_w_ = fc1_w_.clone();
  out.fc1_b_ = fc1_b_.clone();
  out.bn3_g_ = bn3_g_.clone();
  out.bn3_b_ = bn3_b_.clone();
  out.head_w_ = head_w_.clone();
  out.head_b_ = head_b_.clone();
  out.bn1_ = bn1_;
  out.bn2_ = bn2_;
  out.bn3_ = bn3_;
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> LeNet<T>::named_buffers() {
  std::vector<NamedBuffer<T>> out;
  for (auto& p : parameters()) out.push_back({p.name, p.tensor.shape(), &p.tensor.buffer()});
  out.push_back({"bn1.running_mean", {kConv1Filters}, &bn1_.running_mean});
  out.push_back({"bn1.running_var", {kConv1Filters}, &bn1_.running_var});
  out.push_back({"bn2.running_mean", {kConv2Filters}, &bn2_.running_mean});
  out.push_back({"bn2.running_var", {kConv2Filters}, &bn2_.running_var});
  out.push_back({"bn3.running_mean", {kHiddenWidth}, &bn3_.running_mean});
  out.push_back({"bn3.running_var", {kHiddenWidth}, &bn3_.running_var});
  return out;
}

template <typename T>
Tensor<T> extract_latent(LeNet<T>& model, const Tensor<T>& images) {
  NoGradScope<T> no_grad;
  return model.features(images, Mode::Eval);
}

template class LeNet<float>;
template class LeNet<double>;
template Tensor<float> extract_latent(LeNet<float>&, const Tensor<float>&);
template Tensor<double> extract_latent(LeNet<double>&, const Tensor<double>&);

}  // namespace clb
