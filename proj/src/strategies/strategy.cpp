#include "clb/strategies/strategy.hpp"

#include <algorithm>

#include "clb/core/errors.hpp"
#include "clb/strategies/penalties.hpp"
#include "internal.hpp"

namespace clb {

std::string to_string(Family f) {
  switch (f) {
    case Family::Baseline: return "baseline";
    case Family::Regularisation: return "regularisation";
    case Family::Replay: return "replay";
  }
  return "unknown";
}

const std::vector<StrategyInfo>& strategy_catalogue() {
  static const std::vector<StrategyInfo> list{
      {"lb", Family::Baseline, "sequential fine-tuning (lower bound)", "-"},
      {"ub", Family::Baseline, "joint training on every unit seen so far (upper bound)", "-"},
      {"ewc", Family::Regularisation, "elastic weight consolidation", "lambda=5000"},
      {"ewc-online", Family::Regularisation, "EWC with a running Fisher", "lambda=5000, gamma=1"},
      {"si", Family::Regularisation, "synaptic intelligence", "c=1, xi=0.1"},
      {"lwf", Family::Regularisation, "learning without forgetting", "lambda_o=1, R=0.0005, T=2"},
      {"nr", Family::Replay, "naive rehearsal", "B_size=1500 (task-il), B_size=1000 (class-il)"},
      {"agem", Family::Replay, "averaged gradient episodic memory", "M_size=2000"},
      {"lr", Family::Replay, "latent replay", "B_size=1000"},
      {"dgr", Family::Replay, "deep generative replay", "G_FC=1600, G_OUT=input size"},
      {"dgr-d", Family::Replay, "deep generative replay with distillation", "G_FC=1600, G_OUT=input size, T=2"},
      {"lgr", Family::Replay, "latent generative replay", "G_FC=200, G_OUT=latent width (500)"},
      {"lgr-d", Family::Replay, "latent generative replay with distillation",
       "G_FC=200, G_OUT=latent width (500), T=2"},
  };
  return list;
}

bool is_strategy_name(const std::string& name) {
  const auto& l = strategy_catalogue();
  return std::any_of(l.begin(), l.end(), [&](const StrategyInfo& s) { return s.name == name; });
}

std::unique_ptr<Strategy> make_strategy(const std::string& name, const StrategyConfig& c) {
  using namespace detail;
  if (name == "lb") return make_lb();
  if (name == "ub") return make_ub();
  if (name == "ewc") return make_ewc(c);
  if (name == "ewc-online") return make_ewc_online(c);
  if (name == "si") return make_si(c);
  if (name == "lwf") return make_lwf(c);
  if (name == "nr") return make_nr(c);
  if (name == "agem") return make_agem(c);
  if (name == "lr") return make_lr(c);
  if (name == "dgr") return make_generative(c, false, false);
  if (name == "dgr-d") return make_generative(c, false, true);
  if (name == "lgr") return make_generative(c, true, false);
  if (name == "lgr-d") return make_generative(c, true, true);
  throw ArgumentError("unknown strategy '" + name + "'");
}

ClassMask TrainContext::unit_mask(std::size_t unit) const {
  ClassMask m(num_classes(), 0);
  for (std::size_t k : units.at(unit).classes) m[k] = 1;
  return m;
}

ClassMask TrainContext::row_masks(std::span<const std::size_t> labels) const {
  if (scenario == Scenario::ClassIL) return {};
  const std::size_t c = num_classes();
  ClassMask m(labels.size() * c, 0);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    for (std::size_t k : units[unit_of_class[labels[n]]].classes) m[n * c + k] = 1;
  }
  return m;
}

std::vector<std::size_t> TrainContext::classes_before(std::size_t unit) const {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < unit; ++u) out.insert(out.end(), units[u].classes.begin(), units[u].classes.end());
  return out;
}

std::vector<float> TrainContext::train_pixels(std::span<const std::size_t> indices, bool allow_augment) {
  const auto& ds = data.train;
  std::vector<float> out;
  out.reserve(indices.size() * ds.shape.numel());
  for (std::size_t i : indices) {
    const auto img = ds.image(i);
    out.insert(out.end(), img.begin(), img.end());
  }
  if (augment && allow_augment) clb::augment(out, ds.shape, augment_rng, augment_options);
  return out;
}

void TrainContext::optimise(Tape<Real>& tape, const Tensor<Real>& loss,
                            const std::function<void(ParameterSet<Real>&)>& adjust) {
  auto params = model.parameters();
  params.zero_grad();
  tape.backward(loss);
  if (adjust) adjust(params);
  adam_step(params, adam, adam_config);
}

Tensor<Real> supervised_loss(TrainContext& ctx, const Tensor<Real>& logits, std::span<const std::size_t> labels) {
  const auto targets = one_hot<Real>(labels, ctx.num_classes());
  return softmax_cross_entropy<Real>(logits, targets, ctx.row_masks(labels), {});
}

template <typename T>
Tensor<T> pixels_to_tensor(std::span<const float> pixels, const InputShape& shape) {
  const std::size_t per = shape.numel();
  if (pixels.size() % per != 0) throw ShapeError("pixels_to_tensor: not a whole number of images");
  std::vector<T> v(pixels.begin(), pixels.end());
  return Tensor<T>({pixels.size() / per, shape.channels, shape.height, shape.width}, std::move(v));
}

template Tensor<float> pixels_to_tensor<float>(std::span<const float>, const InputShape&);
template Tensor<double> pixels_to_tensor<double>(std::span<const float>, const InputShape&);

ParamSlots<Real> model_fisher(TrainContext& ctx, std::span<const std::size_t> indices, std::size_t cap) {
  std::vector<std::size_t> chosen(indices.begin(), indices.end());
  if (chosen.size() > cap) {
    ctx.strategy_rng.shuffle(chosen);
    chosen.resize(cap);
    std::sort(chosen.begin(), chosen.end());
  }
  auto params = ctx.model.parameters();
  const std::size_t c = ctx.num_classes();
  return estimate_fisher<Real>(params, chosen.size(), [&](std::size_t i) {
    const std::size_t idx = chosen[i];
    const auto x = gather_images<Real>(ctx.data.train, std::span<const std::size_t>(&idx, 1));
    const auto logits = ctx.model.forward(x, Mode::Eval);
    const std::size_t label = ctx.data.train.labels[idx];
    const ClassMask mask = ctx.row_masks(std::span<const std::size_t>(&label, 1));
    const std::size_t predicted = argmax_rows(logits, mask)[0];
    const auto target = one_hot<Real>(std::span<const std::size_t>(&predicted, 1), c);
    return softmax_cross_entropy<Real>(logits, target, mask, {});
  });
}

namespace detail {

LoadedBatch load_batch(TrainContext& ctx, std::span<const std::size_t> indices) {
  return {pixels_to_tensor<Real>(ctx.train_pixels(indices, true), ctx.data.train.shape),
          gather_labels(ctx.data.train, indices)};
}

void supervised_step(TrainContext& ctx, std::span<const std::size_t> batch,
                     const std::function<void(ParameterSet<Real>&)>& adjust) {
  auto b = load_batch(ctx, batch);
  Tape<Real> tape;
  Tensor<Real> loss;
  {
    TapeScope<Real> scope(tape);
    loss = supervised_loss(ctx, ctx.model.forward(b.images, Mode::Train), b.labels);
  }
  ctx.optimise(tape, loss, adjust);
}

void shuffle_rows(std::vector<float>& pixels, std::vector<std::size_t>& labels, std::size_t row_size, Rng& rng) {
  auto order = iota_indices(labels.size());
  rng.shuffle(order);
  std::vector<float> p(pixels.size());
  std::vector<std::size_t> l(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(order[i] * row_size), row_size,
                p.begin() + static_cast<std::ptrdiff_t>(i * row_size));
    l[i] = labels[order[i]];
  }
  pixels = std::move(p);
  labels = std::move(l);
}

Tensor<Real> eval_logits(LeNet<Real>& model, const LabeledDataset& ds, std::span<const std::size_t> indices) {
  constexpr std::size_t kChunk = 256;
  NoGradScope<Real> no_grad;
  const std::size_t c = model.num_classes();
  Tensor<Real> out({indices.size(), c});
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const auto part = indices.subspan(start, std::min(kChunk, indices.size() - start));
    const auto logits = model.forward(gather_images<Real>(ds, part), Mode::Eval);
    std::copy(logits.values().begin(), logits.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(start * c));
  }
  return out;
}

}  // namespace detail

}  // namespace clb
