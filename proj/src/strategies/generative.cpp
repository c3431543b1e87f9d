#include <algorithm>
#include <optional>

#include "clb/core/errors.hpp"
#include "clb/models/vae.hpp"
#include "clb/strategies/penalties.hpp"
#include "internal.hpp"

namespace clb::detail {

namespace {

/// DGR / DGR+D replay generated images through the whole solver. LGR / LGR+D
/// freeze the root after the first unit and replay generated root
/// activations through the head. The latent generator works on activations
/// divided by their per-unit maximum over the first unit, clamped to [0,1].
class GenerativeReplay final : public Strategy {
 public:
  GenerativeReplay(const StrategyConfig& c, bool latent, bool distill)
      : config_(c), latent_(latent), distill_(distill) {}

  std::string name() const override {
    return std::string(latent_ ? "lgr" : "dgr") + (distill_ ? "-d" : "");
  }

  void begin_unit(TrainContext& ctx, std::size_t unit) override {
    if (unit == 0) {
      const std::size_t dim = latent_ ? LeNet<Real>::kHiddenWidth : ctx.data.train.shape.numel();
      const std::size_t hidden = latent_ ? config_.lgr_hidden : config_.dgr_hidden;
      gen_.emplace(dim, hidden, config_.vae_latent, ctx.generator_rng.next());
      gen_adam_ = AdamState<Real>(gen_->parameters());
      return;
    }
    if (!gen_old_ || !solver_old_) {
      throw ArgumentError(name() + ": no trained generator from the previous unit");
    }
    if (latent_ && !ctx.model.root_frozen()) throw ArgumentError(name() + ": root not frozen after unit 1");
  }

  void train_step(TrainContext& ctx, std::size_t unit, std::span<const std::size_t> batch) override {
    const double r = ratio(unit);
    auto b = load_batch(ctx, batch);
    if (!latent_) {
      if (unit == 0 || r == 1.0) {
        solver_step_plain(ctx, b);
        generator_step(ctx, flat(b.images), std::nullopt, r);
        return;
      }
      auto synth = vae_sample(*gen_old_, batch.size(), ctx.generator_rng);
      const auto& s = ctx.data.train.shape;
      const auto x_synth = reshape(synth, Shape{batch.size(), s.channels, s.height, s.width});
      Tensor<Real> teacher;
      {
        NoGradScope<Real> ng;
        teacher = solver_old_->forward(x_synth, Mode::Eval);
      }
      replay_solver_step(ctx, unit, r, [&] { return ctx.model.forward(b.images, Mode::Train); },
                         [&] { return ctx.model.forward(x_synth, Mode::Train); }, teacher, b.labels);
      generator_step(ctx, flat(b.images), synth, r);
      return;
    }

    if (unit == 0) return solver_step_plain(ctx, b);
    Tensor<Real> real_latent;
    {
      NoGradScope<Real> ng;
      real_latent = ctx.model.features(b.images, Mode::Train);  // frozen root: eval statistics
    }
    if (r == 1.0) {
      head_step_plain(ctx, real_latent, b.labels);
      generator_step(ctx, normalise(real_latent), std::nullopt, r);
      return;
    }
    auto synth = vae_sample(*gen_old_, batch.size(), ctx.generator_rng);
    const auto synth_latent = denormalise(synth);
    Tensor<Real> teacher;
    {
      NoGradScope<Real> ng;
      teacher = solver_old_->classify_latent(synth_latent);
    }
    replay_solver_step(ctx, unit, r, [&] { return ctx.model.classify_latent(real_latent); },
                       [&] { return ctx.model.classify_latent(synth_latent); }, teacher, b.labels);
    generator_step(ctx, normalise(real_latent), synth, r);
  }

  void end_unit(TrainContext& ctx, std::size_t unit) override {
    if (latent_ && unit == 0) {
      ctx.model.freeze_root();
      warm_up_latent_generator(ctx);
    }
    gen_old_.emplace(gen_->clone());
    solver_old_.emplace(ctx.model.clone());
  }

 private:
  double ratio(std::size_t unit) const { return config_.replay_ratio.value_or(1.0 / static_cast<double>(unit + 1)); }

  static Tensor<Real> flat(const Tensor<Real>& images) {
    NoGradScope<Real> ng;
    return reshape(images, Shape{images.dim(0), images.numel() / images.dim(0)});
  }

  Tensor<Real> normalise(const Tensor<Real>& latent) const {
    const std::size_t w = scale_.size();
    Tensor<Real> out(latent.shape());
    for (std::size_t i = 0; i < latent.numel(); ++i) {
      out[i] = std::clamp(latent[i] / scale_[i % w], Real(0), Real(1));
    }
    return out;
  }

  Tensor<Real> denormalise(const Tensor<Real>& unit_values) const {
    const std::size_t w = scale_.size();
    Tensor<Real> out(unit_values.shape());
    for (std::size_t i = 0; i < unit_values.numel(); ++i) out[i] = unit_values[i] * scale_[i % w];
    return out;
  }

  void solver_step_plain(TrainContext& ctx, const LoadedBatch& b) {
    Tape<Real> tape;
    Tensor<Real> loss;
    {
      TapeScope<Real> scope(tape);
      loss = supervised_loss(ctx, ctx.model.forward(b.images, Mode::Train), b.labels);
    }
    ctx.optimise(tape, loss);
  }

  void head_step_plain(TrainContext& ctx, const Tensor<Real>& latent, const std::vector<std::size_t>& labels) {
    Tape<Real> tape;
    Tensor<Real> loss;
    {
      TapeScope<Real> scope(tape);
      loss = supervised_loss(ctx, ctx.model.classify_latent(latent), labels);
    }
    ctx.optimise(tape, loss);
  }

  /// r * L(real) + (1 - r) * L(replayed), replay targets from the frozen
  /// previous solver: hard argmax labels, or temperature-softened
  /// distributions with distillation. Targets only cover classes seen before
  /// this unit; in Task-IL each replayed row is further restricted to the
  /// task its argmax label belongs to.
  template <typename RealLogits, typename SynthLogits>
  void replay_solver_step(TrainContext& ctx, std::size_t unit, double r, RealLogits real_logits,
                          SynthLogits synth_logits, const Tensor<Real>& teacher,
                          const std::vector<std::size_t>& labels) {
    const std::size_t c = ctx.num_classes();
    ClassMask seen(c, 0);
    for (std::size_t k : ctx.classes_before(unit)) seen[k] = 1;
    const auto pseudo = argmax_rows(teacher, seen);
    ClassMask replay_mask = ctx.scenario == Scenario::TaskIL ? ctx.row_masks(pseudo) : seen;
    Tape<Real> tape;
    Tensor<Real> loss;
    {
      TapeScope<Real> scope(tape);
      const auto real = supervised_loss(ctx, real_logits(), labels);
      const auto student = synth_logits();
      Tensor<Real> replay;
      if (distill_) {
        const auto targets = distill_targets(teacher, config_.distill_temperature, replay_mask);
        replay = distill_loss<Real>(student, targets, config_.distill_temperature, replay_mask);
      } else {
        const auto targets = one_hot<Real>(pseudo, c);
        replay = softmax_cross_entropy<Real>(student, targets, replay_mask, {});
      }
      loss = add(scale(real, static_cast<Real>(r)), scale(replay, static_cast<Real>(1.0 - r)));
    }
    ctx.optimise(tape, loss);
  }

  void generator_step(TrainContext& ctx, const Tensor<Real>& real, const std::optional<Tensor<Real>>& synth, double r) {
    auto params = gen_->parameters();
    Tape<Real> tape;
    Tensor<Real> loss;
    {
      TapeScope<Real> scope(tape);
      loss = vae_loss(*gen_, real, ctx.generator_rng).total;
      if (synth) {
        const auto replay = vae_loss(*gen_, *synth, ctx.generator_rng).total;
        loss = add(scale(loss, static_cast<Real>(r)), scale(replay, static_cast<Real>(1.0 - r)));
      }
    }
    params.zero_grad();
    tape.backward(loss);
    adam_step(params, gen_adam_, ctx.adam_config);
  }

  void warm_up_latent_generator(TrainContext& ctx) {
    const auto& idx = ctx.units[0].train_indices;
    const std::size_t w = LeNet<Real>::kHiddenWidth;
    std::vector<Real> all;
    {
      constexpr std::size_t kChunk = 256;
      for (std::size_t start = 0; start < idx.size(); start += kChunk) {
        const auto part = std::span<const std::size_t>(idx).subspan(start, std::min(kChunk, idx.size() - start));
        const auto z = extract_latent(ctx.model, gather_images<Real>(ctx.data.train, part));
        all.insert(all.end(), z.values().begin(), z.values().end());
      }
    }
    scale_.assign(w, Real(0));
    for (std::size_t n = 0; n < idx.size(); ++n) {
      for (std::size_t j = 0; j < w; ++j) scale_[j] = std::max(scale_[j], all[n * w + j]);
    }
    for (auto& s : scale_) {
      if (!(s > Real(1e-6))) s = Real(1);  // dead units stay at 0 after normalising
    }
    const std::size_t steps = config_.lgr_generator_warmup ? config_.lgr_generator_warmup : ctx.iterations;
    const std::size_t bs = std::min(ctx.batch_size, idx.size());
    for (std::size_t step = 0; step < steps; ++step) {
      Tensor<Real> batch({bs, w});
      for (std::size_t n = 0; n < bs; ++n) {
        const std::size_t row = ctx.generator_rng.index(idx.size());
        for (std::size_t j = 0; j < w; ++j) {
          batch[n * w + j] = std::clamp(all[row * w + j] / scale_[j], Real(0), Real(1));
        }
      }
      generator_step(ctx, batch, std::nullopt, 1.0);
    }
  }

  StrategyConfig config_;
  bool latent_, distill_;
  std::optional<VaeGenerator<Real>> gen_, gen_old_;
  AdamState<Real> gen_adam_;
  std::optional<LeNet<Real>> solver_old_;
  std::vector<Real> scale_;
};

}  // namespace

std::unique_ptr<Strategy> make_generative(const StrategyConfig& c, bool latent, bool distill) {
  return std::make_unique<GenerativeReplay>(c, latent, distill);
}

}  // namespace clb::detail
