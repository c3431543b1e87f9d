#include <optional>

#include "clb/strategies/penalties.hpp"
#include "clb/strategies/replay_buffer.hpp"
#include "internal.hpp"

namespace clb::detail {

namespace {

/// Shuffled insertion of a unit's samples, as raw pixels or root latents.
void fill_buffer(TrainContext& ctx, ReplayBuffer& buffer, std::size_t unit, bool latents) {
  auto idx = ctx.units[unit].train_indices;
  ctx.strategy_rng.shuffle(idx);
  const auto& ds = ctx.data.train;
  if (!latents) {
    for (std::size_t i : idx) buffer.insert(ds.image(i), ds.labels[i], ctx.strategy_rng);
    return;
  }
  constexpr std::size_t kChunk = 256;
  const std::size_t w = LeNet<Real>::kHiddenWidth;
  std::vector<float> row(w);
  for (std::size_t start = 0; start < idx.size(); start += kChunk) {
    const auto part = std::span<const std::size_t>(idx).subspan(start, std::min(kChunk, idx.size() - start));
    const auto z = extract_latent(ctx.model, gather_images<Real>(ds, part));
    for (std::size_t n = 0; n < part.size(); ++n) {
      for (std::size_t j = 0; j < w; ++j) row[j] = static_cast<float>(z[n * w + j]);
      buffer.insert(row, ds.labels[part[n]], ctx.strategy_rng);
    }
  }
}

std::size_t half_up(std::size_t b) { return (b + 1) / 2; }

class NaiveRehearsal final : public Strategy {
 public:
  explicit NaiveRehearsal(const StrategyConfig& c) : config_(c) {}
  std::string name() const override { return "nr"; }
  void begin_unit(TrainContext& ctx, std::size_t unit) override {
    if (unit == 0) buffer_.emplace(config_.nr_buffer_for(ctx.scenario), ctx.data.train.shape.numel());
  }
  std::size_t new_batch_size(TrainContext& ctx, std::size_t) override {
    return buffer_->empty() ? ctx.batch_size : half_up(ctx.batch_size);
  }
  void train_step(TrainContext& ctx, std::size_t, std::span<const std::size_t> batch) override {
    if (buffer_->empty()) return supervised_step(ctx, batch);
    auto pixels = ctx.train_pixels(batch, true);
    auto labels = gather_labels(ctx.data.train, batch);
    const std::size_t per = buffer_->item_size();
    for (std::size_t slot : buffer_->sample(ctx.batch_size / 2, ctx.strategy_rng)) {
      const auto item = buffer_->item(slot);
      pixels.insert(pixels.end(), item.begin(), item.end());
      labels.push_back(buffer_->label(slot));
    }
    shuffle_rows(pixels, labels, per, ctx.strategy_rng);
    const auto x = pixels_to_tensor<Real>(pixels, ctx.data.train.shape);
    Tape<Real> tape;
    Tensor<Real> loss;
    {
      TapeScope<Real> scope(tape);
      loss = supervised_loss(ctx, ctx.model.forward(x, Mode::Train), labels);
    }
    ctx.optimise(tape, loss);
  }
  void end_unit(TrainContext& ctx, std::size_t unit) override { fill_buffer(ctx, *buffer_, unit, false); }

 private:
  StrategyConfig config_;
  std::optional<ReplayBuffer> buffer_;
};

class Agem final : public Strategy {
 public:
  explicit Agem(const StrategyConfig& c) : config_(c) {
    if (c.agem_memory < 2 || c.agem_reference_batch == 1) {
      throw ArgumentError("agem: memory and reference batch need at least 2 samples");
    }
  }
  std::string name() const override { return "agem"; }
  void begin_unit(TrainContext& ctx, std::size_t unit) override {
    if (unit == 0) memory_.emplace(config_.agem_memory, ctx.data.train.shape.numel());
  }
  void train_step(TrainContext& ctx, std::size_t, std::span<const std::size_t> batch) override {
    if (memory_->empty()) return supervised_step(ctx, batch);
    const std::size_t ref_size = config_.agem_reference_batch ? config_.agem_reference_batch : ctx.batch_size;
    std::vector<float> pixels;
    std::vector<std::size_t> labels;
    for (std::size_t slot : memory_->sample(std::min(ref_size, memory_->size()), ctx.strategy_rng)) {
      const auto item = memory_->item(slot);
      pixels.insert(pixels.end(), item.begin(), item.end());
      labels.push_back(memory_->label(slot));
    }
    const auto xr = pixels_to_tensor<Real>(pixels, ctx.data.train.shape);
    auto params = ctx.model.parameters();
    std::vector<Real> g_ref;
    {
      Tape<Real> tape;
      Tensor<Real> loss;
      {
        TapeScope<Real> scope(tape);
        loss = supervised_loss(ctx, ctx.model.forward(xr, Mode::Train), labels);
      }
      params.zero_grad();
      tape.backward(loss);
      g_ref = params.flat_grad();
    }
    supervised_step(ctx, batch, [&](ParameterSet<Real>& p) {
      bool degenerate = false;
      const auto g = p.flat_grad();
      p.set_flat_grad(agem_project<Real>(g, g_ref, &degenerate));
      if (degenerate) ++degenerate_steps_;
    });
  }
  void end_unit(TrainContext& ctx, std::size_t unit) override { fill_buffer(ctx, *memory_, unit, false); }
  std::vector<std::string> warnings() const override {
    if (degenerate_steps_ == 0) return {};
    return {"agem: reference gradient had zero norm on " + std::to_string(degenerate_steps_) +
            " steps; those updates were left unprojected"};
  }

 private:
  StrategyConfig config_;
  std::optional<ReplayBuffer> memory_;
  std::size_t degenerate_steps_ = 0;
};

class LatentReplay final : public Strategy {
 public:
  explicit LatentReplay(const StrategyConfig& c) : config_(c) {}
  std::string name() const override { return "lr"; }
  void begin_unit(TrainContext&, std::size_t unit) override {
    if (unit == 0) buffer_.emplace(config_.lr_buffer, LeNet<Real>::kHiddenWidth);
  }
  std::size_t new_batch_size(TrainContext& ctx, std::size_t) override {
    return buffer_->empty() ? ctx.batch_size : half_up(ctx.batch_size);
  }
  void train_step(TrainContext& ctx, std::size_t, std::span<const std::size_t> batch) override {
    if (buffer_->empty()) return supervised_step(ctx, batch);
    const std::size_t w = LeNet<Real>::kHiddenWidth;
    const auto x = pixels_to_tensor<Real>(ctx.train_pixels(batch, true), ctx.data.train.shape);
    Tensor<Real> fresh;
    {
      NoGradScope<Real> no_grad;
      fresh = ctx.model.features(x, Mode::Train);  // frozen root: eval statistics
    }
    std::vector<float> rows(fresh.values().begin(), fresh.values().end());
    auto labels = gather_labels(ctx.data.train, batch);
    for (std::size_t slot : buffer_->sample(ctx.batch_size / 2, ctx.strategy_rng)) {
      const auto item = buffer_->item(slot);
      rows.insert(rows.end(), item.begin(), item.end());
      labels.push_back(buffer_->label(slot));
    }
    shuffle_rows(rows, labels, w, ctx.strategy_rng);
    Tensor<Real> latent({labels.size(), w}, std::vector<Real>(rows.begin(), rows.end()));
    Tape<Real> tape;
    Tensor<Real> loss;
    {
      TapeScope<Real> scope(tape);
      loss = supervised_loss(ctx, ctx.model.classify_latent(latent), labels);
    }
    ctx.optimise(tape, loss);
  }
  void end_unit(TrainContext& ctx, std::size_t unit) override {
    if (unit == 0) ctx.model.freeze_root();
    fill_buffer(ctx, *buffer_, unit, true);
  }

 private:
  StrategyConfig config_;
  std::optional<ReplayBuffer> buffer_;
};

}  // namespace

std::unique_ptr<Strategy> make_nr(const StrategyConfig& c) { return std::make_unique<NaiveRehearsal>(c); }
std::unique_ptr<Strategy> make_agem(const StrategyConfig& c) { return std::make_unique<Agem>(c); }
std::unique_ptr<Strategy> make_lr(const StrategyConfig& c) { return std::make_unique<LatentReplay>(c); }

}  // namespace clb::detail
