#include <algorithm>

#include "clb/strategies/penalties.hpp"
#include "internal.hpp"

namespace clb::detail {

namespace {

class LowerBound final : public Strategy {
 public:
  std::string name() const override { return "lb"; }
  void train_step(TrainContext& ctx, std::size_t, std::span<const std::size_t> batch) override {
    supervised_step(ctx, batch);
  }
};

class UpperBound final : public Strategy {
 public:
  std::string name() const override { return "ub"; }
  std::vector<std::size_t> training_pool(TrainContext& ctx, std::size_t unit) override {
    std::vector<std::size_t> pool;
    for (std::size_t u = 0; u <= unit; ++u) {
      pool.insert(pool.end(), ctx.units[u].train_indices.begin(), ctx.units[u].train_indices.end());
    }
    std::sort(pool.begin(), pool.end());
    return pool;
  }
  void train_step(TrainContext& ctx, std::size_t, std::span<const std::size_t> batch) override {
    supervised_step(ctx, batch);
  }
};

class Ewc final : public Strategy {
 public:
  explicit Ewc(const StrategyConfig& c) : lambda_(c.ewc_lambda), cap_(c.fisher_samples) {}
  std::string name() const override { return "ewc"; }
  void train_step(TrainContext& ctx, std::size_t, std::span<const std::size_t> batch) override {
    if (tasks_.empty() || lambda_ == 0.0) return supervised_step(ctx, batch);
    supervised_step(ctx, batch, [&](ParameterSet<Real>& p) { ewc_penalty(p, tasks_, lambda_, true); });
  }
  void end_unit(TrainContext& ctx, std::size_t unit) override {
    auto fisher = model_fisher(ctx, ctx.units[unit].train_indices, cap_);
    tasks_.push_back({std::move(fisher), ctx.model.parameters().snapshot()});
  }

 private:
  double lambda_;
  std::size_t cap_;
  std::vector<QuadraticAnchor<Real>> tasks_;
};

class EwcOnline final : public Strategy {
 public:
  explicit EwcOnline(const StrategyConfig& c)
      : lambda_(c.ewc_online_lambda), gamma_(c.ewc_online_gamma), cap_(c.fisher_samples) {}
  std::string name() const override { return "ewc-online"; }
  void train_step(TrainContext& ctx, std::size_t, std::span<const std::size_t> batch) override {
    if (anchor_.center.empty() || lambda_ == 0.0) return supervised_step(ctx, batch);
    supervised_step(ctx, batch, [&](ParameterSet<Real>& p) { quadratic_penalty(p, anchor_, 0.5 * lambda_, true); });
  }
  void end_unit(TrainContext& ctx, std::size_t unit) override {
    const auto fisher = model_fisher(ctx, ctx.units[unit].train_indices, cap_);
    ewc_online_update(anchor_.weight, fisher, gamma_);
    anchor_.center = ctx.model.parameters().snapshot();
  }

 private:
  double lambda_, gamma_;
  std::size_t cap_;
  QuadraticAnchor<Real> anchor_;
};

class Si final : public Strategy {
 public:
  explicit Si(const StrategyConfig& c) : c_(c.si_c), xi_(c.si_xi) {}
  std::string name() const override { return "si"; }
  void begin_unit(TrainContext& ctx, std::size_t unit) override {
    if (unit == 0) state_ = SiState<Real>(ctx.model.parameters(), xi_);
  }
  void train_step(TrainContext& ctx, std::size_t, std::span<const std::size_t> batch) override {
    auto params = ctx.model.parameters();
    const auto before = params.snapshot();
    ParamSlots<Real> grads = params.zeros_like();
    supervised_step(ctx, batch, [&](ParameterSet<Real>& p) {
      if (c_ != 0.0) si_penalty(p, state_, c_, true);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i].tensor.has_grad()) {
          const auto g = p[i].tensor.grad();
          std::copy(g.begin(), g.end(), grads[i].begin());
        }
      }
    });
    ParamSlots<Real> delta = params.snapshot();
    for (std::size_t i = 0; i < delta.size(); ++i) {
      for (std::size_t j = 0; j < delta[i].size(); ++j) delta[i][j] -= before[i][j];
    }
    si_accumulate(state_.path, grads, delta);
  }
  void end_unit(TrainContext& ctx, std::size_t) override { si_consolidate(state_, ctx.model.parameters()); }

 private:
  double c_, xi_;
  SiState<Real> state_;
};

class Lwf final : public Strategy {
 public:
  explicit Lwf(const StrategyConfig& c)
      : lambda_o_(c.lwf_lambda_o), temperature_(c.lwf_temperature), decay_(c.lwf_weight_decay) {}
  std::string name() const override { return "lwf"; }

  void begin_unit(TrainContext& ctx, std::size_t unit) override {
    if (unit == 0) return;
    // Old-model responses on the new unit's (unaugmented) inputs.
    const auto& idx = ctx.units[unit].train_indices;
    const auto logits = eval_logits(ctx.model, ctx.data.train, idx);
    const std::size_t c = ctx.num_classes();
    stored_.assign(ctx.data.train.size() * c, Real(0));
    for (std::size_t n = 0; n < idx.size(); ++n) {
      std::copy_n(logits.values().begin() + static_cast<std::ptrdiff_t>(n * c), c,
                  stored_.begin() + static_cast<std::ptrdiff_t>(idx[n] * c));
    }
  }

  void train_step(TrainContext& ctx, std::size_t unit, std::span<const std::size_t> batch) override {
    auto b = load_batch(ctx, batch);
    const std::size_t c = ctx.num_classes();
    Tape<Real> tape;
    Tensor<Real> loss;
    {
      TapeScope<Real> scope(tape);
      const auto logits = ctx.model.forward(b.images, Mode::Train);
      loss = supervised_loss(ctx, logits, b.labels);
      if (unit > 0) {
        Tensor<Real> teacher({batch.size(), c});
        for (std::size_t n = 0; n < batch.size(); ++n) {
          std::copy_n(stored_.begin() + static_cast<std::ptrdiff_t>(batch[n] * c), c,
                      teacher.values().begin() + static_cast<std::ptrdiff_t>(n * c));
        }
        // Class-IL: one old head over every earlier class. Task-IL: one old
        // head per earlier task, summed.
        std::vector<ClassMask> heads;
        if (ctx.scenario == Scenario::ClassIL) {
          ClassMask m(c, 0);
          for (std::size_t k : ctx.classes_before(unit)) m[k] = 1;
          heads.push_back(std::move(m));
        } else {
          for (std::size_t u = 0; u < unit; ++u) heads.push_back(ctx.unit_mask(u));
        }
        for (const auto& mask : heads) {
          const auto targets = distill_targets(teacher, temperature_, mask);
          const auto old_loss = softmax_cross_entropy<Real>(logits, targets, mask, {},
                                                            SoftmaxLossOptions{temperature_, 1.0});
          loss = add(loss, scale(old_loss, static_cast<Real>(lambda_o_)));
        }
      }
    }
    ctx.optimise(tape, loss, [&](ParameterSet<Real>& p) {
      if (decay_ == 0.0) return;
      for (auto& param : p) {
        if (!param.tensor.requires_grad()) continue;
        const auto v = param.tensor.values();
        const auto g = param.tensor.grad();
        for (std::size_t j = 0; j < v.size(); ++j) g[j] += static_cast<Real>(decay_) * v[j];
      }
    });
  }

 private:
  double lambda_o_, temperature_, decay_;
  std::vector<Real> stored_;
};

}  // namespace

std::unique_ptr<Strategy> make_lb() { return std::make_unique<LowerBound>(); }
std::unique_ptr<Strategy> make_ub() { return std::make_unique<UpperBound>(); }
std::unique_ptr<Strategy> make_ewc(const StrategyConfig& c) { return std::make_unique<Ewc>(c); }
std::unique_ptr<Strategy> make_ewc_online(const StrategyConfig& c) { return std::make_unique<EwcOnline>(c); }
std::unique_ptr<Strategy> make_si(const StrategyConfig& c) { return std::make_unique<Si>(c); }
std::unique_ptr<Strategy> make_lwf(const StrategyConfig& c) { return std::make_unique<Lwf>(c); }

}  // namespace clb::detail
