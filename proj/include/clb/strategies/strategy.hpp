#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "clb/core/adam.hpp"
#include "clb/core/precision.hpp"
#include "clb/core/rng.hpp"
#include "clb/data/augment.hpp"
#include "clb/data/dataset.hpp"
#include "clb/models/lenet.hpp"

namespace clb {

/// Hyperparameters of every strategy. Zero-valued sizes mean "the
/// scenario default".
struct StrategyConfig {
  double ewc_lambda = 5000.0;
  double ewc_online_lambda = 5000.0;
  double ewc_online_gamma = 1.0;
  std::size_t fisher_samples = 1000;
  double si_c = 1.0;
  double si_xi = 0.1;
  double lwf_lambda_o = 1.0;
  double lwf_temperature = 2.0;
  double lwf_weight_decay = 5e-4;
  std::size_t nr_buffer = 0;  // Task-IL 1500, Class-IL 1000
  std::size_t agem_memory = 2000;
  std::size_t agem_reference_batch = 0;  // training batch size
  std::size_t lr_buffer = 1000;
  /// Mixing ratio for the generative strategies; unset means 1 / units seen.
  std::optional<double> replay_ratio;
  double distill_temperature = 2.0;
  std::size_t dgr_hidden = 1600;
  std::size_t lgr_hidden = 200;
  std::size_t vae_latent = 100;
  /// Generator steps on unit-1 latents after the LGR root is frozen;
  /// 0 means the unit iteration count.
  std::size_t lgr_generator_warmup = 0;

  std::size_t nr_buffer_for(Scenario s) const {
    return nr_buffer ? nr_buffer : (s == Scenario::TaskIL ? 1500 : 1000);
  }
};

enum class Family { Baseline, Regularisation, Replay };
std::string to_string(Family f);

struct StrategyInfo {
  std::string name;
  Family family;
  std::string description;
  std::string defaults;
};

/// The 13 strategies in presentation order.
const std::vector<StrategyInfo>& strategy_catalogue();
bool is_strategy_name(const std::string& name);

/// Everything a strategy may touch while one run is in progress.
struct TrainContext {
  LeNet<Real>& model;
  AdamState<Real>& adam;
  AdamConfig adam_config;
  const DatasetPair& data;
  const std::vector<Unit>& units;
  Scenario scenario;
  std::size_t batch_size;
  std::size_t iterations;
  bool augment;
  AugmentOptions augment_options;
  Rng& strategy_rng;
  Rng& generator_rng;
  Rng& augment_rng;
  /// Task-IL: unit index of every class. Unused in Class-IL.
  std::vector<std::size_t> unit_of_class;

  std::size_t num_classes() const { return data.train.num_classes(); }

  /// Per-class mask of one unit's classes.
  ClassMask unit_mask(std::size_t unit) const;
  /// Per-(row, class) masks selecting each label's task in Task-IL; empty in
  /// Class-IL where the head is never masked.
  ClassMask row_masks(std::span<const std::size_t> labels) const;
  /// Classes of units 0..unit-1.
  std::vector<std::size_t> classes_before(std::size_t unit) const;

  /// Train images as float pixels, augmented when enabled.
  std::vector<float> train_pixels(std::span<const std::size_t> indices, bool allow_augment);

  /// One Adam step on the model from `loss`, recorded on `tape`. `adjust`
  /// runs between backward and the update (penalty gradients, projection).
  void optimise(Tape<Real>& tape, const Tensor<Real>& loss,
                const std::function<void(ParameterSet<Real>&)>& adjust = {});
};

/// Unmasked (Class-IL) or task-masked (Task-IL) cross-entropy on hard labels.
Tensor<Real> supervised_loss(TrainContext& ctx, const Tensor<Real>& logits, std::span<const std::size_t> labels);

template <typename T>
Tensor<T> pixels_to_tensor(std::span<const float> pixels, const InputShape& shape);

/// A training policy. The protocol calls begin_unit, then `iterations` times
/// train_step with `new_batch_size` freshly sampled indices from
/// `training_pool`, then end_unit.
class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual std::string name() const = 0;
  virtual void begin_unit(TrainContext&, std::size_t /*unit*/) {}
  virtual std::vector<std::size_t> training_pool(TrainContext& ctx, std::size_t unit) {
    return ctx.units[unit].train_indices;
  }
  virtual std::size_t new_batch_size(TrainContext& ctx, std::size_t /*unit*/) { return ctx.batch_size; }
  virtual void train_step(TrainContext& ctx, std::size_t unit, std::span<const std::size_t> batch) = 0;
  virtual void end_unit(TrainContext&, std::size_t /*unit*/) {}
  /// Warnings raised during the run (e.g. degenerate A-GEM references).
  virtual std::vector<std::string> warnings() const { return {}; }
};

/// Throws ArgumentError naming the strategy when unknown.
std::unique_ptr<Strategy> make_strategy(const std::string& name, const StrategyConfig& config);

/// Fisher diagonal of the model on the given train indices (at most `cap`,
/// a seeded subset), labels taken as the model's own masked argmax, each
/// sample a separate eval-mode pass.
ParamSlots<Real> model_fisher(TrainContext& ctx, std::span<const std::size_t> indices, std::size_t cap);

}  // namespace clb
