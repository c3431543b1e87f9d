#pragma once

#include <memory>

#include "clb/strategies/strategy.hpp"

namespace clb::detail {

struct LoadedBatch {
  Tensor<Real> images;
  std::vector<std::size_t> labels;
};

/// New-task samples as a tensor, augmented when the run enables it.
LoadedBatch load_batch(TrainContext& ctx, std::span<const std::size_t> indices);

/// Plain supervised step on a new batch: the whole of LB's update.
void supervised_step(TrainContext& ctx, std::span<const std::size_t> batch,
                     const std::function<void(ParameterSet<Real>&)>& adjust = {});

/// Row-shuffles a set of images and labels in place.
void shuffle_rows(std::vector<float>& pixels, std::vector<std::size_t>& labels, std::size_t row_size, Rng& rng);

/// Eval-mode logits over chunks without recording.
Tensor<Real> eval_logits(LeNet<Real>& model, const LabeledDataset& ds, std::span<const std::size_t> indices);

std::unique_ptr<Strategy> make_lb();
std::unique_ptr<Strategy> make_ub();
std::unique_ptr<Strategy> make_ewc(const StrategyConfig& c);
std::unique_ptr<Strategy> make_ewc_online(const StrategyConfig& c);
std::unique_ptr<Strategy> make_si(const StrategyConfig& c);
std::unique_ptr<Strategy> make_lwf(const StrategyConfig& c);
std::unique_ptr<Strategy> make_nr(const StrategyConfig& c);
std::unique_ptr<Strategy> make_agem(const StrategyConfig& c);
std::unique_ptr<Strategy> make_lr(const StrategyConfig& c);
std::unique_ptr<Strategy> make_generative(const StrategyConfig& c, bool latent, bool distill);

}  // namespace clb::detail
