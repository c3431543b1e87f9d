#include "clb/protocol/experiment.hpp"

#include <chrono>

#include "clb/core/errors.hpp"

namespace clb {

void validate(const ExperimentPlan& plan) {
  if (!plan.data) throw ArgumentError("plan: no dataset");
  if (plan.data->train.num_classes() < 2) throw ArgumentError("plan: dataset needs at least 2 classes");
  if (!is_strategy_name(plan.strategy)) throw ArgumentError("plan: unknown strategy '" + plan.strategy + "'");
  if (plan.iterations == 0) throw ArgumentError("plan: iterations must be >= 1");
  if (plan.batch_size < 2) throw ArgumentError("plan: batch size must be >= 2 for batch normalisation");
  if (!(plan.learning_rate > 0.0)) throw ArgumentError("plan: learning rate must be > 0");
  if (plan.ordering.classes.size() != plan.data->train.num_classes()) {
    throw ArgumentError("plan: ordering covers " + std::to_string(plan.ordering.classes.size()) + " of " +
                        std::to_string(plan.data->train.num_classes()) + " classes");
  }
}

namespace {

/// Walks a reshuffled permutation of the pool, reshuffling on wrap-around.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, Rng& rng) : pool_(std::move(pool)), rng_(rng) {
    if (pool_.empty()) throw ArgumentError("protocol: empty training pool");
    rng_.shuffle(pool_);
  }
  std::vector<std::size_t> next(std::size_t n) {
    std::vector<std::size_t> out;
    out.reserve(n);
    while (out.size() < n) {
      if (cursor_ == pool_.size()) {
        rng_.shuffle(pool_);
        cursor_ = 0;
      }
      out.push_back(pool_[cursor_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> pool_;
  Rng& rng_;
  std::size_t cursor_ = 0;
};

RunResult run(const ExperimentPlan& plan, Scenario scenario) {
  validate(plan);
  const auto start = std::chrono::steady_clock::now();
  const DatasetPair& data = *plan.data;
  const auto units = split_by_classes(data, plan.ordering.classes, scenario);
  const std::size_t c = data.train.num_classes();

  Rng root(plan.seed);
  Rng init = root.fork(), data_rng = root.fork(), strategy_rng = root.fork(), generator_rng = root.fork(),
      augment_rng = root.fork();
  LeNet<Real> model(data.train.shape, c, init.next());
  AdamState<Real> adam(model.parameters());
  AdamConfig adam_config;
  adam_config.learning_rate = plan.learning_rate;

  std::vector<std::size_t> unit_of_class(c, 0);
  for (std::size_t u = 0; u < units.size(); ++u) {
    for (std::size_t k : units[u].classes) unit_of_class[k] = u;
  }
  TrainContext ctx{model,
                   adam,
                   adam_config,
                   data,
                   units,
                   scenario,
                   plan.batch_size,
                   plan.iterations,
                   plan.augment,
                   plan.augment_options,
                   strategy_rng,
                   generator_rng,
                   augment_rng,
                   unit_of_class};
  auto strategy = make_strategy(plan.strategy, plan.strategy_config);

  RunResult result;
  result.matrix = AccuracyMatrix(units.size());
  for (std::size_t u = 0; u < units.size(); ++u) {
    strategy->begin_unit(ctx, u);
    BatchSampler sampler(strategy->training_pool(ctx, u), data_rng);
    for (std::size_t step = 0; step < plan.iterations; ++step) {
      const auto batch = sampler.next(strategy->new_batch_size(ctx, u));
      strategy->train_step(ctx, u, batch);
      if (plan.on_step) plan.on_step(u, step, model);
    }
    strategy->end_unit(ctx, u);
    for (std::size_t j = 0; j <= u; ++j) {
      const ClassMask mask = scenario == Scenario::TaskIL ? ctx.unit_mask(j) : ClassMask{};
      result.matrix.set(u, j, evaluate_accuracy(model, data.test, units[j].test_indices, mask));
    }
    result.wall_time_s.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    if (plan.on_unit_end) plan.on_unit_end(u, model);
  }
  result.acc = acc_series(result.matrix);
  result.cf = cf_series(result.matrix);
  result.warnings = strategy->warnings();
  result.final_parameters = model.parameters().snapshot();
  return result;
}

}  // namespace

RunResult run_task_il(const ExperimentPlan& plan) { return run(plan, Scenario::TaskIL); }
RunResult run_class_il(const ExperimentPlan& plan) { return run(plan, Scenario::ClassIL); }
RunResult run_experiment(const ExperimentPlan& plan) { return run(plan, plan.scenario); }

double evaluate_accuracy(LeNet<Real>& model, const LabeledDataset& ds, std::span<const std::size_t> indices,
                         const ClassMask& mask) {
  if (indices.empty()) throw ArgumentError("evaluate: empty test set");
  constexpr std::size_t kChunk = 256;
  NoGradScope<Real> no_grad;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < indices.size(); begin += kChunk) {
    const auto part = indices.subspan(begin, std::min(kChunk, indices.size() - begin));
    const auto logits = model.forward(gather_images<Real>(ds, part), Mode::Eval);
    const auto predicted = argmax_rows(logits, mask);
    for (std::size_t n = 0; n < part.size(); ++n) correct += predicted[n] == ds.labels[part[n]];
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

nlohmann::json result_json(const nlohmann::json& meta, const RunResult& r) {
  nlohmann::json cf = nlohmann::json::array();
  for (const auto& v : r.cf) cf.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return {{"meta", meta},
          {"units", r.matrix.size()},
          {"matrix", r.matrix.packed()},
          {"acc", r.acc},
          {"cf", cf},
          {"wall_time_s", r.wall_time_s}};
}

RunResult result_from_json(const nlohmann::json& j) {
  RunResult r;
  r.matrix = AccuracyMatrix::from_packed(j.at("units").get<std::size_t>(), j.at("matrix").get<std::vector<double>>());
  r.acc = j.at("acc").get<std::vector<double>>();
  for (const auto& v : j.at("cf")) r.cf.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
  if (j.contains("wall_time_s")) r.wall_time_s = j.at("wall_time_s").get<std::vector<double>>();
  return r;
}

}  // namespace clb
