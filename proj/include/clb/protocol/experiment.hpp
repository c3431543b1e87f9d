#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clb/data/dataset.hpp"
#include "clb/metrics/metrics.hpp"
#include "clb/protocol/ordering.hpp"
#include "clb/strategies/strategy.hpp"
#include "json.hpp"

namespace clb {

struct ExperimentPlan {
  Scenario scenario = Scenario::ClassIL;
  std::string strategy = "lb";
  Ordering ordering;
  const DatasetPair* data = nullptr;
  bool augment = false;
  AugmentOptions augment_options;
  /// Optimiser steps per unit.
  std::size_t iterations = 500;
  std::size_t batch_size = 128;
  double learning_rate = 2.5e-4;
  std::uint64_t seed = 0;
  StrategyConfig strategy_config;

  /// Called after every optimiser step and after every unit's evaluation.
  std::function<void(std::size_t unit, std::size_t step, LeNet<Real>& model)> on_step;
  std::function<void(std::size_t unit, LeNet<Real>& model)> on_unit_end;
};

struct RunResult {
  AccuracyMatrix matrix;
  std::vector<double> acc;
  std::vector<std::optional<double>> cf;
  /// Seconds since the run started, taken after each unit's evaluation.
  std::vector<double> wall_time_s;
  std::vector<std::string> warnings;
  ParamSlots<Real> final_parameters;
};

/// Throws ArgumentError on an invalid plan.
void validate(const ExperimentPlan& plan);

/// The sequential protocol: for each unit train `iterations` steps with the
/// strategy, then evaluate every unit seen so far and fill row i of A.
/// Task-IL units are class pairs and predictions are masked to the
/// evaluated task; Class-IL units are single classes and the head is never
/// masked. All randomness comes from `plan.seed` through separate streams
/// for initialisation, batch sampling, strategy bookkeeping, generators and
/// augmentation.
RunResult run_task_il(const ExperimentPlan& plan);
RunResult run_class_il(const ExperimentPlan& plan);
RunResult run_experiment(const ExperimentPlan& plan);

/// Fraction of `indices` whose masked argmax equals the label.
double evaluate_accuracy(LeNet<Real>& model, const LabeledDataset& ds, std::span<const std::size_t> indices,
                         const ClassMask& mask);

/// {meta, matrix (row-major lower triangle), acc, cf (null at step 1)}.
nlohmann::json result_json(const nlohmann::json& meta, const RunResult& result);
/// Inverse of result_json for the matrix, acc and cf fields.
RunResult result_from_json(const nlohmann::json& j);

}  // namespace clb
