#pragma once

#include <array>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "clb/cli/config.hpp"
#include "clb/protocol/experiment.hpp"

namespace clb {

/// Column order of results.csv. Fixed.
inline constexpr std::array<const char*, 9> kResultsColumns{
    "method", "scenario", "ordering", "repetition", "step", "acc", "cf", "wall_time_s", "seed"};
inline constexpr std::array<const char*, 11> kSummaryColumns{
    "method", "scenario", "ordering", "step", "acc_mean", "acc_std", "cf_mean", "cf_std", "runs", "failed",
    "interpretation"};

/// One (strategy, scenario, ordering, repetition) run of a grid.
struct Cell {
  std::string method;
  Scenario scenario = Scenario::ClassIL;
  std::string ordering;
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
};

struct CellOutcome {
  Cell cell;
  bool ok = false;
  std::string error;
  RunResult result;
  double wall_time_s = 0.0;
};

/// Grid cells in output order: strategy, then scenario, ordering, repetition.
std::vector<Cell> plan_cells(const RunConfig& config);

/// Loads (or generates) the configured dataset, applying the class cap.
DatasetPair load_dataset(const RunConfig& config);

/// "<method>_<scenario>_<ordering>_r<repetition>.json"
std::string matrix_file_name(const Cell& cell);

/// results.csv rows (6 decimals; cf empty at step 1) for one outcome.
std::string results_rows(const CellOutcome& outcome);
/// summary.csv body for all outcomes, failed cells excluded from means.
std::string summary_csv(const std::vector<CellOutcome>& outcomes);

struct GridReport {
  std::vector<CellOutcome> outcomes;
  std::size_t failures = 0;
};

/// Runs every cell on `config.workers` threads and writes, under
/// config.output_dir: results.csv, summary.csv, matrices/*.json and
/// manifest.json. A failed cell is recorded and the grid carries on.
GridReport run_grid(const RunConfig& config, std::ostream& log);

}  // namespace clb
