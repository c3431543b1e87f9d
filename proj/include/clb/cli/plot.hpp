#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "clb/metrics/metrics.hpp"

namespace clb {

/// Learning-dynamics chart: x = training step (unit), one line per unit
/// showing its test accuracy from the step it is learnt to the last step.
std::string unit_curves_svg(const std::string& title, const AccuracyMatrix& mean_matrix);

struct AccSeries {
  std::string label;
  std::vector<double> acc;
};

/// Step-wise Acc of several runs on one chart.
std::string summary_svg(const std::string& title, const std::vector<AccSeries>& series);

/// Reads <dir>/matrices/*.json (checking every matrix a manifest lists is
/// present) and writes <dir>/plots/<method>_<scenario>.svg, matrices
/// averaged over orderings and repetitions, plus <dir>/plots/summary.svg.
/// Returns the written paths. Throws DataError on missing matrices.
std::vector<std::filesystem::path> write_plots(const std::filesystem::path& dir);

}  // namespace clb
