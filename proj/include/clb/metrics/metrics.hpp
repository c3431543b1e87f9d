#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace clb {

/// Lower-triangular matrix of unit accuracies: at(i, j) is the test accuracy
/// on unit j after training unit i, defined for j <= i. Indices are 0-based.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t units);

  std::size_t size() const { return n_; }
  /// Throws ArgumentError for j > i, an index out of range, or a value
  /// outside [0, 1].
  void set(std::size_t i, std::size_t j, double value);
  double at(std::size_t i, std::size_t j) const;
  /// Row i, entries 0..i.
  std::span<const double> row(std::size_t i) const;
  /// Rows concatenated, row i contributing i+1 values.
  const std::vector<double>& packed() const { return values_; }
  static AccuracyMatrix from_packed(std::size_t units, std::vector<double> packed);

 private:
  std::size_t offset(std::size_t i) const { return i * (i + 1) / 2; }
  std::size_t n_ = 0;
  std::vector<double> values_;
};

/// Unweighted mean of per-unit accuracies. Throws ArgumentError on an empty
/// row or an entry outside [0, 1].
double compute_acc(std::span<const double> row);

/// Forgetting after 0-based step i >= 1:
/// sum_{j<i} (a_jj - a_ij) / i. Throws ArgumentError for i < 1.
double compute_cf(const AccuracyMatrix& a, std::size_t i);

/// Acc after every step, and CF with no value at step 0.
std::vector<double> acc_series(const AccuracyMatrix& a);
std::vector<std::optional<double>> cf_series(const AccuracyMatrix& a);

enum class Quadrant { ForgetsAndFails, StableButRigid, Overwrites, Ideal };

struct InterpretThresholds {
  double acc_high = 0.7;  // Acc >= acc_high counts as high
  double cf_low = 0.1;    // CF <= cf_low counts as low
};

Quadrant interpret(double acc, double cf, const InterpretThresholds& thresholds = {});
std::string to_string(Quadrant q);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};

MeanStd mean_std(std::span<const double> values);

/// Per-step mean/std across repetitions. Steps where some repetition has no
/// value (CF at step 0) aggregate only the values present.
struct MetricReport {
  std::vector<MeanStd> acc;
  std::vector<MeanStd> cf;
  /// Quadrant for the final step; CF of a single-unit run counts as 0.
  Quadrant final_label = Quadrant::StableButRigid;
};

MetricReport aggregate(const std::vector<std::vector<double>>& acc_runs,
                       const std::vector<std::vector<std::optional<double>>>& cf_runs,
                       const InterpretThresholds& thresholds = {});

}  // namespace clb
