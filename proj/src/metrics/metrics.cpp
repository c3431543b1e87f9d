#include "clb/metrics/metrics.hpp"

#include <cmath>

#include "clb/core/errors.hpp"

namespace clb {

namespace {

void check_unit_interval(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ArgumentError(std::string(what) + ": accuracy " + std::to_string(v) + " outside [0, 1]");
  }
}

}  // namespace

AccuracyMatrix::AccuracyMatrix(std::size_t units) : n_(units), values_(units * (units + 1) / 2, 0.0) {}

void AccuracyMatrix::set(std::size_t i, std::size_t j, double value) {
  if (i >= n_ || j > i) {
    throw ArgumentError("accuracy matrix: (" + std::to_string(i) + "," + std::to_string(j) +
                        ") is outside the lower triangle of size " + std::to_string(n_));
  }
  check_unit_interval(value, "accuracy matrix");
  values_[offset(i) + j] = value;
}

double AccuracyMatrix::at(std::size_t i, std::size_t j) const {
  if (i >= n_ || j > i) {
    throw ArgumentError("accuracy matrix: (" + std::to_string(i) + "," + std::to_string(j) +
                        ") is outside the lower triangle");
  }
  return values_[offset(i) + j];
}

std::span<const double> AccuracyMatrix::row(std::size_t i) const {
  if (i >= n_) throw ArgumentError("accuracy matrix: row " + std::to_string(i) + " out of range");
  return std::span<const double>(values_).subspan(offset(i), i + 1);
}

AccuracyMatrix AccuracyMatrix::from_packed(std::size_t units, std::vector<double> packed) {
  AccuracyMatrix a(units);
  if (packed.size() != a.values_.size()) {
    throw ArgumentError("accuracy matrix: " + std::to_string(packed.size()) + " packed values for " +
                        std::to_string(units) + " units");
  }
  for (double v : packed) check_unit_interval(v, "accuracy matrix");
  a.values_ = std::move(packed);
  return a;
}

double compute_acc(std::span<const double> row) {
  if (row.empty()) throw ArgumentError("compute_acc: empty row");
  double s = 0.0;
  for (double v : row) {
    check_unit_interval(v, "compute_acc");
    s += v;
  }
  return s / static_cast<double>(row.size());
}

double compute_cf(const AccuracyMatrix& a, std::size_t i) {
  if (i < 1 || i >= a.size()) {
    throw ArgumentError("compute_cf: step " + std::to_string(i) + " needs at least one earlier unit");
  }
  double s = 0.0;
  for (std::size_t j = 0; j < i; ++j) s += a.at(j, j) - a.at(i, j);
  return s / static_cast<double>(i);
}

std::vector<double> acc_series(const AccuracyMatrix& a) {
  std::vector<double> out;
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(compute_acc(a.row(i)));
  return out;
}

std::vector<std::optional<double>> cf_series(const AccuracyMatrix& a) {
  std::vector<std::optional<double>> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.push_back(i == 0 ? std::nullopt : std::optional<double>(compute_cf(a, i)));
  }
  return out;
}

Quadrant interpret(double acc, double cf, const InterpretThresholds& t) {
  const bool high_acc = acc >= t.acc_high, low_cf = cf <= t.cf_low;
  if (high_acc) return low_cf ? Quadrant::Ideal : Quadrant::Overwrites;
  return low_cf ? Quadrant::StableButRigid : Quadrant::ForgetsAndFails;
}

std::string to_string(Quadrant q) {
  switch (q) {
    case Quadrant::ForgetsAndFails: return "forgets-and-fails";
    case Quadrant::StableButRigid: return "stable-but-rigid";
    case Quadrant::Overwrites: return "overwrites";
    case Quadrant::Ideal: return "ideal";
  }
  return "unknown";
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  r.count = values.size();
  if (values.empty()) return r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

MetricReport aggregate(const std::vector<std::vector<double>>& acc_runs,
                       const std::vector<std::vector<std::optional<double>>>& cf_runs,
                       const InterpretThresholds& thresholds) {
  MetricReport rep;
  if (acc_runs.empty()) return rep;
  const std::size_t steps = acc_runs.front().size();
  for (const auto& r : acc_runs) {
    if (r.size() != steps) throw ArgumentError("aggregate: repetitions have different step counts");
  }
  for (const auto& r : cf_runs) {
    if (r.size() != steps) throw ArgumentError("aggregate: CF series length differs from Acc");
  }
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<double> a, c;
    for (const auto& r : acc_runs) a.push_back(r[s]);
    for (const auto& r : cf_runs) {
      if (r[s]) c.push_back(*r[s]);
    }
    rep.acc.push_back(mean_std(a));
    rep.cf.push_back(mean_std(c));
  }
  if (steps > 0) {
    const double cf = rep.cf.back().count ? rep.cf.back().mean : 0.0;
    rep.final_label = interpret(rep.acc.back().mean, cf, thresholds);
  }
  return rep;
}

}  // namespace clb
