// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers to run a subset.
#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "clb/cli/config.hpp"
#include "clb/cli/runner.hpp"
#include "clb/core/gradcheck.hpp"
#include "clb/core/ops.hpp"
#include "clb/core/precision.hpp"
#include "clb/core/rng.hpp"
#include "clb/data/synthetic.hpp"
#include "clb/metrics/metrics.hpp"
#include "clb/models/lenet.hpp"
#include "clb/protocol/experiment.hpp"
#include "clb/strategies/penalties.hpp"
#include "clb/strategies/replay_buffer.hpp"

using namespace clb;
namespace fs = std::filesystem;

namespace {

// Pinned run settings: the default synthetic set (8 classes, s = 1,
// sigma = 0.1, 32x32, 200/50 per class), ordering O1, seed 0.
constexpr std::size_t kIterations = 500;
constexpr std::size_t kBatch = 32;
constexpr std::uint64_t kSeed = 0;

// Tolerances.
constexpr double kLbAccTol = 0.02;        // 1: |Acc_i - 1/i|
constexpr double kLbCfTol = 0.05;         // 2: |CF_i - 1|
constexpr double kNrUbTol = 0.03;         // 3: |Acc_NR - Acc_UB| per step
constexpr double kRegAccTol = 0.03;       // 4: |Acc_i - 1/i|
constexpr double kTaskIlMargin = 0.05;    // 5: final Acc over LB
constexpr int kAgemPairs = 10000;         // 6
constexpr double kAgemDotFloor = -1e-9;   // 6: g'.g_ref lower bound
constexpr int kMetricMatrices = 1000;     // 7
constexpr double kMetricTol = 1e-12;      // 7
constexpr double kGradTol32 = 1e-2;       // 8
constexpr double kGradTol64 = 1e-5;       // 8
constexpr double kFreezeLambda = 1e9;     // 10
constexpr double kFreezeDrift = 1e-2;     // 10: max-norm drift during unit 2
constexpr int kBufferSequences = 500;     // 11
constexpr double kCalibrationAcc = 0.95;  // 13

struct Outcome {
  bool pass = false;
  std::string detail;
};

const DatasetPair& data() {
  static const DatasetPair d = gen_synthetic(SyntheticSpec{});
  return d;
}

ExperimentPlan plan(const std::string& strategy, Scenario s) {
  ExperimentPlan p;
  p.data = &data();
  p.strategy = strategy;
  p.scenario = s;
  p.ordering = make_ordering("o1", data().train.class_names);
  p.iterations = kIterations;
  p.batch_size = kBatch;
  p.seed = kSeed;
  return p;
}

// Runs are shared between criteria; each distinct plan is trained once.
const RunResult& cached(const std::string& key, const std::function<ExperimentPlan()>& make) {
  // std::map keeps references to earlier entries valid.
  static std::map<std::string, RunResult> cache;
  if (const auto it = cache.find(key); it != cache.end()) return it->second;
  const auto start = std::chrono::steady_clock::now();
  const auto& r = cache.emplace(key, run_experiment(make())).first->second;
  std::fprintf(stderr, "  (trained %s in %.0f s)\n", key.c_str(),
               std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return r;
}

const RunResult& class_il(const std::string& strategy) {
  return cached(strategy + "/class-il", [&] { return plan(strategy, Scenario::ClassIL); });
}
const RunResult& task_il(const std::string& strategy) {
  return cached(strategy + "/task-il", [&] { return plan(strategy, Scenario::TaskIL); });
}

std::string series(const std::vector<double>& v) {
  std::string out;
  for (double x : v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%s%.3f", out.empty() ? "" : " ", x);
    out += buf;
  }
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double worst_one_over_i(const std::vector<double>& acc) {
  double worst = 0;
  for (std::size_t i = 0; i < acc.size(); ++i) worst = std::max(worst, std::abs(acc[i] - 1.0 / (i + 1.0)));
  return worst;
}

Outcome lb_signature() {
  const auto& r = class_il("lb");
  const double worst = worst_one_over_i(r.acc);
  return {r.acc.size() == 8 && worst <= kLbAccTol, "Acc " + series(r.acc) + ", max |Acc-1/i| " + fmt("%.4f", worst)};
}

Outcome lb_forgetting() {
  const auto& r = class_il("lb");
  double worst = 0;
  std::vector<double> cf;
  for (std::size_t i = 1; i < r.cf.size(); ++i) {
    cf.push_back(*r.cf[i]);
    worst = std::max(worst, std::abs(*r.cf[i] - 1.0));
  }
  return {cf.size() == 7 && worst <= kLbCfTol, "CF " + series(cf) + ", max |CF-1| " + fmt("%.4f", worst)};
}

Outcome nr_matches_ub() {
  const auto& ub = class_il("ub");
  const auto& nr = cached("nr-full/class-il", [] {
    auto p = plan("nr", Scenario::ClassIL);
    p.strategy_config.nr_buffer = data().train.size();
    return p;
  });
  double worst = 0;
  for (std::size_t i = 0; i < ub.acc.size(); ++i) worst = std::max(worst, std::abs(ub.acc[i] - nr.acc[i]));
  return {ub.acc.size() == 8 && nr.acc.size() == 8 && worst <= kNrUbTol, "B_size " + std::to_string(data().train.size()) + ", NR " + series(nr.acc) + ", UB " +
                                 series(ub.acc) + ", max gap " + fmt("%.4f", worst)};
}

Outcome regularisation_collapse() {
  bool pass = true;
  std::string detail;
  for (const char* s : {"ewc", "ewc-online", "si", "lwf"}) {
    const auto& acc = class_il(s).acc;
    const double worst = worst_one_over_i(acc);
    pass = pass && acc.size() == 8 && worst <= kRegAccTol;
    detail += std::string(detail.empty() ? "" : ", ") + s + " max |Acc-1/i| " + fmt("%.4f", worst);
  }
  return {pass, detail};
}

Outcome task_il_ordering() {
  const double lb = task_il("lb").acc.back();
  const double nr = task_il("nr").acc.back();
  const double agem = task_il("agem").acc.back();
  return {nr >= lb + kTaskIlMargin && agem >= lb + kTaskIlMargin,
          "final Acc LB " + fmt("%.4f", lb) + ", NR " + fmt("%.4f", nr) + ", A-GEM " + fmt("%.4f", agem)};
}

Outcome agem_invariant() {
  Rng rng(606);
  double min_dot = INFINITY;
  int unchanged_violations = 0;
  for (int k = 0; k < kAgemPairs; ++k) {
    const std::size_t n = 1 + rng.index(64);
    std::vector<double> g(n), r(n);
    for (auto& v : g) v = rng.normal();
    for (auto& v : r) v = rng.normal();
    // Every 50th pair is exactly aligned.
    if (k % 50 == 0) r = g;
    const auto p = agem_project<double>(g, r);
    const double dot0 = std::inner_product(g.begin(), g.end(), r.begin(), 0.0);
    const double dot = std::inner_product(p.begin(), p.end(), r.begin(), 0.0);
    min_dot = std::min(min_dot, dot);
    if (dot0 >= 0 && p != g) ++unchanged_violations;
  }
  return {min_dot >= kAgemDotFloor && unchanged_violations == 0,
          std::to_string(kAgemPairs) + " pairs, min g'.g_ref " + fmt("%.3e", min_dot) + ", altered when g.g_ref >= 0: " +
              std::to_string(unchanged_violations)};
}

Outcome metric_oracle() {
  Rng rng(77);
  double worst = 0;
  for (int k = 0; k < kMetricMatrices; ++k) {
    const std::size_t n = 1 + rng.index(12);
    std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
    AccuracyMatrix m(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        a[i][j] = rng.uniform();
        m.set(i, j, a[i][j]);
      }
    }
    for (std::size_t i = 1; i <= n; ++i) {
      double acc = 0;
      for (std::size_t j = 1; j <= i; ++j) acc += a[i - 1][j - 1];
      worst = std::max(worst, std::abs(compute_acc(m.row(i - 1)) - acc / i));
      if (i < 2) continue;
      double cf = 0;
      for (std::size_t j = 1; j <= i - 1; ++j) cf += a[j - 1][j - 1] - a[i - 1][j - 1];
      worst = std::max(worst, std::abs(compute_cf(m, i - 1) - cf / (i - 1)));
    }
  }
  return {worst <= kMetricTol, std::to_string(kMetricMatrices) + " matrices, max error " + fmt("%.3e", worst)};
}

template <typename T>
GradCheckReport lenet_gradcheck(double tolerance) {
  LeNet<T> model(InputShape{1, 32, 32}, 8, 11);
  Rng rng(12);
  Tensor<T> images({4, 1, 32, 32});
  for (auto& v : images.values()) v = static_cast<T>(rng.uniform());
  const std::vector<std::size_t> labels{1, 2, 4, 6};
  const auto targets = one_hot<T>(labels, 8);
  auto params = model.parameters();
  auto opt = default_gradcheck_options<T>();
  opt.samples = 50;
  opt.seed = 13;
  opt.tolerance = tolerance;
  return finite_difference_check<T>(
      [&] { return softmax_cross_entropy<T>(model.forward(images, Mode::Train), targets, {}, {}); }, params, opt);
}

Outcome gradient_check() {
  const auto r32 = lenet_gradcheck<float>(kGradTol32);
  const auto r64 = lenet_gradcheck<double>(kGradTol64);
  return {r32.checked == 50 && r64.checked == 50 && r32.max_relative_error < kGradTol32 &&
              r64.max_relative_error < kGradTol64,
          "50 coordinates, 32-bit max rel " + fmt("%.3e", r32.max_relative_error) + ", 64-bit max rel " +
              fmt("%.3e", r64.max_relative_error)};
}

Outcome degeneracy() {
  const auto& lb = class_il("lb");
  const auto& ewc = cached("ewc-lambda0/class-il", [] {
    auto p = plan("ewc", Scenario::ClassIL);
    p.strategy_config.ewc_lambda = 0.0;
    return p;
  });
  const auto& si = cached("si-c0/class-il", [] {
    auto p = plan("si", Scenario::ClassIL);
    p.strategy_config.si_c = 0.0;
    return p;
  });
  const auto& dgr = cached("dgr-r1/class-il", [] {
    auto p = plan("dgr", Scenario::ClassIL);
    p.strategy_config.replay_ratio = 1.0;
    return p;
  });
  auto same = [&](const RunResult& r) { return r.final_parameters == lb.final_parameters && r.acc == lb.acc; };
  const bool e = same(ewc), s = same(si), d = same(dgr);
  return {e && s && d, std::string("bit-identical to LB: EWC(lambda=0) ") + (e ? "yes" : "no") + ", SI(c=0) " +
                           (s ? "yes" : "no") + ", DGR(r=1) " + (d ? "yes" : "no")};
}

struct StopRun {};

Outcome near_freeze() {
  auto p = plan("ewc", Scenario::TaskIL);
  p.strategy_config.ewc_lambda = kFreezeLambda;
  ParamSlots<Real> anchor;
  double drift = 0;
  p.on_unit_end = [&](std::size_t unit, LeNet<Real>& m) {
    if (unit == 0) anchor = m.parameters().snapshot();
    if (unit == 1) throw StopRun{};
  };
  p.on_step = [&](std::size_t unit, std::size_t, LeNet<Real>& m) {
    if (unit == 1) drift = std::max(drift, max_abs_difference(m.parameters().snapshot(), anchor));
  };
  try {
    run_experiment(p);
  } catch (const StopRun&) {
  }
  return {drift < kFreezeDrift, "Task-IL, lambda " + fmt("%.0e", kFreezeLambda) + ", max |theta - theta*| " +
                                    fmt("%.3e", drift) + " (bound " + fmt("%.0e", kFreezeDrift) + ")"};
}

Outcome buffer_balance() {
  Rng rng(31);
  std::size_t worst = 0;
  for (int t = 0; t < kBufferSequences; ++t) {
    const std::size_t k = 2 + rng.index(9);
    const std::size_t cap = k + rng.index(100);
    ReplayBuffer buf(cap, 1);
    std::vector<std::size_t> stream;
    for (std::size_t c = 0; c < k; ++c) stream.insert(stream.end(), cap + rng.index(2 * cap), c);
    // Alternate between unit-by-unit insertion and a random interleaving.
    if (t % 2) rng.shuffle(stream);
    for (std::size_t label : stream) {
      const float v = 0.0f;
      buf.insert(std::span<const float>(&v, 1), label, rng);
    }
    const auto counts = buf.class_counts();
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    worst = std::max(worst, *hi - *lo);
    if (buf.size() != cap) return {false, "buffer not full after sequence " + std::to_string(t)};
  }
  return {worst <= 1, std::to_string(kBufferSequences) + " sequences, max per-class count spread " +
                          std::to_string(worst)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// The acc and cf columns of results.csv, verbatim.
std::string acc_cf_columns(const fs::path& csv) {
  std::istringstream in(slurp(csv));
  std::string out;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cols.push_back(c);
    if (line.back() == ',') cols.emplace_back();
    if (cols.size() != kResultsColumns.size()) return "malformed: " + line;
    out += cols[5] + "," + cols[6] + "\n";
  }
  return out;
}

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() / "clb_acceptance_repro";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string text =
      "[run]\nstrategies = lb, nr, ewc\nscenarios = task-il, class-il\nrepetitions = 1\niterations = 60\n"
      "batch_size = 32\n";
  std::ofstream(root / "grid.ini") << text;
  std::ostringstream log;
  auto first = load_config(root / "grid.ini");
  first.output_dir = root / "first";
  run_grid(first, log);
  std::vector<std::string> cols;
  for (const char* name : {"a", "b"}) {
    auto c = load_config(root / "first" / "manifest.json");
    c.output_dir = root / name;
    run_grid(c, log);
    cols.push_back(acc_cf_columns(root / name / "results.csv"));
  }
  const auto original = acc_cf_columns(root / "first" / "results.csv");
  const std::size_t rows = static_cast<std::size_t>(std::count(cols[0].begin(), cols[0].end(), '\n'));
  const bool pass = cols[0] == cols[1] && cols[0] == original && rows == 1 + 3 * (4 + 8);
  fs::remove_all(root);
  return {pass, std::to_string(rows - 1) + " rows; two runs from one manifest " +
                    (cols[0] == cols[1] ? "identical" : "DIFFER") + ", vs original config run " +
                    (cols[0] == original ? "identical" : "DIFFER")};
}

Outcome calibration() {
  // Fresh joint training on all eight classes at once.
  const auto& train = data().train;
  LeNet<Real> model(train.shape, train.class_names.size(), 1234);
  Adam<Real> opt(model.parameters(), AdamConfig{});
  Rng rng(kSeed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::size_t at = 0;
  for (std::size_t step = 0; step < kIterations; ++step) {
    std::vector<std::size_t> batch;
    while (batch.size() < kBatch) {
      if (at == order.size()) {
        rng.shuffle(order);
        at = 0;
      }
      batch.push_back(order[at++]);
    }
    const auto x = gather_images<Real>(train, batch);
    const auto targets = one_hot<Real>(gather_labels(train, batch), train.class_names.size());
    Tape<Real> tape;
    Tensor<Real> loss;
    {
      TapeScope<Real> scope(tape);
      loss = softmax_cross_entropy<Real>(model.forward(x, Mode::Train), targets, {}, {});
    }
    opt.zero_grad();
    tape.backward(loss);
    opt.step();
  }
  std::vector<std::size_t> all(data().test.size());
  std::iota(all.begin(), all.end(), 0);
  const double acc = evaluate_accuracy(model, data().test, all, {});
  return {acc >= kCalibrationAcc, "joint training, " + std::to_string(kIterations) + " steps of " +
                                      std::to_string(kBatch) + ": test accuracy " + fmt("%.4f", acc)};
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  struct Criterion {
    const char* name;
    Outcome (*check)();
  };
  const std::vector<Criterion> criteria{
      {"Class-IL LB accuracy signature", lb_signature},
      {"Class-IL LB forgetting", lb_forgetting},
      {"NR with a full buffer matches UB", nr_matches_ub},
      {"regularisation collapses under Class-IL", regularisation_collapse},
      {"Task-IL replay beats LB", task_il_ordering},
      {"A-GEM projection invariant", agem_invariant},
      {"metric oracle", metric_oracle},
      {"LeNet gradient check", gradient_check},
      {"degenerate strategies equal LB", degeneracy},
      {"EWC near-freeze", near_freeze},
      {"replay buffer balance", buffer_balance},
      {"reproducibility from a manifest", reproducibility},
      {"UB calibration", calibration},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  std::printf("acceptance (%s, batch %zu, %zu iterations per unit, seed %llu)\n", std::string(precision_name<Real>()).c_str(), kBatch,
              kIterations, static_cast<unsigned long long>(kSeed));
  std::fflush(stdout);
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!only.empty() && !only.count(k + 1)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::printf("%s %2zu %s: %s [%.0f s]\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].name, o.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  std::printf("%d failed\n", failed);
  return failed ? 1 : 0;
}
