#include "clb/cli/runner.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "clb/core/errors.hpp"
#include "clb/core/precision.hpp"
#include "clb/data/image_dir.hpp"
#include "clb/models/named_buffer.hpp"

namespace clb {

namespace fs = std::filesystem;

std::vector<Cell> plan_cells(const RunConfig& config) {
  std::vector<Cell> cells;
  const auto seeds = config.seed_list();
  for (const auto& method : config.strategies) {
    for (Scenario s : config.scenarios) {
      for (const auto& ordering : config.orderings) {
        for (std::size_t r = 0; r < seeds.size(); ++r) cells.push_back({method, s, ordering, r, seeds[r]});
      }
    }
  }
  return cells;
}

DatasetPair load_dataset(const RunConfig& config) {
  DatasetPair data;
  if (config.source == DataSource::Synthetic) {
    data = gen_synthetic(config.synthetic);
  } else {
    data = load_image_dir(config.data_path, config.input_shape);
  }
  if (config.max_per_class > 0) data.train = downsample_cap(data.train, config.max_per_class, config.seed);
  return data;
}

std::string matrix_file_name(const Cell& cell) {
  return cell.method + "_" + to_string(cell.scenario) + "_" + cell.ordering + "_r" + std::to_string(cell.repetition) +
         ".json";
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string join(const auto& cols) {
  std::string out;
  for (const char* c : cols) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out + "\n";
}

nlohmann::json cell_json(const Cell& c) {
  return {{"method", c.method},
          {"scenario", to_string(c.scenario)},
          {"ordering", c.ordering},
          {"repetition", c.repetition},
          {"seed", c.seed}};
}

CellOutcome run_cell(const RunConfig& config, const DatasetPair& data, const Cell& cell) {
  CellOutcome out;
  out.cell = cell;
  const auto start = std::chrono::steady_clock::now();
  try {
    ExperimentPlan plan;
    plan.scenario = cell.scenario;
    plan.strategy = cell.method;
    plan.ordering = make_ordering(cell.ordering, data.train.class_names, config.custom_order, config.seed);
    plan.data = &data;
    plan.augment = config.augment;
    plan.augment_options = config.augment_options;
    plan.iterations = config.iterations;
    plan.batch_size = config.batch_size;
    plan.learning_rate = config.learning_rate;
    plan.seed = cell.seed;
    plan.strategy_config = config.strategy_config;
    out.result = run_experiment(plan);
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace

std::string results_rows(const CellOutcome& o) {
  if (!o.ok) return {};
  std::string out;
  const auto& r = o.result;
  for (std::size_t i = 0; i < r.acc.size(); ++i) {
    out += o.cell.method + "," + to_string(o.cell.scenario) + "," + o.cell.ordering + "," +
           std::to_string(o.cell.repetition) + "," + std::to_string(i + 1) + "," + fixed(r.acc[i]) + "," +
           (r.cf[i] ? fixed(*r.cf[i]) : std::string()) + "," + fixed(r.wall_time_s.at(i)) + "," +
           std::to_string(o.cell.seed) + "\n";
  }
  return out;
}

std::string summary_csv(const std::vector<CellOutcome>& outcomes) {
  struct Group {
    std::vector<std::vector<double>> acc;
    std::vector<std::vector<std::optional<double>>> cf;
    std::size_t failed = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Group> groups;
  std::map<std::string, const Cell*> first;
  for (const auto& o : outcomes) {
    const std::string key = o.cell.method + "," + to_string(o.cell.scenario) + "," + o.cell.ordering;
    if (!groups.count(key)) {
      order.push_back(key);
      first[key] = &o.cell;
    }
    auto& g = groups[key];
    if (o.ok) {
      g.acc.push_back(o.result.acc);
      g.cf.push_back(o.result.cf);
    } else {
      ++g.failed;
    }
  }
  std::string out = join(kSummaryColumns);
  for (const auto& key : order) {
    const auto& g = groups[key];
    if (g.acc.empty()) continue;
    const auto report = aggregate(g.acc, g.cf);
    for (std::size_t i = 0; i < report.acc.size(); ++i) {
      const auto& a = report.acc[i];
      const auto& c = report.cf[i];
      const double cf_for_label = c.count ? c.mean : 0.0;
      out += key + "," + std::to_string(i + 1) + "," + fixed(a.mean) + "," + fixed(a.std) + "," +
             (c.count ? fixed(c.mean) : std::string()) + "," + (c.count ? fixed(c.std) : std::string()) + "," +
             std::to_string(g.acc.size()) + "," + std::to_string(g.failed) + "," +
             to_string(interpret(a.mean, cf_for_label)) + "\n";
    }
  }
  return out;
}

GridReport run_grid(const RunConfig& config, std::ostream& log) {
  const auto cells = plan_cells(config);
  if (cells.empty()) throw ConfigError("nothing to run: the grid is empty");
  const DatasetPair data = load_dataset(config);

  const fs::path dir = config.output_dir;
  std::error_code ec;
  fs::create_directories(dir / "matrices", ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  std::ofstream results(dir / "results.csv", std::ios::binary | std::ios::trunc);
  if (!results) throw DataError("cannot write " + (dir / "results.csv").string());
  results << join(kResultsColumns);

  // Workers compute; this thread is the only writer and emits finished cells
  // in grid order so file contents do not depend on scheduling.
  std::vector<std::optional<CellOutcome>> done(cells.size());
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  const std::size_t n_workers = std::min(config.workers, cells.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) {
        auto outcome = run_cell(config, data, cells[i]);
        std::lock_guard lock(mu);
        done[i] = std::move(outcome);
        cv.notify_all();
      }
    });
  }

  GridReport report;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CellOutcome o;
    {
      std::unique_lock lock(mu);
      cv.wait(lock, [&] { return done[i].has_value(); });
      o = std::move(*done[i]);
      done[i].reset();
    }
    const auto& c = o.cell;
    const std::string tag = c.method + " " + to_string(c.scenario) + " " + c.ordering + " r" +
                            std::to_string(c.repetition) + " (seed " + std::to_string(c.seed) + ")";
    if (o.ok) {
      nlohmann::json meta = cell_json(c);
      meta["precision"] = std::string(precision_name<Real>());
      meta["warnings"] = o.result.warnings;
      std::ofstream m(dir / "matrices" / matrix_file_name(c), std::ios::binary | std::ios::trunc);
      m << result_json(meta, o.result).dump(2) << "\n";
      results << results_rows(o);
      results.flush();
      log << "[" << i + 1 << "/" << cells.size() << "] " << tag << ": final acc " << fixed(o.result.acc.back());
      if (o.result.cf.back()) log << ", cf " << fixed(*o.result.cf.back());
      log << " in " << fixed(o.wall_time_s) << " s\n";
      for (const auto& w : o.result.warnings) log << "  warning: " << w << "\n";
    } else {
      ++report.failures;
      log << "[" << i + 1 << "/" << cells.size() << "] " << tag << ": FAILED: " << o.error << "\n";
    }
    report.outcomes.push_back(std::move(o));
  }
  for (auto& t : pool) t.join();

  std::ofstream(dir / "summary.csv", std::ios::binary | std::ios::trunc) << summary_csv(report.outcomes);

  nlohmann::json manifest;
  manifest["format"] = 1;
  manifest["config"] = config.text;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(config.text)));
  manifest["config_fnv1a64"] = hash;
  manifest["precision"] = std::string(precision_name<Real>());
  manifest["dataset"] = {{"source", to_string(config.source)},
                         {"classes", data.train.class_names},
                         {"train_size", data.train.size()},
                         {"test_size", data.test.size()},
                         {"shape", {data.train.shape.channels, data.train.shape.height, data.train.shape.width}}};
  if (config.source == DataSource::Directory) manifest["dataset"]["path"] = config.data_path.string();
  manifest["seeds"] = config.seed_list();
  manifest["workers"] = config.workers;
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& o : report.outcomes) {
    auto j = cell_json(o.cell);
    j["status"] = o.ok ? "ok" : "failed";
    if (o.ok) {
      j["matrix"] = "matrices/" + matrix_file_name(o.cell);
      j["warnings"] = o.result.warnings;
    } else {
      j["error"] = o.error;
    }
    j["wall_time_s"] = o.wall_time_s;
    runs.push_back(std::move(j));
  }
  manifest["runs"] = std::move(runs);
  manifest["failures"] = report.failures;
  std::ofstream(dir / "manifest.json", std::ios::binary | std::ios::trunc) << manifest.dump(2) << "\n";
  if (report.failures) {
    log << "warning: " << report.failures << " of " << cells.size()
        << " runs failed and are excluded from summary.csv\n";
  }
  return report;
}

}  // namespace clb
