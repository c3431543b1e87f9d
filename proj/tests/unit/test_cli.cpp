#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "clb/cli/commands.hpp"
#include "clb/cli/config.hpp"
#include "clb/cli/plot.hpp"
#include "clb/cli/runner.hpp"
#include "clb/core/precision.hpp"
#include "clb/data/image_dir.hpp"
#include "doctest.h"

using namespace clb;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "t.ini");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("clb_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

const char* kTinyGrid = R"(
[run]
strategies = lb, nr
scenarios = task-il, class-il
repetitions = 2
iterations = 4
batch_size = 4

[synthetic]
classes = 4
train_per_class = 6
test_per_class = 3
)";

}  // namespace

TEST_CASE("config defaults and explicit values") {
  const auto d = parse_config("");
  CHECK(d.strategies == std::vector<std::string>{"lb"});
  CHECK(d.repetitions == 3);
  CHECK(d.seed_list() == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(d.batch_size == 128);
  CHECK(d.learning_rate == doctest::Approx(2.5e-4));

  const auto c = parse_config(R"(
# comment
[run]
strategies = ewc, si   ; trailing comment
scenarios = task-il
seeds = 7, 11
iterations = 10
[ewc]
lambda = 100
[si]
c = 0.5
)");
  CHECK(c.strategies == std::vector<std::string>{"ewc", "si"});
  CHECK(c.scenarios == std::vector<Scenario>{Scenario::TaskIL});
  CHECK(c.seed_list() == std::vector<std::uint64_t>{7, 11});
  CHECK(c.repetitions == 2);
  CHECK(c.strategy_config.ewc_lambda == 100.0);
  CHECK(c.strategy_config.si_c == 0.5);
}

TEST_CASE("unknown keys are rejected with file, line and section") {
  CHECK(error_of("[run]\niterations = 5\nitterations = 5\n") == "t.ini:3: unknown key 'itterations' in [run]");
  CHECK(error_of("[ewc]\nlamda = 1\n") == "t.ini:2: unknown key 'lamda' in [ewc]");
  CHECK(error_of("\n[runn]\n").find("t.ini:2: unknown section [runn]") == 0);
}

TEST_CASE("malformed and invalid config values") {
  CHECK(error_of("[run]\nseed = 1\nseed = 2\n").find("t.ini:3: duplicate key 'seed'") == 0);
  CHECK(error_of("[run]\njust words\n").find("t.ini:2: expected 'key = value'") == 0);
  CHECK(error_of("iterations = 5\n").find("t.ini:1: key outside any [section]") == 0);
  CHECK(error_of("[run]\niterations = many\n").find("t.ini:2: [run] iterations:") == 0);
  CHECK(error_of("[run]\nstrategies =\n").find("t.ini:2: [run] strategies:") == 0);
  CHECK(error_of("[run]\nstrategies = lb, lb\n") == "t.ini:2: [run] strategies: 'lb' listed twice");
  CHECK(error_of("[run]\nstrategies = ,\n").find("t.ini:2: [run] strategies:") == 0);
  CHECK(error_of("[run]\nstrategies = lb, best\n").find("t.ini:2: [run] strategies:") == 0);
  CHECK(error_of("[run]\nscenarios = domain-il\n").find("t.ini:2: [run] scenarios:") == 0);
  CHECK(error_of("[run]\nlearning_rate = -1\n").find("t.ini:2: [run] learning_rate:") == 0);
  CHECK(error_of("[run]\nbatch_size = 1\n").find("t.ini:2: [run] batch_size:") == 0);
  CHECK(error_of("[agem]\nmemory = 1\n") == "t.ini:2: [agem] memory: must be >= 2");
  CHECK(error_of("[run]\norderings = o4\n").find("unknown ordering 'o4'") != std::string::npos);
  CHECK(error_of("[run]\norderings = custom\n").find("custom_order") != std::string::npos);
  CHECK(error_of("[run]\nseeds = 1, 1\n").find("t.ini:2: [run] seeds: '1' listed twice") != std::string::npos);
  CHECK(error_of("[run]\nrepetitions = 3\nseeds = 1, 2\n").find("repetitions") != std::string::npos);
  CHECK(error_of("[dataset]\nsource = directory\n").find("[dataset] path") != std::string::npos);
  CHECK(error_of("[synthetic]\nseparation = 0\n").find("[synthetic]") != std::string::npos);
  CHECK(error_of("[dataset]\nheight = 8\nwidth = 8\n").find("16x16") != std::string::npos);
}

TEST_CASE("a precision other than the build's is a config error") {
  const int other = kRealBits == 32 ? 64 : 32;
  const auto msg = error_of("[run]\nprecision = " + std::to_string(other) + "\n");
  CHECK(msg.find("t.ini:2: [run] precision:") == 0);
  CHECK_NOTHROW(parse_config("[run]\nprecision = " + std::to_string(kRealBits) + "\n"));
}

TEST_CASE("grid order and matrix file names") {
  auto c = parse_config(kTinyGrid);
  const auto cells = plan_cells(c);
  REQUIRE(cells.size() == 8);
  CHECK(cells[0].method == "lb");
  CHECK(cells[0].scenario == Scenario::TaskIL);
  CHECK(cells[1].repetition == 1);
  CHECK(cells[1].seed == 1);
  CHECK(cells[2].scenario == Scenario::ClassIL);
  CHECK(cells[4].method == "nr");
  CHECK(matrix_file_name(cells[3]) == "lb_class-il_o1_r1.json");
}

TEST_CASE("run writes the result files and reproduces from its manifest") {
  auto c = parse_config(kTinyGrid, "tiny.ini");
  c.output_dir = scratch("grid_a");
  std::ostringstream log;
  const auto report = run_grid(c, log);
  CHECK(report.failures == 0);
  const fs::path dir = c.output_dir;

  const auto rows = lines(slurp(dir / "results.csv"));
  // Task-IL: 2 two-class tasks; Class-IL: 4 single-class units.
  REQUIRE(rows.size() == 1 + 2 * 2 * (2 + 4));
  CHECK(rows[0] == "method,scenario,ordering,repetition,step,acc,cf,wall_time_s,seed");
  CHECK(rows[1].rfind("lb,task-il,o1,0,1,", 0) == 0);
  CHECK(rows[1].find(",,") != std::string::npos);  // no CF after the first step

  const auto summary = lines(slurp(dir / "summary.csv"));
  CHECK(summary[0] == "method,scenario,ordering,step,acc_mean,acc_std,cf_mean,cf_std,runs,failed,interpretation");
  REQUIRE(summary.size() == 1 + 2 * (2 + 4));
  CHECK(summary[2].find(",2,0,") != std::string::npos);  // two repetitions, none failed

  for (const auto& cell : plan_cells(c)) CHECK(fs::exists(dir / "matrices" / matrix_file_name(cell)));
  REQUIRE(fs::exists(dir / "manifest.json"));

  auto again = load_config(dir / "manifest.json");
  again.output_dir = scratch("grid_b");
  again.workers = 2;
  run_grid(again, log);
  auto strip_time = [](const std::vector<std::string>& ls) {
    std::vector<std::string> out;
    for (const auto& l : ls) {
      auto cut = l.rfind(',');
      auto prev = l.rfind(',', cut - 1);
      out.push_back(l.substr(0, prev) + l.substr(cut));
    }
    return out;
  };
  CHECK(strip_time(lines(slurp(again.output_dir / "results.csv"))) == strip_time(rows));
  CHECK(slurp(again.output_dir / "summary.csv") == slurp(dir / "summary.csv"));

  const auto plots = write_plots(dir);
  CHECK(plots.size() == 4 + 1);
  const auto svg = slurp(dir / "plots" / "nr_class-il.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("href") == std::string::npos);  // self-contained
  CHECK(svg.find("unit 4") != std::string::npos);

  fs::remove(dir / "matrices" / "nr_task-il_o1_r1.json");
  CHECK_THROWS_AS(write_plots(dir), DataError);
  fs::remove_all(dir);
  fs::remove_all(again.output_dir);
}

TEST_CASE("a failing cell is recorded and the grid continues") {
  auto c = parse_config(R"(
[run]
strategies = lb
scenarios = task-il
orderings = custom, o1
custom_order = Pain, Happy
repetitions = 1
iterations = 2
batch_size = 4
[synthetic]
classes = 4
train_per_class = 6
test_per_class = 3
)");
  c.output_dir = scratch("fail");
  std::ostringstream log;
  const auto report = run_grid(c, log);
  REQUIRE(report.outcomes.size() == 2);
  CHECK(report.failures == 1);
  CHECK_FALSE(report.outcomes[0].ok);
  CHECK(report.outcomes[0].error.find("Pain") != std::string::npos);
  CHECK(report.outcomes[1].ok);
  CHECK(log.str().find("FAILED") != std::string::npos);
  CHECK(slurp(c.output_dir / "manifest.json").find("\"failed\"") != std::string::npos);
  const auto summary = lines(slurp(c.output_dir / "summary.csv"));
  REQUIRE(summary.size() == 1 + 2);
  CHECK(summary[1].rfind("lb,task-il,o1,", 0) == 0);
  fs::remove_all(c.output_dir);
}

TEST_CASE("gen-data writes class folders and regenerates identical bytes") {
  SyntheticSpec spec;
  spec.train_per_class = 10;
  spec.test_per_class = 2;
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  gen_data(a, spec);
  gen_data(b, spec);
  std::size_t train_folders = 0, test_folders = 0, train_pngs = 0, pngs = 0;
  for (const auto& e : fs::directory_iterator(a / "train")) train_folders += e.is_directory();
  for (const auto& e : fs::directory_iterator(a / "test")) test_folders += e.is_directory();
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.path().extension() != ".png") continue;
    ++pngs;
    train_pngs += e.path().parent_path().parent_path().filename() == "train";
    CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
  }
  CHECK(train_folders == 8);
  CHECK(test_folders == 8);
  CHECK(train_pngs == 80);
  CHECK(pngs == 96);
  const auto back = load_image_dir(a, spec.shape);
  CHECK(back.train.size() == 80);
  CHECK(back.test.size() == 16);
  CHECK_THROWS_AS(gen_data("/proc/clb_not_writable", spec), DataError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("strategy table lists the catalogue") {
  const auto t = lines(strategies_table());
  REQUIRE(t.size() == 1 + 13);
  CHECK(t[1].rfind("lb ", 0) == 0);
  CHECK(t[13].rfind("lgr-d", 0) == 0);
  CHECK(t[3].find("lambda=5000") != std::string::npos);
}
