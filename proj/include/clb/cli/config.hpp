#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "clb/data/augment.hpp"
#include "clb/data/dataset.hpp"
#include "clb/data/synthetic.hpp"
#include "clb/strategies/strategy.hpp"

namespace clb {

/// Invalid configuration. The message names the source, line, section and
/// key when there is one.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sections of `key = value` lines. '#' and ';' start comments, keys are
/// unique per section, and names are case-sensitive.
struct IniDocument {
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  std::string source;
  std::map<std::string, std::map<std::string, Entry>> sections;
  /// Line of each section's first header.
  std::map<std::string, std::size_t> section_lines;

  static IniDocument parse(std::string_view text, const std::string& source);
};

enum class DataSource { Synthetic, Directory };

struct RunConfig {
  std::vector<std::string> strategies{"lb"};
  std::vector<Scenario> scenarios{Scenario::ClassIL};
  std::vector<std::string> orderings{"o1"};
  std::vector<std::string> custom_order;
  std::size_t repetitions = 3;
  std::uint64_t seed = 0;
  /// Explicit per-repetition seeds; otherwise seed + repetition.
  std::vector<std::uint64_t> seeds;
  std::size_t iterations = 500;
  std::size_t batch_size = 128;
  double learning_rate = 2.5e-4;
  bool augment = false;
  AugmentOptions augment_options;
  StrategyConfig strategy_config;

  DataSource source = DataSource::Synthetic;
  std::filesystem::path data_path;
  InputShape input_shape{1, 32, 32};
  /// Per-class cap applied to the training split; 0 keeps everything.
  std::size_t max_per_class = 0;
  SyntheticSpec synthetic;

  int precision = 32;
  std::filesystem::path output_dir = "results";
  std::size_t workers = 1;

  /// The text this config was parsed from (kept for the manifest).
  std::string text;

  std::vector<std::uint64_t> seed_list() const;
};

/// Parses and validates. Unknown sections and keys are errors.
RunConfig parse_config(std::string_view text, const std::string& source = "config");
/// Reads a config file, or the config text stored in a run manifest
/// (a .json file with a "config" field).
RunConfig load_config(const std::filesystem::path& path);

std::string to_string(DataSource s);

}  // namespace clb
