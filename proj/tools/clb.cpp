#include <malloc.h>

#include <iostream>

#include "CLI11.hpp"
#include "clb/cli/commands.hpp"
#include "clb/cli/plot.hpp"
#include "clb/cli/runner.hpp"
#include "clb/core/errors.hpp"
#include "clb/data/image_dir.hpp"

// Exit codes: 0 success, 1 invalid input or fatal error, 2 some runs failed.
int main(int argc, char** argv) {
  // Training allocates and frees large tensors every step; keep them on the
  // heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Continual-learning benchmark for facial expression recognition"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a strategy x scenario x ordering x repetition grid");
  std::string config_path, output_override;
  std::size_t workers = 0;
  run->add_option("config", config_path, "Config file, or a manifest.json from an earlier run")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("-o,--output", output_override, "Output directory (overrides [run] output)");
  run->add_option("-j,--workers", workers, "Worker threads (overrides [run] workers)")->check(CLI::PositiveNumber);

  auto* plot = app.add_subcommand("plot", "Write SVG learning-dynamics plots for a results directory");
  std::string results_dir;
  plot->add_option("results", results_dir, "Directory written by 'run'")->required();

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic expression dataset as PNG folders");
  std::string gen_out;
  clb::SyntheticSpec spec;
  std::size_t size = 32, channels = 1;
  gen->add_option("-o,--out", gen_out, "Output directory")->required();
  gen->add_option("--classes", spec.n_classes, "Number of classes")->capture_default_str();
  gen->add_option("--samples-per-class", spec.train_per_class, "Training images per class")->capture_default_str();
  gen->add_option("--test-per-class", spec.test_per_class, "Test images per class")->capture_default_str();
  gen->add_option("--size", size, "Image height and width")->capture_default_str();
  gen->add_option("--channels", channels, "1 (grey) or 3 (RGB)")->capture_default_str();
  gen->add_option("--separation", spec.separation, "Class separation in (0, 1]")->capture_default_str();
  gen->add_option("--noise", spec.noise, "Per-pixel noise standard deviation")->capture_default_str();
  gen->add_option("--jitter", spec.jitter, "Maximum glyph shift as a fraction of the side")->capture_default_str();
  gen->add_option("--contrast", spec.contrast, "Maximum intensity gain reduction")->capture_default_str();
  gen->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();

  auto* list = app.add_subcommand("list-strategies", "List the available strategies and their defaults");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      auto config = clb::load_config(config_path);
      if (!output_override.empty()) config.output_dir = output_override;
      if (workers) config.workers = workers;
      const auto report = clb::run_grid(config, std::cerr);
      std::cerr << "results in " << config.output_dir.string() << "\n";
      return report.failures ? 2 : 0;
    }
    if (plot->parsed()) {
      for (const auto& p : clb::write_plots(results_dir)) std::cout << p.string() << "\n";
      return 0;
    }
    if (gen->parsed()) {
      spec.shape = {channels, size, size};
      clb::gen_data(gen_out, spec);
      std::cerr << "wrote " << spec.n_classes << " classes to " << gen_out << "\n";
      return 0;
    }
    if (list->parsed()) {
      std::cout << clb::strategies_table();
      return 0;
    }
  } catch (const clb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
  } catch (const clb::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return 1;
}
