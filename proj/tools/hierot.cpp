// Command-line front end for training, evaluation, sweeps and data export.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "hierot/config.hpp"
#include "hierot/harness.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDivergence = 4 };

void emit_report(const std::string& out_dir, const std::string& name, const nlohmann::json& report) {
  std::cout << report.dump(2) << "\n";
  if (out_dir.empty()) return;
  std::filesystem::create_directories(out_dir);
  hierot::write_text(std::filesystem::path(out_dir) / name, report.dump(2) + "\n");
}

nlohmann::json runs_json(const hierot::SweepReport& report) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : report.runs)
    runs.push_back({{"label", r.label}, {"seed", r.seed}, {"accuracy", r.accuracy}});
  return {{"summary", report.summary}, {"runs", runs}};
}

}  // namespace

int main(int argc, char** argv) {
  hierot::configure_logging();
  CLI::App app{"Hierarchical optimal transport for domain adaptation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string out_dir;
  bool emit_plot_data = false;
  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override a config field, e.g. --set training.iterations=500")
      ->allow_extra_args(false);
  app.add_option("--seed", seed, "Experiment seed");
  app.add_option("--jobs", jobs, "Parallel runs for sweeps")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", out_dir, "Output directory");
  app.add_flag("--emit-plot-data", emit_plot_data, "Also write long-format metrics for plotting");

  auto* train = app.add_subcommand("train", "Train one configuration");
  std::string preset;
  train->add_option("--preset", preset, "Ablation preset (source_only|a|b|c|d|e)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the target split");
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "checkpoint.json")->required()->check(CLI::ExistingFile);

  std::size_t seeds = 3;
  auto* sweep_bs = app.add_subcommand("sweep-batch-size", "Batch-size robustness sweep");
  std::vector<std::size_t> sizes{10, 20, 40};
  sweep_bs->add_option("--sizes", sizes, "Batch sizes")->delimiter(',');
  sweep_bs->add_option("--seeds", seeds, "Seeds per setting");

  auto* sweep_m = app.add_subcommand("sweep-projections", "Projection-count sensitivity sweep");
  std::vector<Eigen::Index> counts{4, 16, 64};
  sweep_m->add_option("--counts", counts, "Projection counts")->delimiter(',');
  sweep_m->add_option("--seeds", seeds, "Seeds per setting");

  auto* bench = app.add_subcommand("bench-timing", "Per-iteration timing of the image-level variants");
  std::size_t repeats = 3;
  bench->add_option("--repeats", repeats, "Repeats");

  auto* ablation = app.add_subcommand("ablation", "Run the ablation presets");
  std::vector<std::string> presets = hierot::ablation_presets();
  ablation->add_option("--presets", presets, "Presets")->delimiter(',');
  ablation->add_option("--seeds", seeds, "Seeds per preset");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic pair and export it as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    hierot::ExperimentConfig cfg = hierot::load_config(config_path, overrides);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (emit_plot_data) cfg.emit_plot_data = true;

    if (*train) {
      if (!preset.empty()) hierot::apply_preset(cfg, preset);
      const auto result = hierot::run_training(cfg);
      std::cout << "final target accuracy " << result.final_record.target_accuracy << "\n";
    } else if (*eval) {
      const auto ck = hierot::load_checkpoint(checkpoint);
      const auto data = hierot::load_experiment_data(cfg);
      const double acc = hierot::evaluate(ck, hierot::with_labels(data.target, data.target_labels));
      std::cout << "target accuracy " << acc << "\n";
    } else if (*sweep_bs) {
      emit_report(cfg.out_dir, "batch_size_report.json",
                  runs_json(hierot::run_batch_size_sweep(cfg, sizes, seeds, jobs)));
    } else if (*sweep_m) {
      emit_report(cfg.out_dir, "projection_report.json",
                  runs_json(hierot::run_projection_sweep(cfg, counts, seeds, jobs)));
    } else if (*bench) {
      emit_report(cfg.out_dir, "timing_report.json", hierot::run_timing_bench(cfg, repeats).summary);
    } else if (*ablation) {
      emit_report(cfg.out_dir, "ablation_report.json",
                  runs_json(hierot::run_ablation(cfg, presets, seeds, jobs)));
    } else if (*gen) {
      const auto data = hierot::load_experiment_data(cfg);
      const std::filesystem::path dir = cfg.out_dir.empty() ? "." : cfg.out_dir;
      std::filesystem::create_directories(dir);
      hierot::export_csv(dir / "data.csv", data.source, data.target, &data.target_labels);
      hierot::write_text(dir / "config.resolved.json", hierot::config_to_json(cfg).dump(2) + "\n");
      std::cout << "wrote " << (dir / "data.csv").string() << "\n";
    }
  } catch (const hierot::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const hierot::DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kData;
  } catch (const hierot::DivergenceError& e) {
    spdlog::error("solver divergence: {}", e.what());
    return kDivergence;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kOk;
}
