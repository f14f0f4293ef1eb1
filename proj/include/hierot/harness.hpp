#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hierot/config.hpp"
#include "hierot/data.hpp"
#include "hierot/model.hpp"
#include "hierot/solvers.hpp"

namespace hierot {

/// Raised when more than the configured fraction of domain solves failed to converge.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Averages over the iterations since the previous record.
struct MetricsRecord {
  std::size_t iteration = 0;
  double source_ce = 0.0;
  double transport_term = 0.0;
  double objective = 0.0;
  double marginal_deviation = 0.0;
  std::array<double, 3> raw_terms{};
  std::array<double, 3> weighted_terms{};
  double target_accuracy = 0.0;
};

/// Training and evaluation data for one experiment.
struct ExperimentData {
  LabeledDataset source;
  UnlabeledDataset target;
  EvaluationSplit target_labels;
};

ExperimentData load_experiment_data(const ExperimentConfig& cfg);

struct TrainingResult {
  std::vector<MetricsRecord> records;
  MetricsRecord final_record;
  ModelParams params;
  Matrix projections;
  std::size_t non_converged = 0;
  double non_converged_fraction = 0.0;
  double pretrain_source_accuracy = 0.0;
  std::vector<double> iteration_ms;  // wall time per training iteration
};

/// Top-1 accuracy of the model on a labeled dataset.
double evaluate(const ModelParams& params, const LabeledDataset& data);

/// Source-only pretraining (if configured) followed by cfg.iterations
/// DeepHOT iterations. Writes metrics.csv, summary.json, config.resolved.json,
/// checkpoint.json and timing.csv into cfg.out_dir when it is non-empty.
/// Throws DivergenceError after writing outputs if too many solves diverged.
TrainingResult run_training(const ExperimentConfig& cfg, const ExperimentData& data);
TrainingResult run_training(const ExperimentConfig& cfg);

std::string metrics_csv(const std::vector<MetricsRecord>& records);
/// Long-format (iteration, metric, value) rows for plotting tools.
std::string metrics_long_csv(const std::vector<MetricsRecord>& records);

// --- Sweeps ------------------------------------------------------------------

struct SweepRun {
  std::string label;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct SweepReport {
  std::vector<SweepRun> runs;
  nlohmann::json summary;
};

/// Runs each config (in parallel up to jobs) and collects final target accuracy.
std::vector<TrainingResult> run_many(const std::vector<ExperimentConfig>& cfgs, int jobs);

/// Trains at every batch size with the exact balanced solver and with UOT.
/// summary: per solver, mean accuracy per size and the max relative change
/// |acc(size) - acc(first)| / acc(first) over sizes.
SweepReport run_batch_size_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& sizes,
                                 std::size_t seeds, int jobs);

/// Trains the full method with each projection count; summary carries the
/// mean accuracy per M and the spread max - min.
SweepReport run_projection_sweep(const ExperimentConfig& cfg, const std::vector<Eigen::Index>& counts,
                                 std::size_t seeds, int jobs);

/// Trains every ablation preset (plus source-only) for each seed.
SweepReport run_ablation(const ExperimentConfig& cfg, const std::vector<std::string>& presets,
                         std::size_t seeds, int jobs);

struct TimingReport {
  std::vector<std::string> variants;
  std::vector<std::vector<double>> mean_ms;  // [variant][repeat]
  nlohmann::json summary;
};

/// Mean wall time per iteration over iterations 10..100 for SWD+UOT,
/// exact-patch-OT+UOT and the domain-level-only baseline, repeated.
TimingReport run_timing_bench(const ExperimentConfig& cfg, std::size_t repeats);

// --- Checkpoints ---------------------------------------------------------------

/// FNV-1a hash of the model shape fields, hex encoded.
std::string config_hash(const ModelDims& dims);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const Matrix& projections);

struct Checkpoint {
  ModelParams params;
  Matrix projections;
  std::string hash;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Accuracy of a checkpoint on a dataset; throws DataError on shape mismatch.
double evaluate(const Checkpoint& checkpoint, const LabeledDataset& data);

void write_text(const std::filesystem::path& path, const std::string& text);

/// Sets the log level from HIEROT_LOG (trace|debug|info|warn|err|critical|off), default warn.
void configure_logging();

}  // namespace hierot
