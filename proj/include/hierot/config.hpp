#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hierot/data.hpp"
#include "hierot/hot.hpp"
#include "hierot/model.hpp"
#include "hierot/solvers.hpp"

namespace hierot {

/// Raised for invalid or unknown configuration fields.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SyntheticDataConfig {
  Eigen::Index class_count = 5;
  std::size_t n_source = 2000;
  std::size_t n_target = 2000;
  SyntheticShape shape;
  std::vector<double> shift;               // common translation, empty = none
  std::vector<std::vector<double>> class_shift;  // per-class translation, overrides shift
  double patch_noise = 0.0;
  double offset_scale = 2.5;               // per-sample target offset (illumination-like)
  std::vector<double> offset_direction;    // empty = all-ones
  double local_signal_strength = 1.0;
  bool permute_patches = true;
};

struct IdxDataConfig {
  std::string source_images, source_labels, target_images, target_labels;
  std::size_t downsample_to = 12;
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
};

struct AblationSwitches {
  DomainSolver domain_solver = DomainSolver::kUnbalanced;
  bool use_swd = true;
  bool use_pooled = true;
  bool use_ce = true;
  bool image_level_only = false;
  bool source_only = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string data_kind = "synthetic";
  SyntheticDataConfig synthetic;
  IdxDataConfig idx;
  ModelDims model;
  double eta1 = 0.1, eta2 = 0.1, eta3 = 1.0;
  Eigen::Index projections = 16;
  std::optional<std::uint64_t> projection_seed;
  bool renormalize_projections = true;
  bool learn_projections = true;
  ImageSolver image_solver = ImageSolver::kSliced;
  SinkhornConfig sinkhorn;
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 10;
  std::size_t iterations = 2000;
  std::size_t pretrain_epochs = 0;
  std::size_t eval_interval = 100;
  double divergence_threshold = 0.2;
  AblationSwitches ablation;
  std::string out_dir;
  bool emit_plot_data = false;

  /// Effective ground-cost weights after the ablation switches.
  double effective_eta1() const { return ablation.use_swd ? eta1 : 0.0; }
  double effective_eta2() const { return ablation.use_pooled ? eta2 : 0.0; }
  double effective_eta3() const { return ablation.use_ce ? eta3 : 0.0; }
  DomainSolver effective_domain_solver() const {
    return ablation.image_level_only ? DomainSolver::kProduct : ablation.domain_solver;
  }
  std::uint64_t effective_projection_seed() const { return projection_seed.value_or(seed + 2); }
};

/// Every key with its default value; the schema unknown keys are checked against.
nlohmann::json default_config_json();

/// Recursively merges overrides into defaults, rejecting keys absent from the defaults
/// and values whose JSON type differs from the default's.
nlohmann::json merge_config(const nlohmann::json& defaults, const nlohmann::json& overrides,
                            const std::string& path = "");

/// Applies "a.b.c=value" (value parsed as JSON, else taken as a string).
void apply_override(nlohmann::json& doc, const std::string& assignment);

ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Loads a config file (or defaults when path is empty) and applies overrides.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides);

/// Named ablation presets: source_only, a, b, c, d, e.
void apply_preset(ExperimentConfig& cfg, const std::string& preset);
std::vector<std::string> ablation_presets();

}  // namespace hierot
