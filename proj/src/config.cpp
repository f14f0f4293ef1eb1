#include "hierot/config.hpp"

#include <fstream>

namespace hierot {

using nlohmann::json;

namespace {

bool compatible(const json& def, const json& val) {
  if (def.is_null()) return true;  // optional field
  if (def.is_number()) return val.is_number();
  if (def.is_array()) return val.is_array();
  if (def.is_object()) return val.is_object();
  return def.type() == val.type();
}

template <typename T>
T get(const json& doc, const char* section, const char* key) {
  try {
    return doc.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field ") + section + "." + key + ": " + e.what());
  }
}

}  // namespace

nlohmann::json config_to_json(const ExperimentConfig& c) {
  json shift_rows = json::array();
  for (const auto& row : c.synthetic.class_shift) shift_rows.push_back(row);
  return json{
      {"seed", c.seed},
      {"data",
       {{"kind", c.data_kind},
        {"class_count", c.synthetic.class_count},
        {"n_source", c.synthetic.n_source},
        {"n_target", c.synthetic.n_target},
        {"patches", c.synthetic.shape.patches},
        {"input_dim", c.synthetic.shape.input_dim},
        {"spread", c.synthetic.shape.spread},
        {"mean_separation", c.synthetic.shape.mean_separation},
        {"source_noise", c.synthetic.shape.source_noise},
        {"shift", c.synthetic.shift},
        {"class_shift", shift_rows},
        {"patch_noise", c.synthetic.patch_noise},
        {"offset_scale", c.synthetic.offset_scale},
        {"offset_direction", c.synthetic.offset_direction},
        {"local_signal_strength", c.synthetic.local_signal_strength},
        {"permute_patches", c.synthetic.permute_patches},
        {"idx_source_images", c.idx.source_images},
        {"idx_source_labels", c.idx.source_labels},
        {"idx_target_images", c.idx.target_images},
        {"idx_target_labels", c.idx.target_labels},
        {"idx_downsample_to", c.idx.downsample_to},
        {"idx_grid_h", c.idx.grid_h},
        {"idx_grid_w", c.idx.grid_w}}},
      {"model",
       {{"hidden_dim", c.model.hidden_dim},
        {"channels", c.model.channels},
        {"depth", c.model.depth},
        {"final_relu", c.model.final_relu}}},
      {"ground_cost",
       {{"eta1", c.eta1},
        {"eta2", c.eta2},
        {"eta3", c.eta3},
        {"projections", c.projections},
        {"projection_seed", c.projection_seed ? json(*c.projection_seed) : json(nullptr)},
        {"renormalize", c.renormalize_projections},
        {"learn_projections", c.learn_projections},
        {"image_solver", std::string(to_string(c.image_solver))}}},
      {"sinkhorn",
       {{"epsilon", c.sinkhorn.epsilon},
        {"tau", c.sinkhorn.tau},
        {"max_iterations", c.sinkhorn.max_iterations},
        {"tolerance", c.sinkhorn.tolerance},
        {"log_domain", c.sinkhorn.log_domain}}},
      {"optimizer",
       {{"chi0", c.schedule.chi0},
        {"mu", c.schedule.mu},
        {"nu", c.schedule.nu},
        {"classifier_multiplier", c.schedule.classifier_multiplier},
        {"momentum", c.momentum},
        {"weight_decay", c.weight_decay}}},
      {"training",
       {{"batch_size", c.batch_size},
        {"iterations", c.iterations},
        {"pretrain_epochs", c.pretrain_epochs},
        {"eval_interval", c.eval_interval},
        {"divergence_threshold", c.divergence_threshold}}},
      {"ablation",
       {{"domain_solver", std::string(to_string(c.ablation.domain_solver))},
        {"use_swd", c.ablation.use_swd},
        {"use_pooled", c.ablation.use_pooled},
        {"use_ce", c.ablation.use_ce},
        {"image_level_only", c.ablation.image_level_only},
        {"source_only", c.ablation.source_only}}},
      {"output", {{"dir", c.out_dir}, {"emit_plot_data", c.emit_plot_data}}}};
}

nlohmann::json default_config_json() { return config_to_json(ExperimentConfig{}); }

nlohmann::json merge_config(const json& defaults, const json& overrides, const std::string& path) {
  if (!overrides.is_object()) throw ConfigError("config" + (path.empty() ? "" : " section " + path) +
                                                " must be a JSON object");
  json out = defaults;
  for (const auto& [key, value] : overrides.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    const json& def = defaults.at(key);
    if (!compatible(def, value))
      throw ConfigError("config key '" + where + "' expects " + std::string(def.type_name()) +
                        ", got " + value.type_name());
    out[key] = def.is_object() ? merge_config(def, value, where) : value;
  }
  return out;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const std::string part =
        key.substr(dot == std::string::npos ? 0 : dot + 1, end - (dot == std::string::npos ? 0 : dot + 1));
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  doc = merge_config(doc, patch);
}

ExperimentConfig config_from_json(const json& raw) {
  const json doc = merge_config(default_config_json(), raw);
  ExperimentConfig c;
  try {
    c.seed = doc.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field seed: ") + e.what());
  }
  c.data_kind = get<std::string>(doc, "data", "kind");
  if (c.data_kind != "synthetic" && c.data_kind != "idx")
    throw ConfigError("data.kind must be 'synthetic' or 'idx'");
  auto& s = c.synthetic;
  s.class_count = get<Eigen::Index>(doc, "data", "class_count");
  s.n_source = get<std::size_t>(doc, "data", "n_source");
  s.n_target = get<std::size_t>(doc, "data", "n_target");
  s.shape.patches = get<Eigen::Index>(doc, "data", "patches");
  s.shape.input_dim = get<Eigen::Index>(doc, "data", "input_dim");
  s.shape.spread = get<double>(doc, "data", "spread");
  s.shape.mean_separation = get<double>(doc, "data", "mean_separation");
  s.shape.source_noise = get<double>(doc, "data", "source_noise");
  s.shift = get<std::vector<double>>(doc, "data", "shift");
  s.class_shift = get<std::vector<std::vector<double>>>(doc, "data", "class_shift");
  s.patch_noise = get<double>(doc, "data", "patch_noise");
  s.offset_scale = get<double>(doc, "data", "offset_scale");
  s.offset_direction = get<std::vector<double>>(doc, "data", "offset_direction");
  s.local_signal_strength = get<double>(doc, "data", "local_signal_strength");
  s.permute_patches = get<bool>(doc, "data", "permute_patches");
  c.idx.source_images = get<std::string>(doc, "data", "idx_source_images");
  c.idx.source_labels = get<std::string>(doc, "data", "idx_source_labels");
  c.idx.target_images = get<std::string>(doc, "data", "idx_target_images");
  c.idx.target_labels = get<std::string>(doc, "data", "idx_target_labels");
  c.idx.downsample_to = get<std::size_t>(doc, "data", "idx_downsample_to");
  c.idx.grid_h = get<std::size_t>(doc, "data", "idx_grid_h");
  c.idx.grid_w = get<std::size_t>(doc, "data", "idx_grid_w");

  c.model.input_dim = s.shape.input_dim;
  c.model.classes = s.class_count;
  c.model.hidden_dim = get<Eigen::Index>(doc, "model", "hidden_dim");
  c.model.channels = get<Eigen::Index>(doc, "model", "channels");
  c.model.depth = get<int>(doc, "model", "depth");
  c.model.final_relu = get<bool>(doc, "model", "final_relu");

  c.eta1 = get<double>(doc, "ground_cost", "eta1");
  c.eta2 = get<double>(doc, "ground_cost", "eta2");
  c.eta3 = get<double>(doc, "ground_cost", "eta3");
  c.projections = get<Eigen::Index>(doc, "ground_cost", "projections");
  if (!doc.at("ground_cost").at("projection_seed").is_null())
    c.projection_seed = get<std::uint64_t>(doc, "ground_cost", "projection_seed");
  c.renormalize_projections = get<bool>(doc, "ground_cost", "renormalize");
  c.learn_projections = get<bool>(doc, "ground_cost", "learn_projections");

  c.sinkhorn.epsilon = get<double>(doc, "sinkhorn", "epsilon");
  c.sinkhorn.tau = get<double>(doc, "sinkhorn", "tau");
  c.sinkhorn.max_iterations = get<int>(doc, "sinkhorn", "max_iterations");
  c.sinkhorn.tolerance = get<double>(doc, "sinkhorn", "tolerance");
  c.sinkhorn.log_domain = get<bool>(doc, "sinkhorn", "log_domain");

  c.schedule.chi0 = get<double>(doc, "optimizer", "chi0");
  c.schedule.mu = get<double>(doc, "optimizer", "mu");
  c.schedule.nu = get<double>(doc, "optimizer", "nu");
  c.schedule.classifier_multiplier = get<double>(doc, "optimizer", "classifier_multiplier");
  c.momentum = get<double>(doc, "optimizer", "momentum");
  c.weight_decay = get<double>(doc, "optimizer", "weight_decay");

  c.batch_size = get<std::size_t>(doc, "training", "batch_size");
  c.iterations = get<std::size_t>(doc, "training", "iterations");
  c.pretrain_epochs = get<std::size_t>(doc, "training", "pretrain_epochs");
  c.eval_interval = get<std::size_t>(doc, "training", "eval_interval");
  c.divergence_threshold = get<double>(doc, "training", "divergence_threshold");

  c.out_dir = get<std::string>(doc, "output", "dir");
  c.emit_plot_data = get<bool>(doc, "output", "emit_plot_data");

  try {
    c.image_solver = parse_image_solver(get<std::string>(doc, "ground_cost", "image_solver"));
    c.ablation.domain_solver = parse_domain_solver(get<std::string>(doc, "ablation", "domain_solver"));
    c.sinkhorn.validate();
    c.schedule.validate();
    c.model.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  c.ablation.use_swd = get<bool>(doc, "ablation", "use_swd");
  c.ablation.use_pooled = get<bool>(doc, "ablation", "use_pooled");
  c.ablation.use_ce = get<bool>(doc, "ablation", "use_ce");
  c.ablation.image_level_only = get<bool>(doc, "ablation", "image_level_only");
  c.ablation.source_only = get<bool>(doc, "ablation", "source_only");

  if (c.eta1 < 0 || c.eta2 < 0 || c.eta3 < 0) throw ConfigError("ground cost weights must be >= 0");
  if (c.projections < 1) throw ConfigError("ground_cost.projections must be >= 1");
  if (c.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  if (c.eval_interval < 1) throw ConfigError("training.eval_interval must be >= 1");
  if (c.momentum < 0 || c.momentum >= 1) throw ConfigError("optimizer.momentum must lie in [0, 1)");
  if (c.weight_decay < 0) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (!s.shift.empty() && static_cast<Eigen::Index>(s.shift.size()) != s.shape.input_dim)
    throw ConfigError("data.shift must have input_dim entries");
  if (!s.class_shift.empty()) {
    if (static_cast<Eigen::Index>(s.class_shift.size()) != s.class_count)
      throw ConfigError("data.class_shift must have one row per class");
    for (const auto& row : s.class_shift)
      if (static_cast<Eigen::Index>(row.size()) != s.shape.input_dim)
        throw ConfigError("data.class_shift rows must have input_dim entries");
  }
  if (!c.ablation.source_only && !c.ablation.image_level_only &&
      c.effective_eta1() + c.effective_eta2() + c.effective_eta3() <= 0.0)
    throw ConfigError("all ground cost terms are disabled");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  json doc = default_config_json();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json user = json::parse(in, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
    doc = merge_config(doc, user);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

std::vector<std::string> ablation_presets() { return {"source_only", "a", "b", "c", "d", "e"}; }

void apply_preset(ExperimentConfig& cfg, const std::string& preset) {
  AblationSwitches& s = cfg.ablation;
  s = AblationSwitches{};
  if (preset == "source_only") {
    s.source_only = true;
  } else if (preset == "a") {  // UOT + l2
    s.use_swd = false;
    s.use_ce = false;
  } else if (preset == "b") {  // EMD + l2 + CE
    s.domain_solver = DomainSolver::kExact;
    s.use_swd = false;
  } else if (preset == "c") {  // UOT + l2 + CE
    s.use_swd = false;
  } else if (preset == "d") {  // UOT + l2 + CE + SWD
  } else if (preset == "e") {  // image-level only: SWD averaged over all pairs
    s.image_level_only = true;
    s.use_pooled = false;
    s.use_ce = false;
  } else {
    throw ConfigError("unknown preset '" + preset + "' (expected source_only|a|b|c|d|e)");
  }
}

}  // namespace hierot
