#include "hierot/harness.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <numeric>
#include <random>

#include <omp.h>
#include <spdlog/spdlog.h>

#include "hierot/hot.hpp"

namespace hierot {

namespace {

using nlohmann::json;

// Independent streams from one experiment seed.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kDataStream = 0, kInitStream = 1, kSamplerStream = 3 };

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& all, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

struct Window {
  std::size_t count = 0;
  MetricsRecord sum;

  void add(const LossResult& r, const ExperimentConfig& cfg, bool hot) {
    ++count;
    sum.source_ce += r.source_ce;
    if (!hot) return;
    sum.transport_term += r.transport_term;
    sum.objective += r.objective;
    sum.marginal_deviation += r.hot.plan.marginal_deviation;
    const std::array<double, 3> eta{cfg.effective_eta1(), cfg.effective_eta2(), cfg.effective_eta3()};
    for (std::size_t t = 0; t < 3; ++t) {
      const double mean = r.hot.breakdown.terms[t].mean();
      sum.raw_terms[t] += mean;
      sum.weighted_terms[t] += eta[t] * mean;
    }
  }

  MetricsRecord finish(std::size_t iteration, double accuracy) {
    MetricsRecord rec = sum;
    const double n = count ? static_cast<double>(count) : 1.0;
    rec.iteration = iteration;
    rec.source_ce /= n;
    rec.transport_term /= n;
    rec.objective /= n;
    rec.marginal_deviation /= n;
    for (std::size_t t = 0; t < 3; ++t) {
      rec.raw_terms[t] /= n;
      rec.weighted_terms[t] /= n;
    }
    rec.target_accuracy = accuracy;
    *this = Window{};
    return rec;
  }
};

void pretrain(const ExperimentConfig& cfg, const LabeledDataset& source, ModelParams& params,
              SgdOptimizer& opt, std::mt19937_64& rng) {
  std::vector<std::size_t> order(source.size());
  for (std::size_t e = 0; e < cfg.pretrain_epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      const auto xs = gather(source.samples, idx);
      const auto ys = gather(source.labels, idx);
      const LossResult r = source_only_loss(xs, ys, params);
      opt.step(params, r.grads, cfg.schedule.chi0, classifier_lr_at(cfg.schedule, 0.0));
    }
  }
}

json summary_json(const ExperimentConfig& cfg, const TrainingResult& r) {
  const double mean_ms =
      r.iteration_ms.empty()
          ? 0.0
          : std::accumulate(r.iteration_ms.begin(), r.iteration_ms.end(), 0.0) /
                static_cast<double>(r.iteration_ms.size());
  return json{{"seed", cfg.seed},
              {"iterations", cfg.iterations},
              {"final_target_accuracy", r.final_record.target_accuracy},
              {"pretrain_source_accuracy", r.pretrain_source_accuracy},
              {"non_converged", r.non_converged},
              {"non_converged_fraction", r.non_converged_fraction},
              {"divergence_flagged", r.non_converged_fraction > cfg.divergence_threshold},
              {"mean_iteration_ms", mean_ms},
              {"config_hash", config_hash(r.params.dims)}};
}

void write_outputs(const ExperimentConfig& cfg, const TrainingResult& r) {
  if (cfg.out_dir.empty()) return;
  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  write_text(dir / "metrics.csv", metrics_csv(r.records));
  write_text(dir / "config.resolved.json", config_to_json(cfg).dump(2) + "\n");
  write_text(dir / "summary.json", summary_json(cfg, r).dump(2) + "\n");
  std::string timing = "iteration,ms\n";
  for (std::size_t i = 0; i < r.iteration_ms.size(); ++i)
    timing += std::to_string(i + 1) + "," + fmt_double(r.iteration_ms[i]) + "\n";
  write_text(dir / "timing.csv", timing);
  if (cfg.emit_plot_data) write_text(dir / "metrics_long.csv", metrics_long_csv(r.records));
  save_checkpoint(dir / "checkpoint.json", r.params, r.projections);
}

}  // namespace

void configure_logging() {
  const char* level = std::getenv("HIEROT_LOG");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  if (cfg.data_kind == "synthetic") {
    const auto& s = cfg.synthetic;
    ShiftSpec spec;
    if (!s.class_shift.empty()) {
      spec.global_shift.resize(s.class_count, s.shape.input_dim);
      for (Eigen::Index k = 0; k < s.class_count; ++k)
        for (Eigen::Index c = 0; c < s.shape.input_dim; ++c)
          spec.global_shift(k, c) = s.class_shift[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
    } else if (!s.shift.empty()) {
      spec.global_shift = uniform_shift(
          s.class_count, Eigen::Map<const Vector>(s.shift.data(), static_cast<Eigen::Index>(s.shift.size())));
    }
    spec.patch_noise = s.patch_noise;
    spec.offset_scale = s.offset_scale;
    if (!s.offset_direction.empty())
      spec.offset_direction = Eigen::Map<const Vector>(s.offset_direction.data(),
                                                       static_cast<Eigen::Index>(s.offset_direction.size()));
    spec.local_signal_strength = s.local_signal_strength;
    if (s.permute_patches) {
      spec.patch_permutation.resize(static_cast<std::size_t>(s.shape.patches));
      std::iota(spec.patch_permutation.begin(), spec.patch_permutation.end(), Eigen::Index{0});
      std::reverse(spec.patch_permutation.begin(), spec.patch_permutation.end());
    }
    SyntheticPair pair = gen_synthetic_pair(spec, s.class_count, s.n_source, s.n_target,
                                            stream_seed(cfg.seed, kDataStream), s.shape);
    d.source = std::move(pair.source);
    d.target = std::move(pair.target);
    d.target_labels = std::move(pair.target_labels);
  } else {
    const auto& x = cfg.idx;
    d.source = load_idx_digits(x.source_images, x.source_labels, x.downsample_to, x.grid_h, x.grid_w);
    LabeledDataset tgt =
        load_idx_digits(x.target_images, x.target_labels, x.downsample_to, x.grid_h, x.grid_w);
    const Eigen::Index classes = std::max(d.source.class_count, tgt.class_count);
    d.source.class_count = classes;
    d.target.samples = std::move(tgt.samples);
    d.target.class_count = classes;
    d.target_labels.labels = std::move(tgt.labels);
  }
  d.source.validate();
  if (d.source.size() == 0 || d.target.size() == 0) throw DataError("experiment data is empty");
  return d;
}

double evaluate(const ModelParams& params, const LabeledDataset& data) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vector p = pool_and_classify(embed(data.samples[i], params), params);
    Eigen::Index best = 0;
    p.maxCoeff(&best);
    if (best == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainingResult run_training(const ExperimentConfig& cfg) {
  return run_training(cfg, load_experiment_data(cfg));
}

TrainingResult run_training(const ExperimentConfig& cfg, const ExperimentData& data) {
  ModelDims dims = cfg.model;
  dims.input_dim = data.source.samples.front().channels();
  dims.classes = data.source.class_count;
  if (!cfg.ablation.source_only && cfg.effective_domain_solver() == DomainSolver::kExact &&
      static_cast<Eigen::Index>(cfg.batch_size) > kDefaultExactCap)
    throw ConfigError("exact domain solver supports batch sizes up to " +
                      std::to_string(kDefaultExactCap));

  TrainingResult result;
  result.params = ModelParams::init(dims, stream_seed(cfg.seed, kInitStream));
  ProjectionSet proj =
      ProjectionSet::random(cfg.projections, dims.channels, cfg.effective_projection_seed());
  std::mt19937_64 rng(stream_seed(cfg.seed, kSamplerStream));
  SgdOptimizer opt(cfg.momentum, cfg.weight_decay);
  const LabeledDataset target_eval = with_labels(data.target, data.target_labels);

  pretrain(cfg, data.source, result.params, opt, rng);
  if (cfg.pretrain_epochs > 0) result.pretrain_source_accuracy = evaluate(result.params, data.source);

  LossOptions options;
  options.sinkhorn = cfg.sinkhorn;
  options.domain_solver = cfg.effective_domain_solver();
  const bool counts_convergence = options.domain_solver == DomainSolver::kBalanced ||
                                  options.domain_solver == DomainSolver::kUnbalanced;
  const double eta1 = cfg.effective_eta1();
  const bool hot = !cfg.ablation.source_only;

  Window window;
  const std::size_t total = cfg.iterations;
  for (std::size_t t = 0; t < total; ++t) {
    const auto start = std::chrono::steady_clock::now();
    const double q = total > 1 ? static_cast<double>(t) / static_cast<double>(total - 1) : 0.0;
    const double lr = lr_at(cfg.schedule, q);
    const double lr_cls = classifier_lr_at(cfg.schedule, q);

    const Batch sb = class_balanced_sample(data.source, cfg.batch_size, rng);
    const Batch tb = random_sample(data.target.size(), cfg.batch_size, rng);
    const auto xs = gather(data.source.samples, sb.indices);
    const auto ys = gather(data.source.labels, sb.indices);

    LossResult r;
    if (hot) {
      const auto xt = gather(data.target.samples, tb.indices);
      GroundCostParams gp{eta1, cfg.effective_eta2(), cfg.effective_eta3(), proj, cfg.image_solver};
      r = deephot_loss(xs, ys, xt, gp, result.params, options);
      if (counts_convergence && !r.hot.plan.converged) ++result.non_converged;
    } else {
      r = source_only_loss(xs, ys, result.params);
    }
    opt.step(result.params, r.grads, lr, lr_cls);
    if (hot && eta1 > 0.0 && cfg.learn_projections && cfg.image_solver == ImageSolver::kSliced) {
      opt.step_extra(proj.mutable_directions(), r.d_projections, lr);
      if (cfg.renormalize_projections) proj.normalize();
    }
    result.iteration_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());

    window.add(r, cfg, hot);
    if ((t + 1) % cfg.eval_interval == 0 || t + 1 == total) {
      result.records.push_back(window.finish(t + 1, evaluate(result.params, target_eval)));
      spdlog::debug("seed {} iter {} acc {:.4f} ce {:.4f} hot {:.4f}", cfg.seed, t + 1,
                    result.records.back().target_accuracy, result.records.back().source_ce,
                    result.records.back().transport_term);
    }
  }
  if (total == 0) result.records.push_back(window.finish(0, evaluate(result.params, target_eval)));

  result.final_record = result.records.back();
  result.projections = proj.directions();
  result.non_converged_fraction =
      total ? static_cast<double>(result.non_converged) / static_cast<double>(total) : 0.0;
  write_outputs(cfg, result);
  spdlog::info("run seed={} solver={} swd={} final accuracy {:.4f}", cfg.seed,
               to_string(options.domain_solver), eta1 > 0.0, result.final_record.target_accuracy);
  if (result.non_converged_fraction > cfg.divergence_threshold)
    throw DivergenceError("domain solver failed to converge on " +
                          std::to_string(result.non_converged) + " of " + std::to_string(total) +
                          " iterations");
  return result;
}

std::string metrics_csv(const std::vector<MetricsRecord>& records) {
  std::string out =
      "iteration,source_ce,transport_term,objective,marginal_deviation,raw_swd,raw_pooled,raw_ce,"
      "weighted_swd,weighted_pooled,weighted_ce,target_accuracy\n";
  for (const auto& r : records) {
    out += std::to_string(r.iteration);
    for (double v : {r.source_ce, r.transport_term, r.objective, r.marginal_deviation, r.raw_terms[0],
                     r.raw_terms[1], r.raw_terms[2], r.weighted_terms[0], r.weighted_terms[1],
                     r.weighted_terms[2], r.target_accuracy})
      out += "," + fmt_double(v);
    out += "\n";
  }
  return out;
}

std::string metrics_long_csv(const std::vector<MetricsRecord>& records) {
  std::string out = "iteration,metric,value\n";
  for (const auto& r : records) {
    const std::pair<const char*, double> fields[] = {
        {"source_ce", r.source_ce},         {"transport_term", r.transport_term},
        {"objective", r.objective},         {"marginal_deviation", r.marginal_deviation},
        {"raw_swd", r.raw_terms[0]},        {"raw_pooled", r.raw_terms[1]},
        {"raw_ce", r.raw_terms[2]},         {"target_accuracy", r.target_accuracy}};
    for (const auto& [name, v] : fields)
      out += std::to_string(r.iteration) + "," + name + "," + fmt_double(v) + "\n";
  }
  return out;
}

// --- Sweeps ---------------------------------------------------------------------

std::vector<TrainingResult> run_many(const std::vector<ExperimentConfig>& cfgs, int jobs) {
  std::vector<TrainingResult> results(cfgs.size());
  std::vector<std::exception_ptr> errors(cfgs.size());
  const auto count = static_cast<std::ptrdiff_t>(cfgs.size());
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, jobs))
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      results[static_cast<std::size_t>(i)] = run_training(cfgs[static_cast<std::size_t>(i)]);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

namespace {

std::string sub_dir(const ExperimentConfig& base, const std::string& name) {
  return base.out_dir.empty() ? std::string() : (std::filesystem::path(base.out_dir) / name).string();
}

double max_relative_change(const std::vector<double>& acc) {
  double worst = 0.0;
  for (std::size_t k = 1; k < acc.size(); ++k)
    worst = std::max(worst, std::abs(acc[k] - acc[0]) / std::max(acc[0], 1e-12));
  return worst;
}

}  // namespace

SweepReport run_batch_size_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& sizes,
                                 std::size_t seeds, int jobs) {
  if (sizes.size() < 2) throw ConfigError("batch-size sweep needs at least two sizes");
  if (seeds < 1) throw ConfigError("sweep needs at least one seed");
  const std::vector<std::pair<std::string, DomainSolver>> solvers = {
      {"balanced", DomainSolver::kExact}, {"unbalanced", DomainSolver::kUnbalanced}};
  std::vector<ExperimentConfig> cfgs;
  std::vector<SweepRun> runs;
  for (const auto& [name, solver] : solvers)
    for (auto size : sizes)
      for (std::size_t s = 0; s < seeds; ++s) {
        ExperimentConfig c = cfg;
        apply_preset(c, "d");
        c.ablation.domain_solver = solver;
        c.batch_size = size;
        c.seed = cfg.seed + s;
        c.out_dir = sub_dir(cfg, name + "_bs" + std::to_string(size) + "_seed" + std::to_string(c.seed));
        cfgs.push_back(c);
        runs.push_back({name + "/" + std::to_string(size), c.seed, 0.0});
      }
  const auto results = run_many(cfgs, jobs);
  SweepReport report;
  json per_solver;
  std::size_t idx = 0;
  for (const auto& [name, solver] : solvers) {
    std::vector<double> means;
    json rows = json::array();
    for (auto size : sizes) {
      double acc = 0.0;
      for (std::size_t s = 0; s < seeds; ++s, ++idx) {
        runs[idx].accuracy = results[idx].final_record.target_accuracy;
        acc += runs[idx].accuracy;
      }
      means.push_back(acc / static_cast<double>(seeds));
      rows.push_back({{"batch_size", size}, {"mean_accuracy", means.back()}});
    }
    per_solver[name] = {{"sizes", rows}, {"max_relative_change", max_relative_change(means)}};
  }
  report.runs = std::move(runs);
  report.summary = {{"solvers", per_solver},
                    {"uot_more_robust", per_solver["unbalanced"]["max_relative_change"].get<double>() <
                                            per_solver["balanced"]["max_relative_change"].get<double>()}};
  return report;
}

SweepReport run_projection_sweep(const ExperimentConfig& cfg, const std::vector<Eigen::Index>& counts,
                                 std::size_t seeds, int jobs) {
  if (counts.empty()) throw ConfigError("projection sweep needs at least one projection count");
  for (auto m : counts)
    if (m < 1) throw ConfigError("projection counts must be >= 1");
  if (seeds < 1) throw ConfigError("sweep needs at least one seed");
  std::vector<ExperimentConfig> cfgs;
  std::vector<SweepRun> runs;
  for (auto m : counts)
    for (std::size_t s = 0; s < seeds; ++s) {
      ExperimentConfig c = cfg;
      apply_preset(c, "d");
      c.projections = m;
      c.seed = cfg.seed + s;
      c.out_dir = sub_dir(cfg, "M" + std::to_string(m) + "_seed" + std::to_string(c.seed));
      cfgs.push_back(c);
      runs.push_back({"M=" + std::to_string(m), c.seed, 0.0});
    }
  const auto results = run_many(cfgs, jobs);
  json rows = json::array();
  double lo = 1.0, hi = 0.0;
  std::size_t idx = 0;
  for (auto m : counts) {
    double acc = 0.0;
    for (std::size_t s = 0; s < seeds; ++s, ++idx) {
      runs[idx].accuracy = results[idx].final_record.target_accuracy;
      acc += runs[idx].accuracy;
    }
    acc /= static_cast<double>(seeds);
    lo = std::min(lo, acc);
    hi = std::max(hi, acc);
    rows.push_back({{"projections", m}, {"mean_accuracy", acc}});
  }
  SweepReport report;
  report.runs = std::move(runs);
  report.summary = {{"rows", rows}, {"spread", hi - lo}};
  return report;
}

SweepReport run_ablation(const ExperimentConfig& cfg, const std::vector<std::string>& presets,
                         std::size_t seeds, int jobs) {
  if (seeds < 1) throw ConfigError("ablation needs at least one seed");
  std::vector<ExperimentConfig> cfgs;
  std::vector<SweepRun> runs;
  for (const auto& p : presets)
    for (std::size_t s = 0; s < seeds; ++s) {
      ExperimentConfig c = cfg;
      apply_preset(c, p);
      c.seed = cfg.seed + s;
      c.out_dir = sub_dir(cfg, p + "_seed" + std::to_string(c.seed));
      cfgs.push_back(c);
      runs.push_back({p, c.seed, 0.0});
    }
  const auto results = run_many(cfgs, jobs);
  json rows = json::object();
  std::size_t idx = 0;
  for (const auto& p : presets) {
    double acc = 0.0;
    json per_seed = json::array();
    for (std::size_t s = 0; s < seeds; ++s, ++idx) {
      runs[idx].accuracy = results[idx].final_record.target_accuracy;
      per_seed.push_back(runs[idx].accuracy);
      acc += runs[idx].accuracy;
    }
    rows[p] = {{"mean_accuracy", acc / static_cast<double>(seeds)}, {"per_seed", per_seed}};
  }
  SweepReport report;
  report.runs = std::move(runs);
  report.summary = {{"presets", rows}};
  return report;
}

TimingReport run_timing_bench(const ExperimentConfig& cfg, std::size_t repeats) {
  if (repeats < 1) throw ConfigError("timing bench needs at least one repeat");
  constexpr std::size_t kFirst = 10;
  constexpr std::size_t kLast = 100;
  TimingReport report;
  report.variants = {"swd+uot", "exact+uot", "domain-only"};
  report.mean_ms.assign(report.variants.size(), {});
  const ExperimentData data = load_experiment_data(cfg);
  for (std::size_t rep = 0; rep < repeats; ++rep)
    for (std::size_t v = 0; v < report.variants.size(); ++v) {
      ExperimentConfig c = cfg;
      apply_preset(c, v == 2 ? "c" : "d");
      c.image_solver = v == 1 ? ImageSolver::kExact : ImageSolver::kSliced;
      c.iterations = kLast;
      c.pretrain_epochs = 0;
      c.eval_interval = kLast;
      c.out_dir.clear();
      const TrainingResult r = run_training(c, data);
      const double sum = std::accumulate(r.iteration_ms.begin() + (kFirst - 1), r.iteration_ms.end(), 0.0);
      report.mean_ms[v].push_back(sum / static_cast<double>(kLast - kFirst + 1));
    }
  json rows = json::object();
  std::size_t swd_faster = 0, domain_faster = 0;
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    if (report.mean_ms[0][rep] < report.mean_ms[1][rep]) ++swd_faster;
    if (report.mean_ms[2][rep] <= report.mean_ms[0][rep]) ++domain_faster;
  }
  for (std::size_t v = 0; v < report.variants.size(); ++v)
    rows[report.variants[v]] = report.mean_ms[v];
  report.summary = {{"window", {kFirst, kLast}},
                    {"mean_ms", rows},
                    {"swd_faster_than_exact", swd_faster},
                    {"domain_only_not_slower", domain_faster},
                    {"repeats", repeats}};
  return report;
}

}  // namespace hierot
