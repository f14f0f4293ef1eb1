#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hierot/config.hpp"
#include "hierot/harness.hpp"

using namespace hierot;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hierot_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config(const std::vector<std::string>& extra = {}) {
  std::vector<std::string> o{"data.n_source=200", "data.n_target=200", "training.iterations=40",
                             "training.eval_interval=10"};
  o.insert(o.end(), extra.begin(), extra.end());
  return load_config({}, o);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HIEROT_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config rejects unknown keys and mistyped values") {
  CHECK_THROWS_AS(load_config({}, {"training.iteratons=5"}), ConfigError);
  CHECK_THROWS_AS(load_config({}, {"nonsense=1"}), ConfigError);
  CHECK_THROWS_AS(load_config({}, {"training.iterations=\"many\""}), ConfigError);
  CHECK_THROWS_AS(load_config({}, {"sinkhorn.epsilon=-1"}), ConfigError);
  CHECK_THROWS_AS(load_config({}, {"ablation.domain_solver=simplex"}), ConfigError);
  CHECK_THROWS_AS(load_config({}, {"novalue"}), ConfigError);
  const auto path = fresh_dir("cfg") / "bad.json";
  std::ofstream(path) << R"({"model": {"width": 3}})";
  CHECK_THROWS_AS(load_config(path, {}), ConfigError);
}

TEST_CASE("config overrides and JSON round trip") {
  const auto c = load_config({}, {"training.iterations=7", "ground_cost.eta1=0.25", "seed=9",
                                  "ablation.domain_solver=exact", "ground_cost.projection_seed=4"});
  CHECK(c.iterations == 7);
  CHECK(c.eta1 == 0.25);
  CHECK(c.seed == 9);
  CHECK(c.ablation.domain_solver == DomainSolver::kExact);
  CHECK(c.effective_projection_seed() == 4);
  const auto again = config_from_json(config_to_json(c));
  CHECK(config_to_json(again) == config_to_json(c));
  CHECK(load_config({}, {}).effective_projection_seed() == 2);
}

TEST_CASE("ablation presets map to switches") {
  auto c = load_config({}, {});
  apply_preset(c, "c");
  CHECK(c.effective_eta1() == 0.0);
  CHECK(c.effective_domain_solver() == DomainSolver::kUnbalanced);
  apply_preset(c, "b");
  CHECK(c.effective_domain_solver() == DomainSolver::kExact);
  apply_preset(c, "a");
  CHECK(c.effective_eta3() == 0.0);
  apply_preset(c, "e");
  CHECK(c.effective_domain_solver() == DomainSolver::kProduct);
  CHECK(c.effective_eta2() == 0.0);
  CHECK(c.effective_eta3() == 0.0);
  CHECK(c.effective_eta1() > 0.0);
  apply_preset(c, "d");
  CHECK(c.effective_eta1() > 0.0);
  CHECK(c.effective_eta3() > 0.0);
  CHECK_THROWS_AS(apply_preset(c, "z"), ConfigError);
}

TEST_CASE("zero iterations is an evaluation-only run") {
  auto c = small_config({"training.iterations=0"});
  c.out_dir = fresh_dir("t0").string();
  const auto r = run_training(c);
  REQUIRE(r.records.size() == 1);
  CHECK(r.records[0].iteration == 0);
  CHECK(r.iteration_ms.empty());
  const auto data = load_experiment_data(c);
  CHECK(r.final_record.target_accuracy == evaluate(r.params, with_labels(data.target, data.target_labels)));
  CHECK(fs::exists(fs::path(c.out_dir) / "metrics.csv"));
  CHECK(fs::exists(fs::path(c.out_dir) / "checkpoint.json"));
}

TEST_CASE("training writes one record per eval interval and all outputs") {
  auto c = small_config();
  c.out_dir = fresh_dir("outputs").string();
  c.emit_plot_data = true;
  const auto r = run_training(c);
  REQUIRE(r.records.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.records[i].iteration == 10 * (i + 1));
  CHECK(r.iteration_ms.size() == 40);
  for (const auto& rec : r.records) CHECK(rec.objective >= rec.transport_term - 1e-12);
  for (const char* f : {"metrics.csv", "summary.json", "config.resolved.json", "checkpoint.json",
                        "timing.csv", "metrics_long.csv"})
    CHECK(fs::exists(fs::path(c.out_dir) / f));
  const auto csv = slurp(fs::path(c.out_dir) / "metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  const auto resolved = nlohmann::json::parse(slurp(fs::path(c.out_dir) / "config.resolved.json"));
  CHECK(config_from_json(resolved).iterations == 40);
}

TEST_CASE("identical configs give byte-identical metrics") {
  auto a = small_config({"ablation.domain_solver=unbalanced"});
  auto b = a;
  a.out_dir = fresh_dir("det-a").string();
  b.out_dir = fresh_dir("det-b").string();
  run_training(a);
  run_training(b);
  CHECK(slurp(fs::path(a.out_dir) / "metrics.csv") == slurp(fs::path(b.out_dir) / "metrics.csv"));
  auto c = a;
  c.seed = 1;
  c.out_dir = fresh_dir("det-c").string();
  run_training(c);
  CHECK(slurp(fs::path(a.out_dir) / "metrics.csv") != slurp(fs::path(c.out_dir) / "metrics.csv"));
}

TEST_CASE("parallel sweeps reproduce serial runs") {
  auto c = small_config();
  std::vector<ExperimentConfig> cfgs{c, c, c};
  cfgs[1].seed = 1;
  cfgs[2].seed = 2;
  const auto par = run_many(cfgs, 3);
  const auto ser = run_many(cfgs, 1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(metrics_csv(par[i].records) == metrics_csv(ser[i].records));
}

TEST_CASE("checkpoint round trip and evaluation") {
  auto c = small_config();
  c.out_dir = fresh_dir("ckpt").string();
  const auto r = run_training(c);
  const auto ck = load_checkpoint(fs::path(c.out_dir) / "checkpoint.json");
  CHECK(ck.hash == config_hash(c.model));
  CHECK(ck.projections == r.projections);
  std::vector<Matrix> a, b;
  r.params.for_each([&](const std::string&, const Matrix& m, bool) { a.push_back(m); });
  ck.params.for_each([&](const std::string&, const Matrix& m, bool) { b.push_back(m); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  const auto data = load_experiment_data(c);
  const auto target = with_labels(data.target, data.target_labels);
  CHECK(evaluate(ck, target) == r.final_record.target_accuracy);

  CHECK_THROWS_AS(evaluate(ck, LabeledDataset{}), DataError);
  auto wrong = small_config({"data.input_dim=3"});
  const auto other = load_experiment_data(wrong);
  CHECK_THROWS_AS(evaluate(ck, other.source), DataError);

  const auto tampered = fresh_dir("ckpt-bad") / "checkpoint.json";
  auto doc = nlohmann::json::parse(slurp(fs::path(c.out_dir) / "checkpoint.json"));
  doc["config_hash"] = "0000000000000000";
  std::ofstream(tampered) << doc.dump();
  CHECK_THROWS(load_checkpoint(tampered));
}

TEST_CASE("uniform classifier scores near chance") {
  auto c = small_config({"data.n_target=2000"});
  const auto data = load_experiment_data(c);
  auto params = ModelParams::init(c.model, 0);
  params.classifier.weight.setZero();
  params.classifier.bias.setZero();
  const double acc = evaluate(params, with_labels(data.target, data.target_labels));
  // All-equal scores resolve to one class, which holds a fifth of the labels.
  CHECK(acc == doctest::Approx(0.2).epsilon(0.05));
}

TEST_CASE("source pretraining separates the synthetic source domain") {
  auto c = load_config({}, {"training.iterations=0", "training.pretrain_epochs=3"});
  const auto r = run_training(c);
  CHECK(r.pretrain_source_accuracy >= 0.95);
}

TEST_CASE("without a shift a source-only model transfers without a gap") {
  auto c = load_config({}, {"data.offset_scale=0", "data.permute_patches=false", "training.iterations=500"});
  apply_preset(c, "source_only");
  const auto data = load_experiment_data(c);
  const auto r = run_training(c, data);
  const double src = evaluate(r.params, data.source);
  CHECK(std::abs(src - r.final_record.target_accuracy) < 0.03);
}

TEST_CASE("sweep argument validation") {
  auto c = small_config();
  CHECK_THROWS_AS(run_batch_size_sweep(c, {10}, 1, 1), ConfigError);
  CHECK_THROWS_AS(run_projection_sweep(c, {}, 1, 1), ConfigError);
  CHECK_THROWS_AS(run_projection_sweep(c, {0}, 1, 1), ConfigError);
  const auto one = run_projection_sweep(small_config({"training.iterations=5"}), {1}, 1, 1);
  CHECK(one.runs.size() == 1);
}

TEST_CASE("divergence beyond the threshold is reported after outputs are written") {
  auto c = small_config({"sinkhorn.max_iterations=1", "sinkhorn.tolerance=1e-300", "training.iterations=10"});
  c.out_dir = fresh_dir("diverge").string();
  CHECK_THROWS_AS(run_training(c), DivergenceError);
  CHECK(fs::exists(fs::path(c.out_dir) / "summary.json"));
  const auto summary = nlohmann::json::parse(slurp(fs::path(c.out_dir) / "summary.json"));
  CHECK(summary["divergence_flagged"] == true);
}

TEST_CASE("CLI exit codes") {
  const auto dir = fresh_dir("cli");
  const std::string out = " --out-dir " + (dir / "run").string();
  const std::string small = " --set data.n_source=100 --set data.n_target=100 --set training.iterations=3";
  CHECK(run_cli("train" + small + out) == 0);
  CHECK(fs::exists(dir / "run" / "metrics.csv"));
  CHECK(run_cli("eval --checkpoint " + (dir / "run" / "checkpoint.json").string() + small + out) == 0);
  CHECK(run_cli("train --set training.bogus=1" + out) == 2);
  CHECK(run_cli("train --set data.kind=idx --set data.idx_source_images=/nonexistent" + out) == 3);
  CHECK(run_cli("train" + small + " --set sinkhorn.max_iterations=1 --set sinkhorn.tolerance=1e-300" + out) == 4);
  CHECK(run_cli("gen-data --set data.n_source=10 --set data.n_target=10 --out-dir " + (dir / "gen").string()) == 0);
}
