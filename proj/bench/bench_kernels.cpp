// Cost-matrix assembly (OpenMP vs serial reference) and the image-level kernels.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "hierot/hot.hpp"

using namespace hierot;

namespace {

struct Batch {
  ModelParams model;
  std::vector<PatchGrid> src, tgt;
  std::vector<Eigen::Index> labels;
  GroundCostParams params;
};

Batch make_batch(std::size_t n, Eigen::Index patches, Eigen::Index projections) {
  ModelDims dims;
  Batch b{ModelParams::init(dims, 1), {}, {}, {},
          GroundCostParams{0.1, 0.1, 1.0, ProjectionSet::random(projections, dims.channels, 2),
                           ImageSolver::kSliced}};
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix s(patches, dims.input_dim), t(patches, dims.input_dim);
    for (Eigen::Index k = 0; k < s.size(); ++k) s.data()[k] = normal(rng), t.data()[k] = normal(rng);
    b.src.push_back(embed(PatchGrid(s), b.model));
    b.tgt.push_back(embed(PatchGrid(t), b.model));
    b.labels.push_back(static_cast<Eigen::Index>(i) % dims.classes);
  }
  return b;
}

void BM_CostMatrixParallel(benchmark::State& state) {
  const auto b = make_batch(static_cast<std::size_t>(state.range(0)), 16, 16);
  for (auto _ : state)
    benchmark::DoNotOptimize(build_cost_matrix(b.src, b.labels, b.tgt, b.params, b.model));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}

void BM_CostMatrixSerial(benchmark::State& state) {
  const auto b = make_batch(static_cast<std::size_t>(state.range(0)), 16, 16);
  for (auto _ : state)
    benchmark::DoNotOptimize(build_cost_matrix_serial(b.src, b.labels, b.tgt, b.params, b.model));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}

void BM_Swd(benchmark::State& state) {
  const auto b = make_batch(2, state.range(0), 16);
  for (auto _ : state) benchmark::DoNotOptimize(swd(b.src[0], b.tgt[0], b.params.proj));
}

void BM_ExactPatchOt(benchmark::State& state) {
  const auto b = make_batch(2, state.range(0), 16);
  for (auto _ : state) benchmark::DoNotOptimize(exact_patch_ot(b.src[0], b.tgt[0]));
}

}  // namespace

BENCHMARK(BM_CostMatrixParallel)->Arg(10)->Arg(20)->Arg(40);
BENCHMARK(BM_CostMatrixSerial)->Arg(10)->Arg(20)->Arg(40);
BENCHMARK(BM_Swd)->Arg(9)->Arg(16)->Arg(36);
BENCHMARK(BM_ExactPatchOt)->Arg(9)->Arg(16)->Arg(36);

BENCHMARK_MAIN();
