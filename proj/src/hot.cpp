#include "hierot/hot.hpp"

#include <exception>

#include <cmath>
#include <string>
#include <vector>

#include <omp.h>

namespace hierot {

ImageSolver parse_image_solver(std::string_view name) {
  if (name == "swd") return ImageSolver::kSliced;
  if (name == "exact") return ImageSolver::kExact;
  throw InvariantError("unknown image solver '" + std::string(name) + "' (expected swd|exact)");
}

DomainSolver parse_domain_solver(std::string_view name) {
  if (name == "exact") return DomainSolver::kExact;
  if (name == "balanced") return DomainSolver::kBalanced;
  if (name == "unbalanced") return DomainSolver::kUnbalanced;
  if (name == "product") return DomainSolver::kProduct;
  throw InvariantError("unknown domain solver '" + std::string(name) +
                       "' (expected exact|balanced|unbalanced|product)");
}

std::string_view to_string(ImageSolver s) { return s == ImageSolver::kSliced ? "swd" : "exact"; }

std::string_view to_string(DomainSolver s) {
  switch (s) {
    case DomainSolver::kExact: return "exact";
    case DomainSolver::kBalanced: return "balanced";
    case DomainSolver::kUnbalanced: return "unbalanced";
    case DomainSolver::kProduct: return "product";
  }
  return "?";
}

void GroundCostParams::validate() const {
  if (eta1 < 0.0 || eta2 < 0.0 || eta3 < 0.0)
    throw InvariantError("ground cost weights must be nonnegative");
  if (!(eta1 > 0.0 || eta2 > 0.0 || eta3 > 0.0))
    throw InvariantError("at least one ground cost weight must be positive");
}

namespace {

double image_term(const PatchGrid& src, const PatchGrid& tgt, const GroundCostParams& params) {
  return params.image_solver == ImageSolver::kSliced ? swd(src, tgt, params.proj)
                                                     : exact_patch_ot(src, tgt);
}

void check_batches(std::span<const PatchGrid> src, std::span<const Eigen::Index> labels,
                   std::span<const PatchGrid> tgt) {
  if (src.empty() || tgt.empty()) throw InvariantError("cost matrix needs nonempty batches");
  if (labels.size() != src.size()) throw InvariantError("one label per source sample required");
}

struct PrecomputedTargets {
  std::vector<Vector> pooled;
  std::vector<Vector> probs;
};

PrecomputedTargets precompute(std::span<const PatchGrid> tgt, const ModelParams& model) {
  PrecomputedTargets out;
  for (const auto& g : tgt) {
    out.pooled.push_back(g.pooled());
    out.probs.push_back(classify_pooled(out.pooled.back(), model));
  }
  return out;
}

GroundCost pair_cost(const PatchGrid& src, const Vector& src_pooled, Eigen::Index label,
                     const PatchGrid& tgt, const Vector& tgt_pooled, const Vector& tgt_probs,
                     const GroundCostParams& params) {
  GroundCost gc;
  if (params.eta1 > 0.0) gc.terms[0] = image_term(src, tgt, params);
  if (params.eta2 > 0.0) gc.terms[1] = (src_pooled - tgt_pooled).squaredNorm();
  if (params.eta3 > 0.0) gc.terms[2] = cross_entropy(tgt_probs, label);
  gc.value = params.eta1 * gc.terms[0] + params.eta2 * gc.terms[1] + params.eta3 * gc.terms[2];
  return gc;
}

CostBreakdown assemble(const std::vector<GroundCost>& entries, Eigen::Index n, Eigen::Index m) {
  Matrix cost(n, m);
  CostBreakdown out;
  for (auto& t : out.terms) t.resize(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const GroundCost& gc = entries[static_cast<std::size_t>(i * m + j)];
      cost(i, j) = gc.value;
      for (std::size_t t = 0; t < 3; ++t) out.terms[t](i, j) = gc.terms[t];
    }
  out.cost = CostMatrix(std::move(cost));
  return out;
}

CostBreakdown build_impl(std::span<const PatchGrid> src, std::span<const Eigen::Index> labels,
                         std::span<const PatchGrid> tgt, const GroundCostParams& params,
                         const ModelParams& model, bool parallel) {
  check_batches(src, labels, tgt);
  params.validate();
  const auto n = static_cast<Eigen::Index>(src.size());
  const auto m = static_cast<Eigen::Index>(tgt.size());
  const PrecomputedTargets targets = precompute(tgt, model);
  std::vector<Vector> src_pooled;
  for (const auto& g : src) src_pooled.push_back(g.pooled());
  for (std::size_t i = 0; i < src.size(); ++i)
    if (labels[i] < 0 || labels[i] >= model.dims.classes)
      throw InvariantError("class index " + std::to_string(labels[i]) + " out of range");

  for (const auto* batch : {&src, &tgt})
    for (const auto& g : *batch)
      if (g.patch_count() != src[0].patch_count() || g.channels() != src[0].channels())
        throw InvariantError("cost matrix: all grids must share the same shape");
  if (params.eta1 > 0.0 && params.image_solver == ImageSolver::kSliced &&
      params.proj.channels() != src[0].channels())
    throw InvariantError("cost matrix: projection dimension does not match the grid channels");

  std::vector<GroundCost> entries(static_cast<std::size_t>(n * m));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n * m));
  const Eigen::Index total = n * m;
#pragma omp parallel for schedule(static) if (parallel)
  for (Eigen::Index p = 0; p < total; ++p) {
    const auto i = static_cast<std::size_t>(p / m);
    const auto j = static_cast<std::size_t>(p % m);
    try {
      entries[static_cast<std::size_t>(p)] = pair_cost(src[i], src_pooled[i], labels[i], tgt[j],
                                                       targets.pooled[j], targets.probs[j], params);
    } catch (...) {
      errors[static_cast<std::size_t>(p)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return assemble(entries, n, m);
}

}  // namespace

GroundCost ground_cost(const PatchGrid& src, Eigen::Index label, const PatchGrid& tgt,
                       const Vector& target_probs, const GroundCostParams& params) {
  params.validate();
  if (src.patch_count() != tgt.patch_count() || src.channels() != tgt.channels())
    throw InvariantError("ground_cost: source and target grids differ in shape");
  if (label < 0 || label >= target_probs.size())
    throw InvariantError("class index " + std::to_string(label) + " out of range");
  if (std::abs(target_probs.sum() - 1.0) > 1e-9)
    throw InvariantError("ground_cost: target probabilities do not sum to 1");
  return pair_cost(src, src.pooled(), label, tgt, tgt.pooled(), target_probs, params);
}

GroundCost ground_cost(const PatchGrid& src, Eigen::Index label, const PatchGrid& tgt,
                       const GroundCostParams& params, const ModelParams& model) {
  return ground_cost(src, label, tgt, pool_and_classify(tgt, model), params);
}

CostBreakdown build_cost_matrix(std::span<const PatchGrid> src, std::span<const Eigen::Index> labels,
                                std::span<const PatchGrid> tgt, const GroundCostParams& params,
                                const ModelParams& model) {
  return build_impl(src, labels, tgt, params, model, true);
}

CostBreakdown build_cost_matrix_serial(std::span<const PatchGrid> src,
                                       std::span<const Eigen::Index> labels,
                                       std::span<const PatchGrid> tgt,
                                       const GroundCostParams& params, const ModelParams& model) {
  return build_impl(src, labels, tgt, params, model, false);
}

TransportPlan domain_distance(const CostMatrix& cost, const SinkhornConfig& cfg) {
  if (cost.rows() != cost.cols()) throw InvariantError("domain_distance: cost must be square");
  const Vector u = uniform_weights(cost.rows());
  return unbalanced_sinkhorn(cost, u, u, cfg);
}

TransportPlan solve_domain(const CostMatrix& cost, DomainSolver solver, const SinkhornConfig& cfg) {
  const Vector a = uniform_weights(cost.rows());
  const Vector b = uniform_weights(cost.cols());
  switch (solver) {
    case DomainSolver::kExact: return exact_ot(cost, a, b);
    case DomainSolver::kBalanced: return sinkhorn(cost, a, b, cfg);
    case DomainSolver::kUnbalanced: return domain_distance(cost, cfg);
    case DomainSolver::kProduct: return make_plan(a * b.transpose(), cost);
  }
  throw InvariantError("unknown domain solver");
}

namespace {

struct Embedded {
  std::vector<PatchGrid> grids;
  std::vector<EmbedTrace> traces;
};

Embedded embed_all(std::span<const PatchGrid> raw, const ModelParams& model) {
  Embedded out;
  out.grids.reserve(raw.size());
  out.traces.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out.grids.push_back(embed(raw[i], model, &out.traces[i]));
  return out;
}

// Spreads d loss / d pooled evenly over the K rows.
void add_pooled_grad(Matrix& d_grid, const Vector& d_pooled) {
  d_grid.rowwise() += (d_pooled / static_cast<double>(d_grid.rows())).transpose();
}

double add_source_ce(const Embedded& src, std::span<const Eigen::Index> labels,
                     const ModelParams& model, ModelParams& grads, std::vector<Matrix>& d_src) {
  const double w = 1.0 / static_cast<double>(src.grids.size());
  double ce = 0.0;
  for (std::size_t i = 0; i < src.grids.size(); ++i) {
    const Vector pooled = src.grids[i].pooled();
    const Vector probs = classify_pooled(pooled, model);
    ce += w * cross_entropy(probs, labels[i]);
    add_pooled_grad(d_src[i], cross_entropy_backward(pooled, probs, labels[i], w, model, grads));
  }
  return ce;
}

std::vector<Matrix> zero_grads(const Embedded& e) {
  std::vector<Matrix> out;
  for (const auto& g : e.grids) out.push_back(Matrix::Zero(g.patch_count(), g.channels()));
  return out;
}

}  // namespace

LossResult source_only_loss(std::span<const PatchGrid> src_raw,
                            std::span<const Eigen::Index> labels, const ModelParams& model) {
  if (src_raw.empty()) throw InvariantError("source batch is empty");
  if (labels.size() != src_raw.size()) throw InvariantError("one label per source sample required");
  LossResult out;
  out.grads = model.zeros_like();
  const Embedded src = embed_all(src_raw, model);
  std::vector<Matrix> d_src = zero_grads(src);
  out.source_ce = add_source_ce(src, labels, model, out.grads, d_src);
  out.loss = out.source_ce;
  for (std::size_t i = 0; i < src.grids.size(); ++i)
    embed_backward(src.traces[i], d_src[i], model, out.grads);
  return out;
}

LossResult deephot_loss(std::span<const PatchGrid> src_raw, std::span<const Eigen::Index> labels,
                        std::span<const PatchGrid> tgt_raw, const GroundCostParams& params,
                        const ModelParams& model, const LossOptions& options) {
  check_batches(src_raw, labels, tgt_raw);
  if (src_raw.size() != tgt_raw.size())
    throw InvariantError("deephot_loss: source and target batches must have equal size");
  LossResult out;
  out.grads = model.zeros_like();
  out.d_projections = Matrix::Zero(params.proj.count(), params.proj.channels());

  const Embedded src = embed_all(src_raw, model);
  const Embedded tgt = embed_all(tgt_raw, model);
  std::vector<Matrix> d_src = zero_grads(src);
  std::vector<Matrix> d_tgt = zero_grads(tgt);

  out.source_ce = add_source_ce(src, labels, model, out.grads, d_src);

  // (1) costs and domain plan with everything fixed
  if (params.eta1 == 0.0 && params.eta2 == 0.0 && params.eta3 == 0.0) {
    const auto n = static_cast<Eigen::Index>(src.grids.size());
    out.hot.breakdown.cost = CostMatrix(Matrix::Zero(n, n));
    for (auto& t : out.hot.breakdown.terms) t = Matrix::Zero(n, n);
  } else {
    out.hot.breakdown = build_cost_matrix(src.grids, labels, tgt.grids, params, model);
  }
  const CostMatrix& cost = out.hot.breakdown.cost;
  if (options.frozen_plan) {
    if (options.frozen_plan->rows() != cost.rows() || options.frozen_plan->cols() != cost.cols())
      throw InvariantError("frozen plan shape does not match the cost matrix");
    out.hot.plan = make_plan(*options.frozen_plan, cost);
  } else {
    out.hot.plan = solve_domain(cost, options.domain_solver, options.sinkhorn);
  }
  const Matrix& plan = out.hot.plan.coupling;
  out.hot.hot_value = out.hot.plan.objective_value;
  out.transport_term = out.hot.plan.transport_value;
  out.objective = out.hot.plan.objective_value;
  out.loss = out.source_ce + out.transport_term;

  // (2) gradient of <plan, cost> with the plan frozen
  const auto n = static_cast<Eigen::Index>(src.grids.size());
  std::vector<Vector> tgt_pooled;
  std::vector<Vector> tgt_probs;
  for (const auto& g : tgt.grids) {
    tgt_pooled.push_back(g.pooled());
    tgt_probs.push_back(classify_pooled(tgt_pooled.back(), model));
  }
  std::vector<Vector> src_pooled;
  for (const auto& g : src.grids) src_pooled.push_back(g.pooled());

  if (params.eta1 > 0.0) {
    // Pair gradients are computed independently, then reduced in a fixed order.
    std::vector<SwdGrad> pair(static_cast<std::size_t>(n * n));
    std::vector<PatchOtGrad> pair_exact(params.image_solver == ImageSolver::kExact ? pair.size() : 0);
    const Eigen::Index total = n * n;
#pragma omp parallel for schedule(static)
    for (Eigen::Index p = 0; p < total; ++p) {
      const auto i = static_cast<std::size_t>(p / n);
      const auto j = static_cast<std::size_t>(p % n);
      if (plan(p / n, p % n) == 0.0) continue;
      if (params.image_solver == ImageSolver::kSliced)
        pair[static_cast<std::size_t>(p)] = swd_grad(src.grids[i], tgt.grids[j], params.proj);
      else
        pair_exact[static_cast<std::size_t>(p)] = exact_patch_ot_grad(src.grids[i], tgt.grids[j]);
    }
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        const double w = plan(i, j) * params.eta1;
        if (plan(i, j) == 0.0) continue;
        const auto p = static_cast<std::size_t>(i * n + j);
        if (params.image_solver == ImageSolver::kSliced) {
          d_src[static_cast<std::size_t>(i)] += w * pair[p].d_zi;
          d_tgt[static_cast<std::size_t>(j)] += w * pair[p].d_zj;
          out.d_projections += w * pair[p].d_theta;
        } else {
          d_src[static_cast<std::size_t>(i)] += w * pair_exact[p].d_zi;
          d_tgt[static_cast<std::size_t>(j)] += w * pair_exact[p].d_zj;
        }
      }
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto is = static_cast<std::size_t>(i);
    Vector d_src_pooled = Vector::Zero(src_pooled[is].size());
    for (Eigen::Index j = 0; j < n; ++j) {
      const double g = plan(i, j);
      if (g == 0.0) continue;
      const auto js = static_cast<std::size_t>(j);
      Vector d_tgt_pooled = Vector::Zero(tgt_pooled[js].size());
      if (params.eta2 > 0.0) {
        const Vector diff = 2.0 * g * params.eta2 * (src_pooled[is] - tgt_pooled[js]);
        d_src_pooled += diff;
        d_tgt_pooled -= diff;
      }
      if (params.eta3 > 0.0)
        d_tgt_pooled += cross_entropy_backward(tgt_pooled[js], tgt_probs[js], labels[is],
                                               g * params.eta3, model, out.grads);
      add_pooled_grad(d_tgt[js], d_tgt_pooled);
    }
    add_pooled_grad(d_src[is], d_src_pooled);
  }

  for (std::size_t i = 0; i < src.grids.size(); ++i)
    embed_backward(src.traces[i], d_src[i], model, out.grads);
  for (std::size_t j = 0; j < tgt.grids.size(); ++j)
    embed_backward(tgt.traces[j], d_tgt[j], model, out.grads);
  return out;
}

}  // namespace hierot
