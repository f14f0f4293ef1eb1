#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>

#include "hierot/measures.hpp"
#include "hierot/model.hpp"
#include "hierot/solvers.hpp"

namespace hierot {

/// How the image-level term compares two patch grids.
enum class ImageSolver { kSliced, kExact };

/// How the domain-level coupling over a mini-batch is obtained.
/// kProduct is the image-level-only ablation: every pair weighted 1/n^2.
enum class DomainSolver { kExact, kBalanced, kUnbalanced, kProduct };

ImageSolver parse_image_solver(std::string_view name);
DomainSolver parse_domain_solver(std::string_view name);
std::string_view to_string(ImageSolver s);
std::string_view to_string(DomainSolver s);

/// Weights of the three ground-cost terms plus the projection set.
struct GroundCostParams {
  double eta1 = 0.1;  // sliced (or exact) patch-level OT
  double eta2 = 0.1;  // squared distance of pooled embeddings
  double eta3 = 1.0;  // cross-entropy of the target prediction against the source label
  ProjectionSet proj;
  ImageSolver image_solver = ImageSolver::kSliced;

  void validate() const;
};

struct GroundCost {
  double value = 0.0;
  std::array<double, 3> terms{};  // unweighted
};

/// Ground cost between an embedded source grid with its label and an
/// embedded target grid whose class probabilities are target_probs.
/// Terms whose weight is zero are not evaluated and reported as 0.
GroundCost ground_cost(const PatchGrid& src, Eigen::Index label, const PatchGrid& tgt,
                       const Vector& target_probs, const GroundCostParams& params);

/// Same, with target_probs computed by the model's classifier.
GroundCost ground_cost(const PatchGrid& src, Eigen::Index label, const PatchGrid& tgt,
                       const GroundCostParams& params, const ModelParams& model);

/// Weighted cost matrix and its three unweighted term matrices.
struct CostBreakdown {
  CostMatrix cost{Matrix()};
  std::array<Matrix, 3> terms;
};

/// Entry (i, j) = ground_cost(src[i], labels[i], tgt[j]). Entries are filled
/// in parallel; the result does not depend on the thread schedule.
CostBreakdown build_cost_matrix(std::span<const PatchGrid> src, std::span<const Eigen::Index> labels,
                                std::span<const PatchGrid> tgt, const GroundCostParams& params,
                                const ModelParams& model);

/// Single-threaded reference for build_cost_matrix.
CostBreakdown build_cost_matrix_serial(std::span<const PatchGrid> src,
                                       std::span<const Eigen::Index> labels,
                                       std::span<const PatchGrid> tgt,
                                       const GroundCostParams& params, const ModelParams& model);

/// Unbalanced Sinkhorn between uniform mini-batch marginals.
TransportPlan domain_distance(const CostMatrix& cost, const SinkhornConfig& cfg);

/// Domain-level coupling for the chosen solver with uniform marginals.
TransportPlan solve_domain(const CostMatrix& cost, DomainSolver solver, const SinkhornConfig& cfg);

struct HotResult {
  CostBreakdown breakdown;
  TransportPlan plan;
  double hot_value = 0.0;  // objective of plan against the cost
};

struct LossOptions {
  SinkhornConfig sinkhorn;
  DomainSolver domain_solver = DomainSolver::kUnbalanced;
  // Replaces the solved coupling (tests use it to freeze arbitrary plans).
  std::optional<Matrix> frozen_plan;
};

struct LossResult {
  double loss = 0.0;            // source CE + <plan, cost>
  double source_ce = 0.0;
  double transport_term = 0.0;  // <plan, cost>
  double objective = 0.0;       // domain objective incl. regularizers; diagnostic only
  HotResult hot;
  ModelParams grads;
  Matrix d_projections;
};

/// Forward pass, domain plan, and gradients of the frozen-plan loss
///   mean_i CE(y_i, f(pool(g(x_i^s)))) + sum_ij plan_ij cost_ij
/// with respect to the model and the projection directions.
LossResult deephot_loss(std::span<const PatchGrid> src_raw, std::span<const Eigen::Index> labels,
                        std::span<const PatchGrid> tgt_raw, const GroundCostParams& params,
                        const ModelParams& model, const LossOptions& options);

/// Source cross-entropy only, with gradients (source-only training and pretraining).
LossResult source_only_loss(std::span<const PatchGrid> src_raw,
                            std::span<const Eigen::Index> labels, const ModelParams& model);

}  // namespace hierot
