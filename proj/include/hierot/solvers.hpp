#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>

#include "hierot/measures.hpp"
#include "hierot/patch_grid.hpp"

namespace hierot {

/// Raised by a solver that cannot run on the given input (size cap, infeasible marginals).
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Exact OT

inline constexpr Eigen::Index kDefaultExactCap = 64;

/// Exact discrete OT by successive shortest paths on the transportation
/// network. a and b must lie on the simplex (sums within 1e-9 of each other
/// and of one). Intended as a correctness oracle and for small problems.
TransportPlan exact_ot(const CostMatrix& cost, const Vector& a, const Vector& b,
                       Eigen::Index size_cap = kDefaultExactCap);

// ---------------------------------------------------------------------------
// Entropic solvers

struct SinkhornConfig {
  double epsilon = 0.1;
  double tau = 1.0;
  int max_iterations = 1000;
  double tolerance = 1e-6;
  bool log_domain = true;
  int check_every = 10;

  void validate() const;
};

/// Balanced entropic OT, regularized by epsilon * KL(coupling | a x b).
/// objective_value carries the regularized value; transport_value <coupling, cost>.
/// epsilon == 0 is dispatched to exact_ot.
TransportPlan sinkhorn(const CostMatrix& cost, const Vector& a, const Vector& b,
                       const SinkhornConfig& cfg);

/// Unbalanced entropic OT with KL marginal penalties:
///   <P, C> + eps KL(P | a x b) + tau (KL(P 1 | a) + KL(P^T 1 | b)),
/// solved by generalized Sinkhorn scaling with damping exponent tau / (tau + eps).
TransportPlan unbalanced_sinkhorn(const CostMatrix& cost, const Vector& a, const Vector& b,
                                  const SinkhornConfig& cfg);

/// Generalized KL divergence sum p log(p/q) - p + q with 0 log 0 = 0.
double generalized_kl(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q);

/// Value of the unbalanced objective above for an arbitrary coupling.
double unbalanced_objective(const Matrix& coupling, const CostMatrix& cost, const Vector& a,
                            const Vector& b, double epsilon, double tau);

// ---------------------------------------------------------------------------
// One-dimensional and patch-level OT

/// Squared-cost OT between two equal-size uniform 1-D samples, returned
/// without the 1/K weight: sum_k (sort(x)_k - sort(y)_k)^2.
double ot_1d(std::span<const double> x, std::span<const double> y);

/// Exact OT between the uniform patch measures of two grids under squared
/// Euclidean ground cost (weights 1/K, so K * exact_patch_ot == ot_1d for C = 1).
double exact_patch_ot(const PatchGrid& zi, const PatchGrid& zj,
                      Eigen::Index size_cap = kDefaultExactCap);

struct PatchOtGrad {
  double value = 0.0;
  Matrix d_zi;
  Matrix d_zj;
};

/// exact_patch_ot together with its gradient at the (fixed) optimal coupling.
PatchOtGrad exact_patch_ot_grad(const PatchGrid& zi, const PatchGrid& zj,
                                Eigen::Index size_cap = kDefaultExactCap);

// ---------------------------------------------------------------------------
// Sliced Wasserstein distance

/// M projection directions, one per row.
class ProjectionSet {
 public:
  ProjectionSet(Matrix directions, std::uint64_t seed = 0);

  /// Rows drawn from a standard Gaussian and scaled to unit norm.
  static ProjectionSet random(Eigen::Index count, Eigen::Index channels, std::uint64_t seed);

  const Matrix& directions() const { return directions_; }
  Matrix& mutable_directions() { return directions_; }
  Eigen::Index count() const { return directions_.rows(); }
  Eigen::Index channels() const { return directions_.cols(); }
  std::uint64_t seed() const { return seed_; }

  /// Rescale every row to unit Euclidean norm. Rows of zero norm are left untouched.
  void normalize();

 private:
  Matrix directions_;
  std::uint64_t seed_;
};

/// (1/M) sum_m || sort(zi theta_m) - sort(zj theta_m) ||^2 (no 1/K factor).
/// Ties in the projections are ordered by patch index.
double swd(const PatchGrid& zi, const PatchGrid& zj, const ProjectionSet& proj);

struct SwdGrad {
  double value = 0.0;
  Matrix d_zi;
  Matrix d_zj;
  Matrix d_theta;
};

/// swd and its gradient with the sorting permutations held fixed.
SwdGrad swd_grad(const PatchGrid& zi, const PatchGrid& zj, const ProjectionSet& proj);

}  // namespace hierot
