#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace hierot {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised when a value type is constructed from inputs that violate its invariants.
class InvariantError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Empirical measure: n support points of dimension d with nonnegative weights.
///
/// Weights need not sum to one (unbalanced marginals carry arbitrary positive
/// mass); is_probability() tells whether the simplex invariant holds.
/// Zero-weight support points are allowed and counted by zero_weight_count().
class DiscreteMeasure {
 public:
  DiscreteMeasure(Matrix points, Vector weights);

  const Matrix& points() const { return points_; }
  const Vector& weights() const { return weights_; }
  std::size_t size() const { return static_cast<std::size_t>(weights_.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(points_.cols()); }
  double total_mass() const { return weights_.sum(); }
  bool is_probability(double tol = 1e-9) const;
  std::size_t zero_weight_count() const;

 private:
  Matrix points_;
  Vector weights_;
};

/// Uniform measure over the given points. Throws InvariantError when the
/// list is empty or the points disagree on dimension.
DiscreteMeasure make_uniform_measure(std::span<const std::vector<double>> points);
DiscreteMeasure make_uniform_measure(const Matrix& points);

/// Nonnegative, finite cost matrix (rows index the source, columns the target).
class CostMatrix {
 public:
  explicit CostMatrix(Matrix entries);

  const Matrix& entries() const { return entries_; }
  Eigen::Index rows() const { return entries_.rows(); }
  Eigen::Index cols() const { return entries_.cols(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }
  double max() const { return entries_.size() ? entries_.maxCoeff() : 0.0; }

 private:
  Matrix entries_;
};

/// Pairwise squared Euclidean distances between the rows of two point sets.
CostMatrix squared_euclidean_cost(const Matrix& source, const Matrix& target);

/// Coupling returned by every solver together with its diagnostics.
///
/// transport_value is always the Frobenius product <coupling, cost> of the
/// cost the plan was solved against. objective_value carries the full
/// regularized objective for entropic / unbalanced solvers and equals
/// transport_value for the exact solver.
struct TransportPlan {
  Matrix coupling;
  double transport_value = 0.0;
  double objective_value = 0.0;
  int iterations_used = 0;
  bool converged = true;
  double marginal_deviation = 0.0;
};

TransportPlan make_plan(Matrix coupling, const CostMatrix& cost);

/// Row and column sums of the coupling.
std::pair<Vector, Vector> plan_marginals(const TransportPlan& plan);

/// <coupling, cost>_F.
double frobenius(const Matrix& coupling, const CostMatrix& cost);

/// Uniform weight vector 1/n.
Vector uniform_weights(Eigen::Index n);

}  // namespace hierot
