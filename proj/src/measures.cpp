#include "hierot/measures.hpp"

#include <cmath>

namespace hierot {

DiscreteMeasure::DiscreteMeasure(Matrix points, Vector weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (weights_.size() == 0) throw InvariantError("measure must have at least one point");
  if (points_.rows() != weights_.size())
    throw InvariantError("measure has " + std::to_string(points_.rows()) + " points but " +
                         std::to_string(weights_.size()) + " weights");
  for (Eigen::Index i = 0; i < weights_.size(); ++i) {
    if (!std::isfinite(weights_[i]) || weights_[i] < 0.0)
      throw InvariantError("measure weight " + std::to_string(i) + " is negative or not finite");
  }
  if (!points_.allFinite()) throw InvariantError("measure points must be finite");
}

bool DiscreteMeasure::is_probability(double tol) const {
  return std::abs(total_mass() - 1.0) <= tol;
}

std::size_t DiscreteMeasure::zero_weight_count() const {
  return static_cast<std::size_t>((weights_.array() == 0.0).count());
}

DiscreteMeasure make_uniform_measure(std::span<const std::vector<double>> points) {
  if (points.empty()) throw InvariantError("cannot build a measure from an empty point list");
  const std::size_t d = points.front().size();
  Matrix m(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != d)
      throw InvariantError("point " + std::to_string(i) + " has dimension " +
                           std::to_string(points[i].size()) + ", expected " + std::to_string(d));
    for (std::size_t k = 0; k < d; ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = points[i][k];
  }
  return make_uniform_measure(m);
}

DiscreteMeasure make_uniform_measure(const Matrix& points) {
  if (points.rows() == 0) throw InvariantError("cannot build a measure from an empty point list");
  return DiscreteMeasure(points, uniform_weights(points.rows()));
}

CostMatrix::CostMatrix(Matrix entries) : entries_(std::move(entries)) {
  if (!entries_.allFinite()) throw InvariantError("cost matrix entries must be finite");
  if (entries_.size() > 0 && entries_.minCoeff() < 0.0)
    throw InvariantError("cost matrix entries must be nonnegative");
}

CostMatrix squared_euclidean_cost(const Matrix& source, const Matrix& target) {
  if (source.cols() != target.cols())
    throw InvariantError("point sets disagree on dimension");
  Matrix c(source.rows(), target.rows());
  for (Eigen::Index i = 0; i < source.rows(); ++i)
    for (Eigen::Index j = 0; j < target.rows(); ++j)
      c(i, j) = (source.row(i) - target.row(j)).squaredNorm();
  return CostMatrix(std::move(c));
}

double frobenius(const Matrix& coupling, const CostMatrix& cost) {
  return coupling.cwiseProduct(cost.entries()).sum();
}

TransportPlan make_plan(Matrix coupling, const CostMatrix& cost) {
  TransportPlan plan;
  plan.transport_value = frobenius(coupling, cost);
  plan.objective_value = plan.transport_value;
  plan.coupling = std::move(coupling);
  return plan;
}

std::pair<Vector, Vector> plan_marginals(const TransportPlan& plan) {
  return {plan.coupling.rowwise().sum(), plan.coupling.colwise().sum().transpose()};
}

Vector uniform_weights(Eigen::Index n) {
  return Vector::Constant(n, 1.0 / static_cast<double>(n));
}

}  // namespace hierot
