#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hierot/solvers.hpp"

namespace hierot {

namespace {

std::vector<Eigen::Index> sorted_order(const double* values, Eigen::Index count) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [values](Eigen::Index l, Eigen::Index r) { return values[l] < values[r]; });
  return order;
}

// K x M matrix of projections, computed row by row so that a patch's
// projection does not depend on its position in the grid.
Matrix project(const Matrix& z, const Matrix& theta) {
  const Eigen::Index k = z.rows();
  const Eigen::Index m = theta.rows();
  const Eigen::Index c = z.cols();
  Matrix out(m, k);  // stored transposed: row m holds the K projections onto theta_m
  for (Eigen::Index p = 0; p < m; ++p)
    for (Eigen::Index r = 0; r < k; ++r) {
      double s = 0.0;
      for (Eigen::Index ch = 0; ch < c; ++ch) s += z(r, ch) * theta(p, ch);
      out(p, r) = s;
    }
  return out;
}

void check_swd_shapes(const PatchGrid& zi, const PatchGrid& zj, const ProjectionSet& proj) {
  if (zi.patch_count() != zj.patch_count())
    throw InvariantError("swd: grids have different patch counts (" +
                         std::to_string(zi.patch_count()) + " vs " +
                         std::to_string(zj.patch_count()) + ")");
  if (zi.channels() != zj.channels() || zi.channels() != proj.channels())
    throw InvariantError("swd: channel dimension mismatch between grids and projections");
}

}  // namespace

double ot_1d(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw InvariantError("ot_1d: sample sizes differ (" + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()) + ")");
  std::vector<double> sx(x.begin(), x.end());
  std::vector<double> sy(y.begin(), y.end());
  std::sort(sx.begin(), sx.end());
  std::sort(sy.begin(), sy.end());
  double s = 0.0;
  for (std::size_t k = 0; k < sx.size(); ++k) {
    const double d = sx[k] - sy[k];
    s += d * d;
  }
  return s;
}

double exact_patch_ot(const PatchGrid& zi, const PatchGrid& zj, Eigen::Index size_cap) {
  const CostMatrix cost = squared_euclidean_cost(zi.patches(), zj.patches());
  return exact_ot(cost, uniform_weights(zi.patch_count()), uniform_weights(zj.patch_count()),
                  size_cap)
      .transport_value;
}

PatchOtGrad exact_patch_ot_grad(const PatchGrid& zi, const PatchGrid& zj, Eigen::Index size_cap) {
  const CostMatrix cost = squared_euclidean_cost(zi.patches(), zj.patches());
  const TransportPlan plan = exact_ot(cost, uniform_weights(zi.patch_count()),
                                      uniform_weights(zj.patch_count()), size_cap);
  PatchOtGrad out;
  out.value = plan.transport_value;
  out.d_zi = Matrix::Zero(zi.patch_count(), zi.channels());
  out.d_zj = Matrix::Zero(zj.patch_count(), zj.channels());
  for (Eigen::Index u = 0; u < zi.patch_count(); ++u)
    for (Eigen::Index v = 0; v < zj.patch_count(); ++v) {
      const double w = plan.coupling(u, v);
      if (w == 0.0) continue;
      const auto diff = (zi.patches().row(u) - zj.patches().row(v)).eval();
      out.d_zi.row(u) += 2.0 * w * diff;
      out.d_zj.row(v) -= 2.0 * w * diff;
    }
  return out;
}

ProjectionSet::ProjectionSet(Matrix directions, std::uint64_t seed)
    : directions_(std::move(directions)), seed_(seed) {
  if (directions_.rows() < 1 || directions_.cols() < 1)
    throw InvariantError("projection set needs at least one direction");
  if (!directions_.allFinite()) throw InvariantError("projection directions must be finite");
}

ProjectionSet ProjectionSet::random(Eigen::Index count, Eigen::Index channels, std::uint64_t seed) {
  if (count < 1 || channels < 1) throw InvariantError("projection set needs M >= 1 and C >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix dirs(count, channels);
  for (Eigen::Index m = 0; m < count; ++m)
    for (Eigen::Index c = 0; c < channels; ++c) dirs(m, c) = normal(rng);
  ProjectionSet set(std::move(dirs), seed);
  set.normalize();
  return set;
}

void ProjectionSet::normalize() {
  for (Eigen::Index m = 0; m < directions_.rows(); ++m) {
    const double norm = directions_.row(m).norm();
    if (norm > 0.0) directions_.row(m) /= norm;
  }
}

double swd(const PatchGrid& zi, const PatchGrid& zj, const ProjectionSet& proj) {
  check_swd_shapes(zi, zj, proj);
  const Eigen::Index k = zi.patch_count();
  const Matrix pi = project(zi.patches(), proj.directions());
  const Matrix pj = project(zj.patches(), proj.directions());
  double total = 0.0;
  std::vector<double> si(static_cast<std::size_t>(k));
  std::vector<double> sj(static_cast<std::size_t>(k));
  for (Eigen::Index m = 0; m < proj.count(); ++m) {
    std::copy_n(pi.row(m).data(), k, si.begin());
    std::copy_n(pj.row(m).data(), k, sj.begin());
    std::sort(si.begin(), si.end());
    std::sort(sj.begin(), sj.end());
    double s = 0.0;
    for (std::size_t r = 0; r < si.size(); ++r) {
      const double d = si[r] - sj[r];
      s += d * d;
    }
    total += s;
  }
  return total / static_cast<double>(proj.count());
}

SwdGrad swd_grad(const PatchGrid& zi, const PatchGrid& zj, const ProjectionSet& proj) {
  check_swd_shapes(zi, zj, proj);
  const Eigen::Index k = zi.patch_count();
  const Eigen::Index c = zi.channels();
  const Eigen::Index count = proj.count();
  const Matrix& theta = proj.directions();
  const Matrix pi = project(zi.patches(), theta);
  const Matrix pj = project(zj.patches(), theta);
  const double scale = 1.0 / static_cast<double>(count);

  SwdGrad out;
  out.d_zi = Matrix::Zero(k, c);
  out.d_zj = Matrix::Zero(k, c);
  out.d_theta = Matrix::Zero(count, c);
  double total = 0.0;
  for (Eigen::Index m = 0; m < count; ++m) {
    const auto oi = sorted_order(pi.row(m).data(), k);
    const auto oj = sorted_order(pj.row(m).data(), k);
    double s = 0.0;
    for (Eigen::Index r = 0; r < k; ++r) {
      const Eigen::Index u = oi[static_cast<std::size_t>(r)];
      const Eigen::Index v = oj[static_cast<std::size_t>(r)];
      const double d = pi(m, u) - pj(m, v);
      s += d * d;
      const double w = 2.0 * scale * d;
      out.d_zi.row(u) += w * theta.row(m);
      out.d_zj.row(v) -= w * theta.row(m);
      out.d_theta.row(m) += w * (zi.patches().row(u) - zj.patches().row(v));
    }
    total += s;
  }
  out.value = total * scale;
  return out;
}

}  // namespace hierot
