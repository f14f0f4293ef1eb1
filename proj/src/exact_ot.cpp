#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hierot/solvers.hpp"

namespace hierot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Residual capacities below this are treated as empty.
constexpr double kMassEps = 1e-15;

void check_weights(const Vector& w, const char* name) {
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (!std::isfinite(w[i]) || w[i] < 0.0)
      throw SolverError(std::string("exact_ot: weight vector ") + name + " has a negative entry");
}

}  // namespace

// Successive shortest paths on the bipartite transportation network.
// Nodes 0..m-1 are sources, m..m+n-1 sinks; forward arcs i->j carry cost C_ij
// with unbounded capacity, backward arcs j->i cost -C_ij with capacity flow_ij.
// Dijkstra runs on reduced costs c_ij + pi_i - pi_j, which stay nonnegative.
TransportPlan exact_ot(const CostMatrix& cost, const Vector& a, const Vector& b,
                       Eigen::Index size_cap) {
  const Eigen::Index m = cost.rows();
  const Eigen::Index n = cost.cols();
  if (m == 0 || n == 0) throw SolverError("exact_ot: empty cost matrix");
  if (a.size() != m || b.size() != n) throw SolverError("exact_ot: weight sizes do not match cost");
  if (m > size_cap || n > size_cap)
    throw SolverError("exact_ot: problem " + std::to_string(m) + "x" + std::to_string(n) +
                      " exceeds oracle cap " + std::to_string(size_cap));
  check_weights(a, "a");
  check_weights(b, "b");
  if (std::abs(a.sum() - b.sum()) > 1e-9)
    throw SolverError("exact_ot: marginal masses differ by more than 1e-9");

  const Matrix& c = cost.entries();
  Matrix flow = Matrix::Zero(m, n);
  std::vector<double> supply(a.data(), a.data() + m);
  std::vector<double> demand(b.data(), b.data() + n);
  const Eigen::Index nodes = m + n;
  std::vector<double> pot(static_cast<std::size_t>(nodes), 0.0);
  std::vector<double> dist(static_cast<std::size_t>(nodes));
  std::vector<Eigen::Index> parent(static_cast<std::size_t>(nodes));
  std::vector<char> done(static_cast<std::size_t>(nodes));

  const double total = std::min(a.sum(), b.sum());
  double remaining = total;
  const int max_rounds = static_cast<int>(10 * nodes * nodes + 100);
  int rounds = 0;

  while (remaining > kMassEps * std::max(1.0, total)) {
    if (++rounds > max_rounds) throw SolverError("exact_ot: augmentation limit reached");

    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(parent.begin(), parent.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    for (Eigen::Index i = 0; i < m; ++i)
      if (supply[static_cast<std::size_t>(i)] > kMassEps) dist[static_cast<std::size_t>(i)] = 0.0;

    // Dense Dijkstra.
    for (;;) {
      Eigen::Index u = -1;
      double best = kInf;
      for (Eigen::Index v = 0; v < nodes; ++v) {
        const auto vs = static_cast<std::size_t>(v);
        if (!done[vs] && dist[vs] < best) {
          best = dist[vs];
          u = v;
        }
      }
      if (u < 0) break;
      const auto us = static_cast<std::size_t>(u);
      done[us] = 1;
      if (u < m) {
        for (Eigen::Index j = 0; j < n; ++j) {
          const auto vs = static_cast<std::size_t>(m + j);
          if (done[vs]) continue;
          const double reduced = std::max(0.0, c(u, j) + pot[us] - pot[vs]);
          if (best + reduced < dist[vs]) {
            dist[vs] = best + reduced;
            parent[vs] = u;
          }
        }
      } else {
        const Eigen::Index j = u - m;
        for (Eigen::Index i = 0; i < m; ++i) {
          const auto vs = static_cast<std::size_t>(i);
          if (done[vs] || flow(i, j) <= kMassEps) continue;
          const double reduced = std::max(0.0, -c(i, j) + pot[us] - pot[vs]);
          if (best + reduced < dist[vs]) {
            dist[vs] = best + reduced;
            parent[vs] = u;
          }
        }
      }
    }

    Eigen::Index sink = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto vs = static_cast<std::size_t>(m + j);
      if (demand[static_cast<std::size_t>(j)] > kMassEps && dist[vs] < kInf &&
          (sink < 0 || dist[vs] < dist[static_cast<std::size_t>(sink)]))
        sink = m + j;
    }
    if (sink < 0) break;  // demand exhausted up to the allowed mass mismatch
    const double reach = dist[static_cast<std::size_t>(sink)];
    for (Eigen::Index v = 0; v < nodes; ++v) {
      const auto vs = static_cast<std::size_t>(v);
      pot[vs] += std::min(dist[vs], reach);
    }

    // Bottleneck along the path.
    double delta = demand[static_cast<std::size_t>(sink - m)];
    Eigen::Index v = sink;
    while (parent[static_cast<std::size_t>(v)] >= 0) {
      const Eigen::Index u = parent[static_cast<std::size_t>(v)];
      if (u >= m) delta = std::min(delta, flow(v, u - m));  // backward arc j -> i
      v = u;
    }
    delta = std::min(delta, supply[static_cast<std::size_t>(v)]);

    v = sink;
    while (parent[static_cast<std::size_t>(v)] >= 0) {
      const Eigen::Index u = parent[static_cast<std::size_t>(v)];
      if (u < m) {
        flow(u, v - m) += delta;
      } else {
        double& f = flow(v, u - m);
        f -= delta;
        if (f < kMassEps) f = 0.0;
      }
      v = u;
    }
    supply[static_cast<std::size_t>(v)] -= delta;
    demand[static_cast<std::size_t>(sink - m)] -= delta;
    remaining -= delta;
  }

  TransportPlan plan = make_plan(std::move(flow), cost);
  plan.iterations_used = rounds;
  auto [rows, cols] = plan_marginals(plan);
  plan.marginal_deviation =
      std::max((rows - a).cwiseAbs().maxCoeff(), (cols - b).cwiseAbs().maxCoeff());
  return plan;
}

}  // namespace hierot
