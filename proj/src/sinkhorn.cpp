#include <cmath>
#include <limits>
#include <string>

#include "hierot/solvers.hpp"

namespace hierot {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_marginal(const Vector& w, Eigen::Index expected, const char* name) {
  if (w.size() != expected)
    throw SolverError(std::string("sinkhorn: marginal ") + name + " does not match cost shape");
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (!std::isfinite(w[i]) || w[i] < 0.0)
      throw SolverError(std::string("sinkhorn: marginal ") + name + " has a negative entry");
  if (!(w.sum() > 0.0)) throw SolverError(std::string("sinkhorn: marginal ") + name + " has zero mass");
}

Vector safe_log(const Vector& w) {
  Vector out(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) out[i] = w[i] > 0.0 ? std::log(w[i]) : kNegInf;
  return out;
}

// out_i = -log sum_j exp(log_w_j + pot_j + kernel_ij), i.e. the log of the
// scaling that would match a unit marginal. Rows use kernel, columns its transpose.
template <bool Transposed>
void log_update(const Matrix& kernel, const Vector& log_w, const Vector& pot, Vector& out) {
  const Eigen::Index rows = Transposed ? kernel.cols() : kernel.rows();
  const Eigen::Index cols = Transposed ? kernel.rows() : kernel.cols();
  for (Eigen::Index i = 0; i < rows; ++i) {
    double mx = kNegInf;
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double k = Transposed ? kernel(j, i) : kernel(i, j);
      const double v = log_w[j] + pot[j] + k;
      if (v > mx) mx = v;
    }
    if (mx == kNegInf) {
      out[i] = 0.0;
      continue;
    }
    double s = 0.0;
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double k = Transposed ? kernel(j, i) : kernel(i, j);
      const double v = log_w[j] + pot[j] + k;
      if (v != kNegInf) s += std::exp(v - mx);
    }
    out[i] = -(mx + std::log(s));
  }
}

struct ScalingResult {
  Matrix coupling;
  int iterations = 0;
  bool converged = false;
};

// Shared scaling loop. damping == 1 gives balanced Sinkhorn, tau/(tau+eps)
// the generalized unbalanced update. Potentials are kept as log scalings
// (f / eps), so coupling_ij = a_i b_j exp(f_i + g_j - C_ij / eps).
ScalingResult scale(const CostMatrix& cost, const Vector& a, const Vector& b,
                    const SinkhornConfig& cfg, double damping) {
  const Eigen::Index m = cost.rows();
  const Eigen::Index n = cost.cols();
  const Vector log_a = safe_log(a);
  const Vector log_b = safe_log(b);
  Vector f = Vector::Zero(m);
  Vector g = Vector::Zero(n);
  Vector f_prev = f;
  Vector g_prev = g;
  ScalingResult res;

  if (cfg.log_domain) {
    const Matrix kernel = -cost.entries() / cfg.epsilon;
    for (int it = 1; it <= cfg.max_iterations; ++it) {
      log_update<false>(kernel, log_b, g, f);
      f *= damping;
      log_update<true>(kernel, log_a, f, g);
      g *= damping;
      res.iterations = it;
      if (it % cfg.check_every == 0 || it == cfg.max_iterations) {
        const double change =
            std::max((f - f_prev).cwiseAbs().maxCoeff(), (g - g_prev).cwiseAbs().maxCoeff());
        if (change < cfg.tolerance) {
          res.converged = true;
          break;
        }
      }
      f_prev = f;
      g_prev = g;
    }
    res.coupling.resize(m, n);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        res.coupling(i, j) = (a[i] > 0.0 && b[j] > 0.0)
                                 ? std::exp(log_a[i] + log_b[j] + f[i] + g[j] + kernel(i, j))
                                 : 0.0;
  } else {
    const Matrix kernel = (-cost.entries() / cfg.epsilon).array().exp().matrix();
    Vector u = Vector::Ones(m);
    Vector v = Vector::Ones(n);
    for (int it = 1; it <= cfg.max_iterations; ++it) {
      const Vector kv = kernel * b.cwiseProduct(v);
      for (Eigen::Index i = 0; i < m; ++i) u[i] = std::pow(1.0 / kv[i], damping);
      const Vector ku = kernel.transpose() * a.cwiseProduct(u);
      for (Eigen::Index j = 0; j < n; ++j) v[j] = std::pow(1.0 / ku[j], damping);
      if (!u.allFinite() || !v.allFinite())
        throw SolverError("sinkhorn: scaling overflowed at epsilon=" + std::to_string(cfg.epsilon) +
                          "; use the log-domain solver");
      res.iterations = it;
      f = u.array().log().matrix();
      g = v.array().log().matrix();
      if (it % cfg.check_every == 0 || it == cfg.max_iterations) {
        const double change =
            std::max((f - f_prev).cwiseAbs().maxCoeff(), (g - g_prev).cwiseAbs().maxCoeff());
        if (change < cfg.tolerance) {
          res.converged = true;
          break;
        }
      }
      f_prev = f;
      g_prev = g;
    }
    res.coupling = a.cwiseProduct(u).asDiagonal() * kernel * b.cwiseProduct(v).asDiagonal();
  }
  if (!res.coupling.allFinite())
    throw SolverError("sinkhorn: non-finite coupling at epsilon=" + std::to_string(cfg.epsilon));
  return res;
}

TransportPlan finish(ScalingResult res, const CostMatrix& cost, const Vector& a, const Vector& b) {
  TransportPlan plan = make_plan(std::move(res.coupling), cost);
  plan.iterations_used = res.iterations;
  plan.converged = res.converged;
  auto [rows, cols] = plan_marginals(plan);
  plan.marginal_deviation =
      std::max((rows - a).cwiseAbs().maxCoeff(), (cols - b).cwiseAbs().maxCoeff());
  return plan;
}

}  // namespace

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0)) throw SolverError("sinkhorn: epsilon must be > 0");
  if (!(tau > 0.0)) throw SolverError("sinkhorn: tau must be > 0");
  if (max_iterations < 1) throw SolverError("sinkhorn: max_iterations must be >= 1");
  if (!(tolerance > 0.0)) throw SolverError("sinkhorn: tolerance must be > 0");
  if (check_every < 1) throw SolverError("sinkhorn: check_every must be >= 1");
}

double generalized_kl(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
      s += p[i] * std::log(p[i] / q[i]);
    }
    s += q[i] - p[i];
  }
  return s;
}

double unbalanced_objective(const Matrix& coupling, const CostMatrix& cost, const Vector& a,
                            const Vector& b, double epsilon, double tau) {
  const Eigen::Index m = coupling.rows();
  const Eigen::Index n = coupling.cols();
  Vector flat_p(m * n);
  Vector flat_q(m * n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      flat_p[i * n + j] = coupling(i, j);
      flat_q[i * n + j] = a[i] * b[j];
    }
  const Vector rows = coupling.rowwise().sum();
  const Vector cols = coupling.colwise().sum().transpose();
  return frobenius(coupling, cost) + epsilon * generalized_kl(flat_p, flat_q) +
         tau * (generalized_kl(rows, a) + generalized_kl(cols, b));
}

TransportPlan sinkhorn(const CostMatrix& cost, const Vector& a, const Vector& b,
                       const SinkhornConfig& cfg) {
  if (cfg.epsilon == 0.0) return exact_ot(cost, a, b);
  cfg.validate();
  check_marginal(a, cost.rows(), "a");
  check_marginal(b, cost.cols(), "b");
  TransportPlan plan = finish(scale(cost, a, b, cfg, 1.0), cost, a, b);
  const Vector flat_p = Eigen::Map<const Vector>(plan.coupling.data(), plan.coupling.size());
  const Matrix ref = a * b.transpose();
  const Vector flat_q = Eigen::Map<const Vector>(ref.data(), ref.size());
  plan.objective_value = plan.transport_value + cfg.epsilon * generalized_kl(flat_p, flat_q);
  return plan;
}

TransportPlan unbalanced_sinkhorn(const CostMatrix& cost, const Vector& a, const Vector& b,
                                  const SinkhornConfig& cfg) {
  cfg.validate();
  check_marginal(a, cost.rows(), "a");
  check_marginal(b, cost.cols(), "b");
  const double damping = cfg.tau / (cfg.tau + cfg.epsilon);
  TransportPlan plan = finish(scale(cost, a, b, cfg, damping), cost, a, b);
  plan.objective_value = unbalanced_objective(plan.coupling, cost, a, b, cfg.epsilon, cfg.tau);
  return plan;
}

}  // namespace hierot
