#include <doctest.h>

#include <cmath>
#include <random>

#include "hierot/hot.hpp"
#include "oracles.hpp"

using namespace hierot;

namespace {

struct Toy {
  ModelParams model;
  std::vector<PatchGrid> src, tgt;  // raw
  std::vector<Eigen::Index> labels;
  std::vector<PatchGrid> zs, zt;    // embedded
};

Toy make_toy(std::size_t n, std::uint64_t seed, Eigen::Index k = 5) {
  ModelDims d;
  d.input_dim = 3;
  d.hidden_dim = 6;
  d.channels = 4;
  d.classes = 3;
  Toy t{ModelParams::init(d, seed), {}, {}, {}, {}, {}};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    t.src.emplace_back(oracle::gaussian_matrix(k, 3, rng));
    t.tgt.emplace_back(oracle::gaussian_matrix(k, 3, rng));
    t.zs.push_back(embed(t.src.back(), t.model));
    t.zt.push_back(embed(t.tgt.back(), t.model));
    t.labels.push_back(static_cast<Eigen::Index>(i % 3));
  }
  return t;
}

GroundCostParams weights(double e1, double e2, double e3, Eigen::Index channels = 4, Eigen::Index m = 6) {
  return GroundCostParams{e1, e2, e3, ProjectionSet::random(m, channels, 3), ImageSolver::kSliced};
}

Vector probs3(double a, double b, double c) {
  Vector p(3);
  p << a, b, c;
  return p;
}

}  // namespace

TEST_CASE("ground cost examples") {
  std::mt19937_64 rng(1);
  const PatchGrid z(oracle::gaussian_matrix(5, 4, rng));
  const PatchGrid w(oracle::gaussian_matrix(5, 4, rng));

  CHECK(ground_cost(z, 0, z, probs3(0.2, 0.3, 0.5), weights(0.1, 0.1, 0.0)).value == 0.0);
  CHECK(ground_cost(z, 1, w, probs3(0.0, 1.0, 0.0), weights(0.0, 0.0, 1.0)).value == 0.0);

  const auto full = ground_cost(z, 2, w, probs3(0.2, 0.3, 0.5), weights(0.1, 0.1, 1.0));
  CHECK(full.value == doctest::Approx(0.1 * full.terms[0] + 0.1 * full.terms[1] + full.terms[2]).epsilon(1e-12));
  CHECK(full.terms[2] == doctest::Approx(-std::log(0.5)));
  CHECK(full.terms[1] == doctest::Approx((z.pooled() - w.pooled()).squaredNorm()));
  const auto params = weights(0.1, 0.1, 1.0);
  CHECK(full.terms[0] ==
        doctest::Approx(oracle::swd_reference(z.patches(), w.patches(), params.proj.directions())));
}

TEST_CASE("ground cost weighted sum from a known decomposition") {
  // Channel 0 carries the sliced term, channel 1 only the pooled offset.
  Matrix theta(1, 2);
  theta << 1.0, 0.0;
  Matrix zi(2, 2), zj(2, 2);
  const double h = std::sqrt(0.5);
  zi << -1, 0, 1, 0;
  zj << -3, h, 3, h;
  const GroundCostParams p{0.1, 0.1, 1.0, ProjectionSet(theta), ImageSolver::kSliced};
  Vector probs(2);
  probs << std::exp(-0.2), 1.0 - std::exp(-0.2);
  const auto c = ground_cost(PatchGrid(zi), 0, PatchGrid(zj), probs, p);
  CHECK(c.terms[0] == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(c.terms[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(c.terms[2] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(c.value == doctest::Approx(1.05).epsilon(1e-12));
}

TEST_CASE("ground cost errors") {
  std::mt19937_64 rng(2);
  const PatchGrid z(oracle::gaussian_matrix(5, 4, rng));
  CHECK_THROWS(ground_cost(z, 3, z, probs3(0.2, 0.3, 0.5), weights(0.1, 0.1, 1.0)));
  CHECK_THROWS(ground_cost(z, 0, z, probs3(0.2, 0.3, 0.6), weights(0.1, 0.1, 1.0)));
  CHECK_THROWS(ground_cost(z, 0, PatchGrid(oracle::gaussian_matrix(4, 4, rng)), probs3(0.2, 0.3, 0.5),
                           weights(0.1, 0.1, 1.0)));
  CHECK_THROWS(weights(0.0, 0.0, 0.0).validate());
  CHECK_THROWS(weights(-0.1, 0.0, 1.0).validate());
}

TEST_CASE("exact image solver gives the 1/K-weighted patch OT") {
  std::mt19937_64 rng(3);
  const PatchGrid z(oracle::gaussian_matrix(4, 4, rng)), w(oracle::gaussian_matrix(4, 4, rng));
  auto p = weights(1.0, 0.0, 0.0);
  p.image_solver = ImageSolver::kExact;
  CHECK(ground_cost(z, 0, w, probs3(1, 0, 0), p).terms[0] == doctest::Approx(exact_patch_ot(z, w)));
}

TEST_CASE("cost matrix entries match scalar ground cost bit for bit") {
  const auto t = make_toy(4, 4);
  const auto p = weights(0.1, 0.1, 1.0);
  const auto b = build_cost_matrix(t.zs, t.labels, t.zt, p, t.model);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const auto g = ground_cost(t.zs[i], t.labels[i], t.zt[j], p, t.model);
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      CHECK(b.cost(ii, jj) == g.value);
      for (std::size_t k = 0; k < 3; ++k) CHECK(b.terms[k](ii, jj) == g.terms[k]);
    }
  const Matrix recon = 0.1 * b.terms[0] + 0.1 * b.terms[1] + b.terms[2];
  CHECK((recon - b.cost.entries()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("parallel cost matrix equals the serial reference") {
  const auto t = make_toy(12, 5);
  const auto p = weights(0.1, 0.1, 1.0);
  const auto par = build_cost_matrix(t.zs, t.labels, t.zt, p, t.model);
  const auto ser = build_cost_matrix_serial(t.zs, t.labels, t.zt, p, t.model);
  CHECK(par.cost.entries() == ser.cost.entries());
  for (std::size_t k = 0; k < 3; ++k) CHECK(par.terms[k] == ser.terms[k]);
}

TEST_CASE("cost matrix special cases") {
  const auto t = make_toy(3, 6);
  const auto p = weights(0.1, 0.1, 0.0);
  const auto same = build_cost_matrix(t.zs, t.labels, t.zs, p, t.model);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(same.cost(i, i) == 0.0);
  // Without the label term the SWD block is symmetric.
  CHECK((same.terms[0] - same.terms[0].transpose()).cwiseAbs().maxCoeff() < 1e-12);

  const std::vector<PatchGrid> one_src{t.zs[0]}, one_tgt{t.zt[0]};
  const std::vector<Eigen::Index> one_label{t.labels[0]};
  const auto single = build_cost_matrix(one_src, one_label, one_tgt, weights(0.1, 0.1, 1.0), t.model);
  CHECK(single.cost.rows() == 1);
  CHECK(single.cost(0, 0) == ground_cost(t.zs[0], t.labels[0], t.zt[0], weights(0.1, 0.1, 1.0), t.model).value);
  CHECK_THROWS_AS(build_cost_matrix(t.src, t.labels, t.src, p, t.model), InvariantError);
  const std::vector<PatchGrid> empty;
  const std::vector<Eigen::Index> no_labels;
  CHECK_THROWS(build_cost_matrix(empty, no_labels, empty, p, t.model));
}

TEST_CASE("hierarchical distance on one-channel grids: sliced equals exact up to K") {
  std::mt19937_64 rng(7);
  ModelDims d;
  d.input_dim = d.channels = 1;
  d.depth = 1;
  d.final_relu = false;
  auto model = ModelParams::zeros(d);
  model.embedder[0].weight.setOnes();
  std::vector<PatchGrid> src, tgt;
  std::vector<Eigen::Index> labels;
  const Eigen::Index k = 6;
  for (int i = 0; i < 5; ++i) {
    src.emplace_back(oracle::gaussian_matrix(k, 1, rng));
    tgt.emplace_back(oracle::gaussian_matrix(k, 1, rng));
    labels.push_back(0);
  }
  Matrix one(1, 1);
  one << 1.0;
  GroundCostParams sliced{1.0, 0.0, 0.0, ProjectionSet(one), ImageSolver::kSliced};
  GroundCostParams exact = sliced;
  exact.image_solver = ImageSolver::kExact;
  const auto cs = build_cost_matrix(src, labels, tgt, sliced, model);
  const auto ce = build_cost_matrix(src, labels, tgt, exact, model);
  CHECK((cs.cost.entries() - static_cast<double>(k) * ce.cost.entries()).cwiseAbs().maxCoeff() < 1e-9);
  SinkhornConfig cfg;
  const auto hs = domain_distance(cs.cost, cfg);
  const auto he = domain_distance(CostMatrix(static_cast<double>(k) * ce.cost.entries()), cfg);
  CHECK(std::abs(hs.objective_value - he.objective_value) < 1e-9);
}

TEST_CASE("domain distance examples") {
  SinkhornConfig cfg;
  const auto zero = domain_distance(CostMatrix(Matrix::Zero(3, 3)), cfg);
  CHECK(zero.transport_value == 0.0);

  Matrix one(1, 1);
  one << 1.0;
  cfg.epsilon = 0.1;
  cfg.tau = 0.45;
  CHECK(std::abs(domain_distance(CostMatrix(one), cfg).coupling(0, 0) - std::exp(-1.0)) < 1e-6);

  std::mt19937_64 rng(8);
  const Matrix c = oracle::random_matrix(5, 5, rng);
  SinkhornConfig big;
  big.tau = 1e4;
  big.max_iterations = 5000;
  const auto u = domain_distance(CostMatrix(c), big);
  const auto b = sinkhorn(CostMatrix(c), uniform_weights(5), uniform_weights(5), big);
  CHECK((u.coupling - b.coupling).cwiseAbs().maxCoeff() < 1e-3);
  CHECK_THROWS(domain_distance(CostMatrix(Matrix::Ones(2, 3)), cfg));
}

TEST_CASE("hot value is invariant to a shared batch permutation") {
  auto t = make_toy(5, 9);
  const auto p = weights(0.1, 0.1, 1.0);
  LossOptions opt;
  const auto a = deephot_loss(t.src, t.labels, t.tgt, p, t.model, opt);
  std::reverse(t.src.begin(), t.src.end());
  std::reverse(t.labels.begin(), t.labels.end());
  std::reverse(t.tgt.begin(), t.tgt.end());
  const auto b = deephot_loss(t.src, t.labels, t.tgt, p, t.model, opt);
  CHECK(a.hot.hot_value == doctest::Approx(b.hot.hot_value).epsilon(1e-9));
}

TEST_CASE("domain solver variants") {
  std::mt19937_64 rng(10);
  const CostMatrix c(oracle::random_matrix(4, 4, rng));
  SinkhornConfig cfg;
  const auto prod = solve_domain(c, DomainSolver::kProduct, cfg);
  CHECK((prod.coupling.array() - 1.0 / 16.0).abs().maxCoeff() == 0.0);
  const auto ex = solve_domain(c, DomainSolver::kExact, cfg);
  CHECK(ex.transport_value == doctest::Approx(oracle::assignment_enumeration(c.entries())));
  CHECK(parse_domain_solver("unbalanced") == DomainSolver::kUnbalanced);
  CHECK(to_string(DomainSolver::kBalanced) == "balanced");
  CHECK_THROWS(parse_domain_solver("nope"));
}

TEST_CASE("frozen zero plan leaves only the source cross-entropy") {
  const auto t = make_toy(4, 11);
  LossOptions opt;
  opt.frozen_plan = Matrix::Zero(4, 4);
  const auto r = deephot_loss(t.src, t.labels, t.tgt, weights(0.1, 0.1, 1.0), t.model, opt);
  const auto s = source_only_loss(t.src, t.labels, t.model);
  CHECK(r.loss == doctest::Approx(s.loss).epsilon(1e-14));
  CHECK(r.transport_term == 0.0);
  CHECK(r.d_projections.isZero());
  std::vector<Matrix> ga, gb;
  r.grads.for_each([&](const std::string&, const Matrix& m, bool) { ga.push_back(m); });
  s.grads.for_each([&](const std::string&, const Matrix& m, bool) { gb.push_back(m); });
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(oracle::relative_error(ga[i], gb[i]) < 1e-12);
}

TEST_CASE("all-zero weights in the loss reduce to source cross-entropy") {
  const auto t = make_toy(4, 12);
  // Construct directly: validate() would reject all-zero weights for the cost itself.
  GroundCostParams p{0.0, 0.0, 0.0, ProjectionSet::random(4, 4, 1), ImageSolver::kSliced};
  LossOptions opt;
  const auto r = deephot_loss(t.src, t.labels, t.tgt, p, t.model, opt);
  CHECK(r.loss == doctest::Approx(source_only_loss(t.src, t.labels, t.model).loss).epsilon(1e-14));
  CHECK(r.transport_term == 0.0);
}

TEST_CASE("deephot loss gradients match finite differences of the frozen-plan loss") {
  const auto t = make_toy(4, 13);
  const auto p = weights(0.1, 0.1, 1.0);
  LossOptions opt;
  const auto base = deephot_loss(t.src, t.labels, t.tgt, p, t.model, opt);
  opt.frozen_plan = base.hot.plan.coupling;
  CHECK(base.hot.plan.coupling.sum() > 0.0);

  std::vector<std::string> names;
  std::vector<Matrix> analytic;
  base.grads.for_each([&](const std::string& n, const Matrix& m, bool) {
    names.push_back(n);
    analytic.push_back(m);
  });
  for (std::size_t idx = 0; idx < names.size(); ++idx) {
    CAPTURE(names[idx]);
    Matrix start;
    t.model.for_each([&](const std::string& n, const Matrix& m, bool) {
      if (n == names[idx]) start = m;
    });
    const Matrix fd = oracle::central_difference(start, [&](const Matrix& x) {
      ModelParams m = t.model;
      m.for_each([&](const std::string& n, Matrix& w, bool) {
        if (n == names[idx]) w = x;
      });
      return deephot_loss(t.src, t.labels, t.tgt, p, m, opt).loss;
    });
    CHECK(oracle::relative_error(analytic[idx], fd) < 1e-4);
  }
  const Matrix fd_theta = oracle::central_difference(p.proj.directions(), [&](const Matrix& x) {
    GroundCostParams q{p.eta1, p.eta2, p.eta3, ProjectionSet(x), p.image_solver};
    return deephot_loss(t.src, t.labels, t.tgt, q, t.model, opt).loss;
  });
  CHECK(oracle::relative_error(base.d_projections, fd_theta) < 1e-4);
}

TEST_CASE("a small step along the negative gradient lowers the frozen-plan loss") {
  const auto t = make_toy(4, 14);
  const auto p = weights(0.1, 0.1, 1.0);
  LossOptions opt;
  const auto base = deephot_loss(t.src, t.labels, t.tgt, p, t.model, opt);
  opt.frozen_plan = base.hot.plan.coupling;
  double step = 1.0;
  bool decreased = false;
  for (int halving = 0; halving < 30 && !decreased; ++halving, step *= 0.5) {
    ModelParams m = t.model;
    SgdOptimizer sgd(0.0, 0.0);
    sgd.step(m, base.grads, step, step);
    decreased = deephot_loss(t.src, t.labels, t.tgt, p, m, opt).loss < base.loss;
  }
  CHECK(decreased);
}

TEST_CASE("loss bookkeeping") {
  const auto t = make_toy(4, 15);
  LossOptions opt;
  const auto r = deephot_loss(t.src, t.labels, t.tgt, weights(0.1, 0.1, 1.0), t.model, opt);
  CHECK(r.loss == doctest::Approx(r.source_ce + r.transport_term).epsilon(1e-12));
  CHECK(r.transport_term == doctest::Approx(frobenius(r.hot.plan.coupling, r.hot.breakdown.cost)));
  CHECK(r.objective >= r.transport_term - 1e-12);
  CHECK(r.hot.hot_value == r.objective);
  auto shorter = t.tgt;
  shorter.pop_back();
  CHECK_THROWS(deephot_loss(t.src, t.labels, shorter, weights(0.1, 0.1, 1.0), t.model, opt));
}

TEST_CASE("errors raised inside the parallel cost loop reach the caller") {
  std::mt19937_64 rng(16);
  ModelDims d;
  d.input_dim = d.channels = 1;
  d.depth = 1;
  const auto model = ModelParams::init(d, 1);
  const std::vector<PatchGrid> big{PatchGrid(oracle::gaussian_matrix(70, 1, rng)),
                                   PatchGrid(oracle::gaussian_matrix(70, 1, rng))};
  const std::vector<Eigen::Index> labels{0, 1};
  Matrix one(1, 1);
  one << 1.0;
  GroundCostParams p{1.0, 0.0, 0.0, ProjectionSet(one), ImageSolver::kExact};
  CHECK_THROWS_AS(build_cost_matrix(big, labels, big, p, model), SolverError);
}
