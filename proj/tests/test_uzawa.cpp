#include <doctest.h>

#include <cmath>

#include "deepuzawa/linear_oracle.hpp"
#include "deepuzawa/optimizer.hpp"
#include "deepuzawa/uzawa.hpp"

using namespace deepuzawa;

namespace {

QuadratureSet small_quad() {
  QuadratureSpec spec;
  spec.interior = InteriorSpec{Scheme::MonteCarlo, 64, 0, 0};
  spec.boundary = BoundarySpec{Scheme::TensorGauss, 0, 4, 4};
  spec.n_angles = 8;
  spec.seed = 1;
  return build_quadrature(Domain(), spec);
}

UzawaConfig small_config() {
  UzawaConfig c;
  c.n_outer = 2;
  c.n_inner = 5;
  c.optimizer.learning_rate = 1e-2;
  return c;
}

}  // namespace

TEST_CASE("config contracts") {
  UzawaConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_inner = 0;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
  c = UzawaConfig{};
  c.rho = -1.0;
  try {
    c.validate();
    FAIL("negative rho accepted");
  } catch (const ContractViolation& e) {
    CHECK(std::string(e.what()).find("rho") != std::string::npos);
  }
  c = UzawaConfig{};
  c.optimizer.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
}

TEST_CASE("multiplier update arithmetic") {
  const QuadratureSet q = small_quad();
  ProblemSpec p;
  p.inflow.value = 0.3;
  MultiplierField m = make_multiplier(p, q.boundary, 1.0);
  const auto n = static_cast<Eigen::Index>(q.boundary.size());

  SUBCASE("u = g is a fixed point") {
    multiplier_update(m, Eigen::VectorXd::Constant(n, 0.3), 0.7);
    CHECK((m.values().array() == 1.0).all());
  }
  SUBCASE("lambda 1, rho 0.5, u - g = 0.2 gives 0.9") {
    multiplier_update(m, Eigen::VectorXd::Constant(n, 0.5), 0.5);
    CHECK((m.values().array() - 0.9).abs().maxCoeff() <= 1e-15);
  }
  SUBCASE("two updates with u frozen compose additively") {
    const Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(n, -1.0, 2.0);
    MultiplierField twice = m;
    multiplier_update(twice, u, 0.25);
    multiplier_update(twice, u, 0.25);
    const Eigen::VectorXd expect = m.values() - 2 * 0.25 * (u - m.g());
    CHECK((twice.values() - expect).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("update commutes with scaling of u - g") {
    const Eigen::VectorXd d = Eigen::VectorXd::LinSpaced(n, -0.5, 0.5);
    MultiplierField a = m, b = m;
    multiplier_update(a, m.g() + 3 * d, 0.4);
    multiplier_update(b, m.g() + d, 0.4);
    CHECK(((a.values() - m.values()) - 3 * (b.values() - m.values())).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("nonpositive rho and wrong lengths are rejected") {
    CHECK_THROWS_AS(multiplier_update(m, Eigen::VectorXd::Zero(n), 0.0), ContractViolation);
    CHECK_THROWS_AS(multiplier_update(m, Eigen::VectorXd::Zero(n + 1), 1.0), ContractViolation);
  }
}

TEST_CASE("strong regime checker") {
  const StrongRegime a = check_strong_regime(1.0, 0.1, 1.0, 2.0);
  CHECK(a.valid);
  CHECK(a.rho_max == doctest::Approx(3.0 - std::sqrt(0.84)).epsilon(1e-14));
  CHECK(a.rho_max == doctest::Approx(2.0834).epsilon(1e-4));
  CHECK_FALSE(check_strong_regime(1.0, 0.1, 2.1, 2.0).valid);

  const StrongRegime edge = check_strong_regime(1.0, 0.25, 0.1, 2.0);
  CHECK_FALSE(edge.valid);
  CHECK(std::isnan(edge.rho_max));
  CHECK_FALSE(check_strong_regime(0.0, 0.0, 0.1, 2.0).valid);
  CHECK_THROWS_AS(check_strong_regime(-1.0, 0.0, 0.1, 2.0), ContractViolation);
}

TEST_CASE("optimizers") {
  Eigen::VectorXd theta(2);
  theta << 1.0, -2.0;
  const Eigen::VectorXd g = (Eigen::VectorXd(2) << 0.5, -4.0).finished();

  Sgd sgd(0.1);
  Eigen::VectorXd t = theta;
  sgd.step(t, g);
  CHECK((t - (theta - 0.1 * g)).norm() <= 1e-15);
  CHECK(sgd.steps() == 1);

  // first bias-corrected Adam step moves every coordinate by about lr against the sign
  Adam adam(1e-3, 0.9, 0.999, 1e-8);
  t = theta;
  adam.step(t, g);
  CHECK(t(0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-8));
  CHECK(t(1) == doctest::Approx(-2.0 + 1e-3).epsilon(1e-8));
  // moments persist: a zero gradient still moves theta
  const Eigen::VectorXd before = t;
  adam.step(t, Eigen::VectorXd::Zero(2));
  CHECK((t - before).norm() > 0);

  CHECK(parse_optimizer("sgd") == OptimizerKind::Sgd);
  CHECK_THROWS_AS(parse_optimizer("lbfgs"), ContractViolation);
  CHECK_THROWS_AS(sgd.step(t, Eigen::VectorXd::Zero(3)), ContractViolation);
}

TEST_CASE("gradient descent on the oracle quadratic meets the suboptimality bound") {
  OracleSetup setup;
  setup.sigma_t = 0.5;
  setup.n_spatial = 12;
  setup.n_angles = 16;
  setup.n_along = 12;
  setup.n_half = 12;
  const LinearTrialSpace space = LinearTrialSpace::build(setup);
  const double gamma = 1.0;
  const Eigen::VectorXd lambda = Eigen::VectorXd::Zero(space.g().size());
  const Eigen::MatrixXd h = space.A() + gamma * space.B();
  const double lip = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h).eigenvalues().maxCoeff();
  const double eta = 1.0 / lip;
  const Eigen::VectorXd star = exact_inner_solve(space, lambda, gamma);
  const double best = space.lagrangian(star, lambda, gamma);

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space.size()));
  const double d0 = (theta - star).squaredNorm();
  std::unique_ptr<Optimizer> opt = make_optimizer(OptimizerConfig{OptimizerKind::Sgd, eta, 0.9, 0.999, 1e-8});
  for (int t = 1; t <= 1000; ++t) {
    opt->step(theta, space.lagrangian_gradient(theta, lambda, gamma));
    if (t == 10 || t == 100 || t == 1000) {
      const double gap = space.lagrangian(theta, lambda, gamma) - best;
      CHECK(gap <= d0 / (2 * eta * t));
      CHECK(gap >= -1e-10);
    }
  }
}

TEST_CASE("run bookkeeping") {
  const QuadratureSet q = small_quad();
  const ProblemSpec p;
  const UzawaConfig c = small_config();
  LagrangianConfig lc;
  lc.batch = BatchSpec{16, true};
  std::vector<MetricsRow> seen;
  const RunState s = run(p, q, c, lc, MlpParams({4, 8, 1}, Activation::Tanh), 3,
                         [&](const MetricsRow& r) { seen.push_back(r); });
  CHECK(s.history.size() == 1 + 2 * (5 + 1));
  CHECK(seen.size() == s.history.size());
  CHECK(s.history.front().outer == -1);
  CHECK(s.history.front().inner == -1);
  // zero network, zero data
  CHECK(s.history.front().boundary_residual == 0.0);
  CHECK(s.history[1].outer == 0);
  CHECK(s.history[1].inner == 0);
  CHECK(s.history[6].inner == -1);
  CHECK(s.history.back().outer == 1);
  CHECK(s.multiplier.registry() == registry_hash(q.boundary));
}

TEST_CASE("runs replay bit-for-bit") {
  const QuadratureSet q = small_quad();
  ProblemSpec p;
  p.inflow.value = 1.0;
  p.source.kind = SourceKind::Constant;
  LagrangianConfig lc;
  lc.batch = BatchSpec{16, true};
  const auto once = [&] {
    return run(p, q, small_config(), lc, init_params({4, 8, 8, 1}, Activation::Tanh, 5), 9);
  };
  const RunState a = once(), b = once();
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].parts.value() == b.history[i].parts.value());
    CHECK(a.history[i].boundary_residual == b.history[i].boundary_residual);
  }
  CHECK(a.params.flatten() == b.params.flatten());
  CHECK(a.multiplier.values() == b.multiplier.values());
}

TEST_CASE("the multiplier follows the minus-sign update") {
  const QuadratureSet q = small_quad();
  ProblemSpec p;
  p.inflow.value = 2.0;
  UzawaConfig c = small_config();
  c.n_outer = 1;
  c.rho = 0.5;
  const RunState s = run(p, q, c, LagrangianConfig{}, init_params({4, 8, 1}, Activation::Tanh, 2), 0);
  const Eigen::VectorXd u = boundary_values(s.params, q.boundary);
  CHECK((s.multiplier.values() + 0.5 * (u - s.multiplier.g())).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("non-finite training aborts with a numerical error") {
  const QuadratureSet q = small_quad();
  ProblemSpec p;
  p.inflow.value = 1.0;
  UzawaConfig c = small_config();
  c.optimizer = OptimizerConfig{OptimizerKind::Sgd, 1e300, 0.9, 0.999, 1e-8};
  CHECK_THROWS_AS(run(p, q, c, LagrangianConfig{}, init_params({4, 8, 1}, Activation::Tanh, 2), 0),
                  NumericalError);
}
