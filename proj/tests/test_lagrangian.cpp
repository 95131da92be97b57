#include <doctest.h>

#include <cmath>
#include <random>

#include <omp.h>

#include "deepuzawa/lagrangian.hpp"

using namespace deepuzawa;

namespace {

QuadratureSet tensor_quad(std::size_t nx, std::size_t n_angles, std::size_t n_along, std::size_t n_bangles) {
  QuadratureSpec spec;
  spec.interior = InteriorSpec{Scheme::TensorGauss, 0, nx, nx};
  spec.boundary = BoundarySpec{Scheme::TensorGauss, 0, n_along, n_bangles};
  spec.n_angles = n_angles;
  return build_quadrature(Domain(), spec);
}

void randomize(MultiplierField& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  for (auto& v : m.values()) v = g(rng);
}

ProblemSpec full_problem() {
  ProblemSpec p;
  p.sigma_a.kind = CoefficientKind::Split;
  p.sigma_t = 1.0;
  p.kernel = ScatteringKernel{KernelKind::ForwardPeaked, 0.5};
  p.source.kind = SourceKind::Ball;
  p.source.radius = 0.3;
  p.inflow.kind = InflowKind::LeftEdge;
  p.inflow.value = 1.0;
  return p;
}

Eigen::VectorXd central_differences(const MlpParams& params, const MultiplierField& m, const QuadratureSet& q,
                                    const ProblemSpec& p, const LagrangianConfig& c) {
  const Eigen::VectorXd theta = params.flatten();
  Eigen::VectorXd fd(theta.size());
  MlpParams work = params;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd t = theta;
    t(i) += h;
    work.assign(t);
    const double plus = assemble(work, m, q, p, c).value();
    t(i) -= 2 * h;
    work.assign(t);
    fd(i) = (plus - assemble(work, m, q, p, c).value()) / (2 * h);
  }
  return fd;
}

}  // namespace

TEST_CASE("zero network with zero data has zero Lagrangian") {
  const QuadratureSet q = tensor_quad(4, 8, 4, 4);
  const ProblemSpec p;
  const MultiplierField m = make_multiplier(p, q.boundary);
  const LossParts parts = assemble(MlpParams({4, 8, 1}, Activation::Tanh), m, q, p, LagrangianConfig{});
  CHECK(parts.pde == 0.0);
  CHECK(parts.boundary_penalty == 0.0);
  CHECK(parts.multiplier_term == 0.0);
}

TEST_CASE("boundary terms against the inflow measure") {
  const QuadratureSet q = tensor_quad(4, 8, 8, 8);
  ProblemSpec p;
  p.inflow.value = 1.0;
  const MlpParams zero({4, 8, 1}, Activation::Tanh);
  LagrangianConfig c;
  c.gamma = 2.0;
  const LossParts a = assemble(zero, make_multiplier(p, q.boundary), q, p, c);
  CHECK(std::abs(a.boundary_penalty - 8.0) <= 1e-12);

  const LossParts b = assemble(zero, make_multiplier(p, q.boundary, 1.0), q, p, c);
  CHECK(std::abs(b.multiplier_term - 8.0) <= 1e-12);

  ProblemSpec p0;
  const LossParts z = assemble(zero, make_multiplier(p0, q.boundary, 1.0), q, p0, c);
  CHECK(z.multiplier_term == 0.0);
}

TEST_CASE("parts sum to the value and the value is affine in lambda") {
  const QuadratureSet q = tensor_quad(3, 8, 4, 4);
  const ProblemSpec p = full_problem();
  const MlpParams net = init_params({4, 8, 8, 1}, Activation::Tanh, 3);
  MultiplierField m0 = make_multiplier(p, q.boundary), m1 = m0, mh = m0;
  randomize(m0, 1);
  randomize(m1, 2);
  mh.values() = 0.5 * (m0.values() + m1.values());
  const LagrangianConfig c;
  const LossParts a = assemble(net, m0, q, p, c), b = assemble(net, m1, q, p, c), h = assemble(net, mh, q, p, c);
  CHECK(std::abs(a.pde + a.boundary_penalty + a.multiplier_term - a.value()) <= 1e-12);
  CHECK(std::abs(h.value() - 0.5 * (a.value() + b.value())) <= 1e-12 * (1 + std::abs(h.value())));
}

TEST_CASE("batched assembly agrees with pointwise assembly") {
  const ProblemSpec p = full_problem();
  const MlpParams net = init_params({4, 8, 8, 1}, Activation::Tanh, 4);
  for (Scheme s : {Scheme::TensorGauss, Scheme::Hybrid, Scheme::MonteCarlo}) {
    QuadratureSpec spec;
    spec.interior = s == Scheme::TensorGauss ? InteriorSpec{s, 0, 3, 3} : InteriorSpec{s, 40, 0, 0};
    spec.boundary = BoundarySpec{Scheme::MonteCarlo, 30, 0, 0};
    spec.n_angles = 8;
    spec.seed = 5;
    const QuadratureSet q = build_quadrature(p.domain, spec);
    MultiplierField m = make_multiplier(p, q.boundary);
    randomize(m, 3);
    const LossParts a = assemble(net, m, q, p, LagrangianConfig{});
    const LossParts r = assemble_reference(net, m, q, p, LagrangianConfig{});
    CHECK(a.pde == doctest::Approx(r.pde).epsilon(1e-12));
    CHECK(a.boundary_penalty == doctest::Approx(r.boundary_penalty).epsilon(1e-12));
    CHECK(a.multiplier_term == doctest::Approx(r.multiplier_term).epsilon(1e-12));
  }
}

TEST_CASE("gradient matches central differences with every term active") {
  // 2x2 spatial x 8 directions, width-8 depth-2 network
  const QuadratureSet q = tensor_quad(2, 8, 2, 4);
  const ProblemSpec p = full_problem();
  const MlpParams net = init_params({4, 8, 8, 1}, Activation::Tanh, 6);
  MultiplierField m = make_multiplier(p, q.boundary);
  randomize(m, 7);
  LagrangianConfig c;
  c.gamma = 1.0;
  const Eigen::VectorXd g = gradient(net, m, q, p, c);
  const Eigen::VectorXd fd = central_differences(net, m, q, p, c);
  CHECK((g - fd).norm() <= 1e-5 * fd.norm());
}

TEST_CASE("gradient is zero at u = 0 for the pure residual") {
  const QuadratureSet q = tensor_quad(3, 8, 4, 4);
  ProblemSpec p;
  p.sigma_t = 1.0;
  LagrangianConfig c;
  c.gamma = 0.0;
  const MlpParams zero({4, 8, 8, 1}, Activation::Tanh);
  CHECK(gradient(zero, make_multiplier(p, q.boundary), q, p, c).isZero());
}

TEST_CASE("doubling every weight doubles the gradient") {
  QuadratureSet q = tensor_quad(3, 8, 4, 4);
  const ProblemSpec p = full_problem();
  const MlpParams net = init_params({4, 8, 1}, Activation::Tanh, 8);
  MultiplierField m = make_multiplier(p, q.boundary);
  randomize(m, 9);
  const LagrangianConfig c;
  const Eigen::VectorXd g1 = gradient(net, m, q, p, c);
  for (auto& n : q.interior.nodes) n.weight *= 2;
  for (auto& n : q.boundary) n.weight *= 2;
  MultiplierField m2 = make_multiplier(p, q.boundary);
  m2.values() = m.values();
  const Eigen::VectorXd g2 = gradient(net, m2, q, p, c);
  CHECK((g2 - 2 * g1).norm() <= 1e-12 * g1.norm());
}

TEST_CASE("multiplier registry is enforced") {
  const ProblemSpec p;
  const QuadratureSet a = tensor_quad(2, 8, 4, 4), b = tensor_quad(2, 8, 4, 5);
  const MultiplierField m = make_multiplier(p, a.boundary);
  CHECK(m.size() == a.boundary.size());
  CHECK_THROWS_AS(assemble(MlpParams({4, 8, 1}, Activation::Tanh), m, b, p, LagrangianConfig{}), ContractViolation);
}

TEST_CASE("chunked OpenMP evaluation matches the serial tape for any thread count") {
  const ProblemSpec p = full_problem();
  QuadratureSpec spec;
  spec.interior = InteriorSpec{Scheme::MonteCarlo, 700, 0, 0};
  spec.boundary = BoundarySpec{Scheme::TensorGauss, 0, 12, 12};
  spec.n_angles = 8;
  spec.seed = 3;
  const QuadratureSet q = build_quadrature(p.domain, spec);
  const MlpParams net = init_params({4, 16, 16, 1}, Activation::Tanh, 10);
  MultiplierField m = make_multiplier(p, q.boundary);
  randomize(m, 11);
  const LagrangianConfig c;
  const LossAndGradient s = evaluate_serial(net, m, q, p, c);
  omp_set_num_threads(1);
  const LossAndGradient one = evaluate(net, m, q, p, c);
  omp_set_num_threads(4);
  const LossAndGradient four = evaluate(net, m, q, p, c);
  omp_set_num_threads(omp_get_num_procs());
  CHECK(one.parts.value() == four.parts.value());
  CHECK(one.gradient == four.gradient);
  CHECK(one.parts.value() == doctest::Approx(s.parts.value()).epsilon(1e-12));
  CHECK((one.gradient - s.gradient).norm() <= 1e-12 * s.gradient.norm());
}

TEST_CASE("subsampling") {
  const ProblemSpec p = full_problem();
  QuadratureSpec spec;
  spec.interior = InteriorSpec{Scheme::Hybrid, 200, 0, 0};
  spec.boundary = BoundarySpec{Scheme::TensorGauss, 0, 4, 4};
  spec.n_angles = 8;
  spec.seed = 12;
  const QuadratureSet q = build_quadrature(p.domain, spec);

  SUBCASE("full batch is the identity") {
    const QuadratureSet s = subsample(q, BatchSpec{200, true}, 5);
    CHECK(s.interior.nodes.size() == q.interior.nodes.size());
    const QuadratureSet z = subsample(q, BatchSpec{0, true}, 5);
    CHECK(z.interior.nodes.size() == q.interior.nodes.size());
  }
  SUBCASE("equal seeds give equal draws, measure is preserved, boundary untouched") {
    const QuadratureSet a = subsample(q, BatchSpec{20, true}, 9), b = subsample(q, BatchSpec{20, true}, 9);
    CHECK(a.interior.cluster_count() == 20);
    double wa = 0;
    for (std::size_t i = 0; i < a.interior.nodes.size(); ++i) {
      CHECK(a.interior.nodes[i].point.x == b.interior.nodes[i].point.x);
      wa += a.interior.nodes[i].weight;
    }
    CHECK(wa == doctest::Approx(2 * M_PI).epsilon(1e-12));
    CHECK(a.boundary.size() == q.boundary.size());
    CHECK(registry_hash(a.boundary) == registry_hash(q.boundary));
  }
  SUBCASE("oversized batch is rejected") {
    CHECK_THROWS_AS(subsample(q, BatchSpec{201, true}, 1), ContractViolation);
  }
  SUBCASE("subsampled pde part is unbiased") {
    const MlpParams net = init_params({4, 8, 8, 1}, Activation::Tanh, 13);
    const MultiplierField m = make_multiplier(p, q.boundary);
    const LagrangianConfig c;
    const double full = assemble(net, m, q, p, c).pde;
    double sum = 0, sq = 0;
    const int n = 200;
    for (int s = 0; s < n; ++s) {
      const double v = assemble(net, m, subsample(q, BatchSpec{10, true}, derive_seed(77, s)), p, c).pde;
      sum += v;
      sq += v * v;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sq / n - mean * mean) / (n - 1));
    CHECK(std::abs(mean - full) <= 3 * se);
  }
}

TEST_CASE("config validation") {
  LagrangianConfig c;
  c.gamma = -0.1;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
}
