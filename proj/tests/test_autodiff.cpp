#include <doctest.h>

#include <cmath>
#include <random>

#include "deepuzawa/autodiff.hpp"

using namespace deepuzawa;
using ad::Matrix;
using ad::NodeId;
using ad::Tape;

namespace {

Matrix col(std::initializer_list<double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

// 2-layer tanh net on a 2-vector input, params flat [W1 (3x2), b1 (3), w2 (1x3), b2].
NodeId two_layer(Tape& t, NodeId x, const Eigen::VectorXd& th) {
  const NodeId w1 = t.parameter(0, Eigen::Map<const Matrix>(th.data(), 3, 2));
  const NodeId b1 = t.parameter(6, th.segment(6, 3));
  const NodeId w2 = t.parameter(9, Eigen::Map<const Matrix>(th.data() + 9, 1, 3));
  const NodeId b2 = t.parameter(12, th.segment(12, 1));
  const NodeId h = t.tanh(t.add_column(t.matmul(w1, x), b1));
  return t.add_column(t.matmul(w2, h), b2);
}

double plain_two_layer(const Eigen::VectorXd& th, const Eigen::Vector2d& x) {
  const Eigen::Map<const Matrix> w1(th.data(), 3, 2);
  const Eigen::Vector3d h = (w1 * x + th.segment(6, 3)).array().tanh();
  return th.segment(9, 3).dot(h) + th(12);
}

Eigen::VectorXd random_theta(std::uint64_t seed, Eigen::Index n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd th(n);
  for (auto& v : th) v = u(rng);
  return th;
}

}  // namespace

TEST_CASE("constant program has zero directional derivative") {
  Tape t;
  const std::vector<double> x{0.3, 0.7}, dx{1.0, -2.0};
  const auto r = ad::record_forward(t, x, dx, [](Tape& tp, NodeId) { return tp.constant(Matrix::Constant(1, 1, 4.2)); });
  CHECK(r.value == 4.2);
  CHECK(r.directional == 0.0);
}

TEST_CASE("linear map w.x with seed e1") {
  Tape t;
  const std::vector<double> x{0.5, -1.5}, dx{1.0, 0.0};
  const auto r = ad::record_forward(t, x, dx, [](Tape& tp, NodeId in) {
    return tp.matmul(tp.constant((Matrix(1, 2) << 2.0, 3.0).finished()), in);
  });
  CHECK(r.value == doctest::Approx(2.0 * 0.5 - 3.0 * 1.5));
  CHECK(r.directional == 2.0);
}

TEST_CASE("mismatched input lengths are rejected") {
  Tape t;
  const std::vector<double> x{0.5, 1.0}, dx{1.0};
  CHECK_THROWS_AS(ad::record_forward(t, x, dx, [](Tape& tp, NodeId in) { return tp.sum(in); }), ContractViolation);
}

TEST_CASE("tanh network directional derivative against central differences") {
  const Eigen::VectorXd th = random_theta(5, 13);
  const Eigen::Vector2d x(0.3, -0.4), w(std::cos(0.7), std::sin(0.7));
  Tape t(13);
  const std::vector<double> xs{x(0), x(1)}, ws{w(0), w(1)};
  const auto r = ad::record_forward(t, xs, ws, [&](Tape& tp, NodeId in) { return two_layer(tp, in, th); });
  const double h = 1e-5;
  const double fd = (plain_two_layer(th, x + h * w) - plain_two_layer(th, x - h * w)) / (2 * h);
  CHECK(r.value == doctest::Approx(plain_two_layer(th, x)).epsilon(1e-14));
  CHECK(std::abs(r.directional - fd) <= 1e-6 * std::abs(fd));
}

TEST_CASE("product of parameters has gradient (4, 3) at (3, 4)") {
  Tape t(2);
  const NodeId a = t.parameter(0, Matrix::Constant(1, 1, 3.0));
  const NodeId b = t.parameter(1, Matrix::Constant(1, 1, 4.0));
  const NodeId out = t.mul(a, b);
  const std::vector<ad::Seed> seeds{{out, Matrix::Ones(1, 1), Matrix()}};
  const Eigen::VectorXd g = t.reverse(seeds);
  CHECK(g(0) == 4.0);
  CHECK(g(1) == 3.0);
}

TEST_CASE("gradient of the directional output of theta.x equals the seed direction") {
  Tape t(2);
  const NodeId x = t.input(col({0.2, 0.9}), col({0.6, 0.8}));
  const NodeId th = t.parameter(0, (Matrix(1, 2) << 1.5, -0.5).finished());
  const NodeId out = t.matmul(th, x);
  const std::vector<ad::Seed> seeds{{out, Matrix(), Matrix::Ones(1, 1)}};
  const Eigen::VectorXd g = t.reverse(seeds);
  CHECK(g(0) == doctest::Approx(0.6));
  CHECK(g(1) == doctest::Approx(0.8));
}

TEST_CASE("seed on a missing node is a contract violation") {
  Tape t(1);
  t.parameter(0, Matrix::Ones(1, 1));
  const std::vector<ad::Seed> seeds{{NodeId{17}, Matrix::Ones(1, 1), Matrix()}};
  CHECK_THROWS_AS(t.reverse(seeds), ContractViolation);
}

TEST_CASE("division by zero names the node") {
  Tape t;
  const NodeId a = t.constant(Matrix::Ones(1, 1));
  const NodeId z = t.constant(Matrix::Zero(1, 1));
  try {
    t.div(a, z);
    FAIL("expected EvaluationError");
  } catch (const ad::EvaluationError& e) {
    CHECK(e.node() == 2);
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("forward-over-reverse: gradients of value and directional match central differences") {
  // Residual-like scalar: 0.5 * sum (du + 0.7 u - 0.2)^2 over a 5-column batch.
  const Eigen::VectorXd th0 = random_theta(9, 13);
  Matrix x(2, 5), dx(2, 5);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Eigen::Index j = 0; j < 5; ++j) {
    const double a = 6.28 * (u(rng) + 1) / 2;
    x(0, j) = u(rng);
    x(1, j) = u(rng);
    dx(0, j) = std::cos(a);
    dx(1, j) = std::sin(a);
  }
  const auto loss = [&](const Eigen::VectorXd& th, Eigen::VectorXd* grad) {
    Tape t(13);
    const NodeId in = t.input(x, dx);
    const NodeId out = two_layer(t, in, th);
    const NodeId r = t.sub(t.add(t.directional(out), t.scale(out, 0.7)), t.constant(Matrix::Constant(1, 5, 0.2)));
    const NodeId l = t.scale(t.sum(t.mul(r, r)), 0.5);
    if (grad) {
      const std::vector<ad::Seed> seeds{{l, Matrix::Ones(1, 1), Matrix()}};
      *grad = t.reverse(seeds);
    }
    return t.value(l)(0, 0);
  };
  Eigen::VectorXd g;
  loss(th0, &g);
  const double h = 1e-5;
  Eigen::VectorXd fd(13);
  for (Eigen::Index i = 0; i < 13; ++i) {
    Eigen::VectorXd p = th0, m = th0;
    p(i) += h;
    m(i) -= h;
    fd(i) = (loss(p, nullptr) - loss(m, nullptr)) / (2 * h);
  }
  CHECK((g - fd).norm() <= 1e-5 * fd.norm());
}

TEST_CASE("reverse is additive in the seeds") {
  const Eigen::VectorXd th = random_theta(1, 13);
  Tape t(13);
  const NodeId in = t.input(col({0.1, 0.2}), col({1.0, 0.0}));
  const NodeId out = two_layer(t, in, th);
  const Matrix s1 = Matrix::Constant(1, 1, 0.3), s2 = Matrix::Constant(1, 1, -1.1);
  const std::vector<ad::Seed> a{{out, s1, Matrix()}};
  const std::vector<ad::Seed> b{{out, Matrix(), s2}};
  const std::vector<ad::Seed> both{{out, s1, s2}};
  CHECK((t.reverse(a) + t.reverse(b) - t.reverse(both)).norm() <= 1e-14);
}

TEST_CASE("replaying a tape reproduces values and gradients bit-for-bit") {
  const Eigen::VectorXd th = random_theta(2, 13);
  const auto once = [&] {
    Tape t(13);
    const NodeId in = t.input(col({0.4, -0.3}), col({0.0, 1.0}));
    const NodeId out = two_layer(t, in, th);
    const std::vector<ad::Seed> seeds{{out, Matrix::Ones(1, 1), Matrix::Ones(1, 1)}};
    return std::pair{t.value(out)(0, 0), t.reverse(seeds)};
  };
  const auto [v1, g1] = once();
  const auto [v2, g2] = once();
  CHECK(v1 == v2);
  CHECK(g1 == g2);
}

TEST_CASE("elementwise primitives differentiate correctly") {
  const Matrix x = col({0.3, 0.8, 1.4});
  const Matrix dx = col({1.0, -0.5, 2.0});
  const double h = 1e-6;
  const auto check = [&](auto&& build, auto&& f) {
    Tape t;
    const NodeId in = t.input(x, dx);
    const NodeId out = build(t, in);
    const Matrix d = t.tangent(out);
    for (Eigen::Index i = 0; i < 3; ++i) {
      const double fd = (f(x(i) + h * dx(i)) - f(x(i) - h * dx(i))) / (2 * h);
      CHECK(d(i) == doctest::Approx(fd).epsilon(1e-7));
    }
  };
  check([](Tape& t, NodeId a) { return t.exp(a); }, [](double v) { return std::exp(v); });
  check([](Tape& t, NodeId a) { return t.sin(a); }, [](double v) { return std::sin(v); });
  check([](Tape& t, NodeId a) { return t.cos(a); }, [](double v) { return std::cos(v); });
  check([](Tape& t, NodeId a) { return t.pow(a, 2.5); }, [](double v) { return std::pow(v, 2.5); });
  check([](Tape& t, NodeId a) { return t.gelu(a); },
        [](double v) { return 0.5 * v * (1 + std::erf(v / std::sqrt(2.0))); });
  check([](Tape& t, NodeId a) { return t.silu(a); }, [](double v) { return v / (1 + std::exp(-v)); });
  check([](Tape& t, NodeId a) { return t.div(t.constant(Matrix::Ones(3, 1)), a); }, [](double v) { return 1 / v; });
}
