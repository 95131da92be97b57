#include "deepuzawa/linear_oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "deepuzawa/file_io.hpp"

namespace deepuzawa {

namespace {

constexpr double kConditionLimit = 1e12;

// Spatial factor p and its gradient.
double spatial(std::size_t p, const Vec2& x) {
  switch (p) {
    case 0: return 1.0;
    case 1: return x[0];
    case 2: return x[1];
    case 3: return x[0] * x[1];
    case 4: return x[0] * x[0];
    default: return x[1] * x[1];
  }
}

Vec2 spatial_gradient(std::size_t p, const Vec2& x) {
  switch (p) {
    case 0: return Vec2(0.0, 0.0);
    case 1: return Vec2(1.0, 0.0);
    case 2: return Vec2(0.0, 1.0);
    case 3: return Vec2(x[1], x[0]);
    case 4: return Vec2(2.0 * x[0], 0.0);
    default: return Vec2(0.0, 2.0 * x[1]);
  }
}

double angular(std::size_t a, const PhasePoint& p) {
  return a == 0 ? 1.0 : (a == 1 ? p.omega[0] : p.omega[1]);
}

Eigen::RowVectorXd basis_row(const PhasePoint& p) {
  Eigen::RowVectorXd r(static_cast<Eigen::Index>(kOracleBasisSize));
  for (std::size_t i = 0; i < kOracleBasisSize; ++i) r(static_cast<Eigen::Index>(i)) = oracle_basis(i, p);
  return r;
}

Eigen::MatrixXd basis_matrix(std::span<const BoundaryNode> nodes, Eigen::VectorXd& weights) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(nodes.size()), static_cast<Eigen::Index>(kOracleBasisSize));
  weights.resize(static_cast<Eigen::Index>(nodes.size()));
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    m.row(static_cast<Eigen::Index>(k)) = basis_row(nodes[k].point.point);
    weights(static_cast<Eigen::Index>(k)) = nodes[k].weight;
  }
  return m;
}

double relative_gap(double lhs, double rhs) {
  return std::abs(lhs - rhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)});
}

std::string format_sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

}  // namespace

double oracle_basis(std::size_t i, const PhasePoint& p) {
  require(i < kOracleBasisSize, "oracle basis index out of range");
  return spatial(i / 3, p.x) * angular(i % 3, p);
}

double oracle_basis_directional(std::size_t i, const PhasePoint& p) {
  require(i < kOracleBasisSize, "oracle basis index out of range");
  return p.omega.dot(spatial_gradient(i / 3, p.x)) * angular(i % 3, p);
}

LinearTrialSpace LinearTrialSpace::build(const OracleSetup& setup) {
  require(setup.sigma_a >= 0.0 && setup.sigma_t >= 0.0, "oracle coefficients must be >= 0");
  LinearTrialSpace s;
  s.setup_ = setup;

  QuadratureSpec qs;
  qs.interior = InteriorSpec{Scheme::TensorGauss, 0, setup.n_spatial, setup.n_spatial};
  qs.boundary = BoundarySpec{Scheme::TensorGauss, 0, setup.n_along, setup.n_half};
  qs.n_angles = setup.n_angles;
  qs.with_outflow = true;
  const QuadratureSet quad = build_quadrature(Domain(), qs);
  const DiscreteKernel kernel(setup.kernel, quad.angular);

  const auto n = static_cast<Eigen::Index>(kOracleBasisSize);
  std::mt19937_64 rng(setup.data_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  s.cg_.resize(n);
  for (auto& v : s.cg_) v = normal(rng);
  Eigen::VectorXd cf(n);
  for (auto& v : cf) v = normal(rng);
  if (setup.consistent) cf = s.cg_;

  s.a_ = Eigen::MatrixXd::Zero(n, n);
  s.mass_ = Eigen::MatrixXd::Zero(n, n);
  s.stream_ = Eigen::MatrixXd::Zero(n, n);
  s.rf_ = Eigen::VectorXd::Zero(n);
  s.ff_ = 0.0;
  const InteriorSet& set = quad.interior;
  for (std::size_t c = 0; c < set.cluster_count(); ++c) {
    const std::size_t k0 = set.offsets[c];
    const auto m = static_cast<Eigen::Index>(set.offsets[c + 1] - k0);
    Eigen::MatrixXd phi(m, n), grad(m, n);
    Eigen::VectorXd w(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const InteriorNode& node = set.nodes[k0 + static_cast<std::size_t>(k)];
      w(k) = node.weight;
      for (Eigen::Index i = 0; i < n; ++i) {
        phi(k, i) = oracle_basis(static_cast<std::size_t>(i), node.point);
        grad(k, i) = oracle_basis_directional(static_cast<std::size_t>(i), node.point);
      }
    }
    const Eigen::MatrixXd r = grad + (setup.sigma_a + setup.sigma_t) * phi -
                              setup.sigma_t * (kernel.mixing() * phi);
    const Eigen::VectorXd f = r * cf;
    const Eigen::MatrixXd wr = w.asDiagonal() * r;
    s.a_ += r.transpose() * wr;
    s.rf_ += wr.transpose() * f;
    s.ff_ += f.dot(w.asDiagonal() * f);
    s.mass_ += phi.transpose() * w.asDiagonal() * phi;
    s.stream_ += grad.transpose() * w.asDiagonal() * grad;
  }

  s.phib_ = basis_matrix(quad.boundary, s.wb_);
  s.b_ = s.phib_.transpose() * s.wb_.asDiagonal() * s.phib_;
  s.g_ = s.phib_ * s.cg_;
  s.bg_ = s.phib_.transpose() * (s.wb_.asDiagonal() * s.g_);
  Eigen::VectorXd wo;
  const Eigen::MatrixXd phio = basis_matrix(quad.outflow, wo);
  s.outflow_ = phio.transpose() * wo.asDiagonal() * phio;
  return s;
}

double LinearTrialSpace::boundary_inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  require(a.size() == wb_.size() && b.size() == wb_.size(), "boundary vector length mismatch");
  return a.dot(wb_.asDiagonal() * b);
}

double LinearTrialSpace::residual_norm_sq(const Eigen::VectorXd& c) const {
  return std::max(0.0, c.dot(a_ * c) - 2.0 * c.dot(rf_) + ff_);
}

LinearTrialSpace::TripleParts LinearTrialSpace::triple_norm_sq(const Eigen::VectorXd& c) const {
  TripleParts t;
  t.l2 = c.dot(mass_ * c);
  t.streaming = c.dot(stream_ * c);
  t.outflow = c.dot(outflow_ * c);
  t.inflow = c.dot(b_ * c);
  return t;
}

double LinearTrialSpace::lagrangian(const Eigen::VectorXd& c, const Eigen::VectorXd& lambda,
                                    double gamma) const {
  const Eigen::VectorXd e = trace(c) - g_;
  return 0.5 * residual_norm_sq(c) + 0.5 * gamma * boundary_norm_sq(e) - boundary_inner(lambda, e);
}

Eigen::VectorXd LinearTrialSpace::lagrangian_gradient(const Eigen::VectorXd& c,
                                                      const Eigen::VectorXd& lambda,
                                                      double gamma) const {
  return a_ * c - rf_ + gamma * (b_ * c - bg_) - phib_.transpose() * (wb_.asDiagonal() * lambda);
}

Eigen::VectorXd exact_inner_solve(const LinearTrialSpace& space, const Eigen::VectorXd& lambda,
                                  double gamma) {
  require(gamma >= 0.0, "exact_inner_solve needs gamma >= 0");
  require(lambda.size() == space.g().size(), "multiplier length differs from the boundary node count");
  const Eigen::MatrixXd h = space.A() + gamma * space.B();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kConditionLimit)
    throw NumericalError("inner system is ill-conditioned (condition estimate " +
                         format_sci(lo > 0.0 ? hi / lo : INFINITY) + ")");
  const Eigen::VectorXd rhs = space.rhs_f() + gamma * space.rhs_g() +
                              space.trace_matrix().transpose() *
                                  (space.boundary_weights().asDiagonal() * lambda);
  return h.ldlt().solve(rhs);
}

SaddlePoint fixed_point_solve(const LinearTrialSpace& space, double gamma,
                              const Eigen::VectorXd& lambda0) {
  const auto n = static_cast<Eigen::Index>(space.size());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  kkt.topLeftCorner(n, n) = space.A() + gamma * space.B();
  kkt.topRightCorner(n, n) = -space.B();
  kkt.bottomLeftCorner(n, n) = space.B();
  Eigen::VectorXd rhs(2 * n);
  rhs << space.rhs_f() + gamma * space.rhs_g(), space.rhs_g();
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (!lu.isInvertible()) throw NumericalError("KKT system of the oracle is singular");
  const Eigen::VectorXd sol = lu.solve(rhs);

  SaddlePoint sp;
  sp.c = sol.head(n);
  const Eigen::MatrixXd& phib = space.trace_matrix();
  const Eigen::VectorXd& wb = space.boundary_weights();
  const Eigen::VectorXd proj_coef = space.B().ldlt().solve(phib.transpose() * (wb.asDiagonal() * lambda0));
  sp.lambda = phib * sol.tail(n) + (lambda0 - phib * proj_coef);
  sp.boundary_mismatch = std::sqrt(space.boundary_norm_sq(space.trace(sp.c) - space.g()));
  return sp;
}

OracleRun run_uzawa_oracle(const LinearTrialSpace& space, double gamma, double rho, int n_iter,
                           const Eigen::VectorXd& lambda0) {
  require(rho > 0.0, "oracle Uzawa run needs rho > 0");
  require(n_iter >= 0, "oracle Uzawa run needs n_iter >= 0");
  OracleRun run;
  run.saddle = fixed_point_solve(space, gamma, lambda0);
  Eigen::VectorXd lambda = lambda0;
  for (int k = 0; k <= n_iter; ++k) {
    const Eigen::VectorXd c = exact_inner_solve(space, lambda, gamma);
    const Eigen::VectorXd mismatch = space.trace(c) - space.g();
    run.c.push_back(c);
    run.lambda.push_back(lambda);
    run.dist_lambda.push_back(std::sqrt(space.boundary_norm_sq(lambda - run.saddle.lambda)));
    run.residual_pde.push_back(std::sqrt(space.residual_norm_sq(c)));
    run.residual_boundary.push_back(std::sqrt(space.boundary_norm_sq(mismatch)));
    lambda -= rho * mismatch;
  }
  return run;
}

void write_oracle_csv(const std::filesystem::path& path, const OracleRun& run) {
  std::ostringstream os;
  os << "k,dist_lambda,residual_pde,residual_boundary\n";
  for (std::size_t k = 0; k < run.dist_lambda.size(); ++k)
    os << k << ',' << format_double(run.dist_lambda[k]) << ',' << format_double(run.residual_pde[k])
       << ',' << format_double(run.residual_boundary[k]) << '\n';
  write_file_atomic(path, os.str());
}

double strong_convergence_constant(double sigma_a, double sigma_t, double rho, double gamma) {
  double best = -INFINITY;
  constexpr int kGrid = 20000;
  for (int i = 1; i < kGrid; ++i) {
    const double alpha = static_cast<double>(i) / kGrid;
    const double c = std::min({2.0 * rho * alpha, 2.0 * rho * sigma_a * alpha,
                               rho * (2.0 * gamma - rho - 2.0 * sigma_a * alpha),
                               2.0 * rho * (sigma_a * sigma_a * alpha -
                                            4.0 * sigma_t * sigma_t / (1.0 - alpha))});
    best = std::max(best, c);
  }
  return best;
}

std::vector<OracleCheck> verify_oracle_suite() {
  std::vector<OracleCheck> checks;
  const auto add = [&](std::string name, bool ok, std::string detail) {
    checks.push_back(OracleCheck{std::move(name), ok, std::move(detail)});
  };

  OracleSetup setup;
  setup.sigma_a = 1.0;
  setup.sigma_t = 0.5;
  const LinearTrialSpace space = LinearTrialSpace::build(setup);
  const Eigen::VectorXd lambda0 = Eigen::VectorXd::Zero(space.g().size());

  for (const auto& [gamma, rho] : std::array<std::pair<double, double>, 3>{{{1.0, 0.5}, {1.0, 1.5}, {2.0, 3.5}}}) {
    const std::string tag = "gamma=" + format_sci(gamma) + " rho=" + format_sci(rho);
    const OracleRun run = run_uzawa_oracle(space, gamma, rho, 200, lambda0);
    const SaddlePoint& sp = run.saddle;
    double residual_gap = 0.0, recursion_gap = 0.0, telescoped = 0.0;
    bool monotone = true;
    for (std::size_t k = 0; k + 1 < run.lambda.size(); ++k) {
      const Eigen::VectorXd e = run.c[k] - sp.c;
      const Eigen::VectorXd eb = space.trace(e);
      const Eigen::VectorXd dl = run.lambda[k] - sp.lambda;
      const double lhs = space.operator_norm_sq(e) + gamma * space.boundary_norm_sq(eb);
      residual_gap = std::max(residual_gap, relative_gap(lhs, space.boundary_inner(dl, eb)));
      const double next = space.boundary_norm_sq(run.lambda[k + 1] - sp.lambda);
      const double pred = space.boundary_norm_sq(dl) - 2.0 * rho * space.boundary_inner(dl, eb) +
                          rho * rho * space.boundary_norm_sq(eb);
      recursion_gap = std::max(recursion_gap, relative_gap(next, pred));
      telescoped += 2.0 * rho * space.operator_norm_sq(e) +
                    rho * (2.0 * gamma - rho) * space.boundary_norm_sq(eb);
      if (run.dist_lambda[k + 1] > run.dist_lambda[k] + 1e-12) monotone = false;
    }
    const double bound = std::pow(run.dist_lambda.front(), 2);
    add("residual identity (" + tag + ")", residual_gap <= 1e-10, "max rel gap " + format_sci(residual_gap));
    add("multiplier distance recursion (" + tag + ")", recursion_gap <= 1e-10,
        "max rel gap " + format_sci(recursion_gap));
    add("telescoping bound (" + tag + ")", telescoped <= bound + 1e-8,
        format_sci(telescoped) + " <= " + format_sci(bound));
    add("monotone multiplier distance (" + tag + ")", monotone,
        "final distance " + format_sci(run.dist_lambda.back()));
  }

  {
    OracleSetup strong;
    strong.sigma_a = 1.0;
    strong.sigma_t = 0.1;
    const double gamma = 2.0, rho = 1.0;
    const LinearTrialSpace sspace = LinearTrialSpace::build(strong);
    const OracleRun run = run_uzawa_oracle(sspace, gamma, rho, 200, lambda0);
    const double c = strong_convergence_constant(strong.sigma_a, strong.sigma_t, rho, gamma);
    double partial = 0.0, prev = INFINITY;
    bool decreasing = true, bounded = true;
    const double bound = std::pow(run.dist_lambda.front(), 2) + 1e-8;
    for (std::size_t k = 0; k + 1 < run.c.size(); ++k) {
      const double t = sspace.triple_norm_sq(run.c[k] - run.saddle.c).total();
      if (t > prev * (1.0 + 1e-12) + 1e-24) decreasing = false;
      prev = t;
      partial += c * t;
      if (partial > bound) bounded = false;
    }
    add("strong regime: triple-norm error decreasing", decreasing, "C = " + format_sci(c));
    add("strong regime: weighted partial sums bounded", bounded,
        format_sci(partial) + " <= " + format_sci(bound));
  }

  {
    const double gamma = 1.0;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd lambda(space.g().size());
    for (auto& v : lambda) v = normal(rng);
    const Eigen::VectorXd star = exact_inner_solve(space, lambda, gamma);
    const double f_star = space.lagrangian(star, lambda, gamma);
    const Eigen::MatrixXd h = space.A() + gamma * space.B();
    const double lip = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h, Eigen::EigenvaluesOnly)
                           .eigenvalues()
                           .maxCoeff();
    const double eta = 1.0 / lip;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(star.size());
    const double dist0 = (theta - star).squaredNorm();
    bool ok = true;
    std::string detail;
    for (int t = 1; t <= 1000; ++t) {
      theta -= eta * space.lagrangian_gradient(theta, lambda, gamma);
      if (t == 10 || t == 100 || t == 1000) {
        const double gap = space.lagrangian(theta, lambda, gamma) - f_star;
        const double bnd = dist0 / (2.0 * eta * t);
        ok = ok && gap <= bnd;
        detail += "T=" + std::to_string(t) + ": " + format_sci(gap) + " <= " + format_sci(bnd) + "; ";
      }
    }
    add("gradient descent suboptimality bound", ok, detail);
  }

  {
    const SaddlePoint a = fixed_point_solve(space, 0.5, lambda0);
    const SaddlePoint b = fixed_point_solve(space, 1.0, lambda0);
    const SaddlePoint c = fixed_point_solve(space, 2.0, lambda0);
    const double gap = std::max((a.c - b.c).lpNorm<Eigen::Infinity>(), (c.c - b.c).lpNorm<Eigen::Infinity>());
    add("saddle point independent of gamma", gap <= 1e-10, "max coefficient gap " + format_sci(gap));
  }
  return checks;
}

}  // namespace deepuzawa
