#include "deepuzawa/kinetic_ops.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace deepuzawa {

namespace {

constexpr double kPi = std::numbers::pi;

double integrate_pm1(const auto& f) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -1.0, 1.0, 20, 1e-15);
}

}  // namespace

std::string_view to_string(CoefficientKind k) {
  switch (k) {
    case CoefficientKind::Constant: return "constant";
    case CoefficientKind::Ball: return "ball";
    case CoefficientKind::Split: return "split";
  }
  return "?";
}

CoefficientKind parse_coefficient_kind(std::string_view tag) {
  if (tag == "constant") return CoefficientKind::Constant;
  if (tag == "ball") return CoefficientKind::Ball;
  if (tag == "split") return CoefficientKind::Split;
  throw ContractViolation("unknown coefficient kind '" + std::string(tag) +
                          "' (constant | ball | split)");
}

double CoefficientField::operator()(const Vec2& x) const {
  switch (kind) {
    case CoefficientKind::Constant: return value;
    case CoefficientKind::Ball: return (x - center).norm() <= radius ? inside : outside;
    case CoefficientKind::Split: return x[0] < threshold ? left : right;
  }
  return value;
}

double CoefficientField::max_value() const {
  switch (kind) {
    case CoefficientKind::Constant: return value;
    case CoefficientKind::Ball: return std::max(inside, outside);
    case CoefficientKind::Split: return std::max(left, right);
  }
  return value;
}

double CoefficientField::min_value() const {
  switch (kind) {
    case CoefficientKind::Constant: return value;
    case CoefficientKind::Ball: return std::min(inside, outside);
    case CoefficientKind::Split: return std::min(left, right);
  }
  return value;
}

void CoefficientField::validate() const {
  require(std::isfinite(max_value()) && min_value() >= 0.0, "sigma_a must be finite and >= 0");
  if (kind == CoefficientKind::Ball) require(radius > 0.0, "sigma_a ball radius must be > 0");
}

std::string_view to_string(KernelKind k) {
  return k == KernelKind::Isotropic ? "isotropic" : "forward-peaked";
}

KernelKind parse_kernel_kind(std::string_view tag) {
  if (tag == "isotropic") return KernelKind::Isotropic;
  if (tag == "forward-peaked") return KernelKind::ForwardPeaked;
  throw ContractViolation("unknown kernel '" + std::string(tag) +
                          "' (isotropic | forward-peaked)");
}

double ScatteringKernel::shape(double y) const {
  if (kind == KernelKind::Isotropic) return 0.5;
  return std::exp((y - 1.0) / epsilon);
}

double ScatteringKernel::continuum(double y) const {
  if (kind == KernelKind::Isotropic) return 0.5;
  const double z = integrate_pm1([this](double t) { return shape(t); });
  return shape(y) / z;
}

void ScatteringKernel::validate() const {
  if (kind == KernelKind::ForwardPeaked)
    require(epsilon > 0.0 && std::isfinite(epsilon), "forward-peaked kernel needs epsilon > 0");
}

DiscreteKernel::DiscreteKernel(const ScatteringKernel& kernel, const AngularRule& rule)
    : kernel_(kernel), rule_(rule) {
  kernel.validate();
  const auto n = static_cast<Eigen::Index>(rule.size());
  require(n > 0, "discrete kernel needs a nonempty angular rule");
  mixing_.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) mixing_.row(i) = row(rule.omega[static_cast<std::size_t>(i)]);
}

Eigen::RowVectorXd DiscreteKernel::row(const Vec2& omega) const {
  const std::size_t n = rule_.size();
  Eigen::RowVectorXd r(static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j)
    r(static_cast<Eigen::Index>(j)) = rule_.weight[j] * kernel_.shape(omega.dot(rule_.omega[j]));
  const double total = r.sum();
  require(total > 0.0, "scattering kernel row has zero mass on this angular rule");
  return r / total;
}

std::string_view to_string(SourceKind k) {
  switch (k) {
    case SourceKind::Zero: return "zero";
    case SourceKind::Constant: return "constant";
    case SourceKind::Ball: return "ball";
    case SourceKind::Manufactured: return "manufactured";
  }
  return "?";
}

SourceKind parse_source_kind(std::string_view tag) {
  if (tag == "zero") return SourceKind::Zero;
  if (tag == "constant") return SourceKind::Constant;
  if (tag == "ball") return SourceKind::Ball;
  if (tag == "manufactured") return SourceKind::Manufactured;
  throw ContractViolation("unknown source kind '" + std::string(tag) +
                          "' (zero | constant | ball | manufactured)");
}

std::string_view to_string(InflowKind k) {
  switch (k) {
    case InflowKind::Constant: return "constant";
    case InflowKind::LeftEdge: return "left-edge";
    case InflowKind::Beam: return "beam";
    case InflowKind::Manufactured: return "manufactured";
  }
  return "?";
}

InflowKind parse_inflow_kind(std::string_view tag) {
  if (tag == "constant") return InflowKind::Constant;
  if (tag == "left-edge") return InflowKind::LeftEdge;
  if (tag == "beam") return InflowKind::Beam;
  if (tag == "manufactured") return InflowKind::Manufactured;
  throw ContractViolation("unknown inflow kind '" + std::string(tag) +
                          "' (constant | left-edge | beam | manufactured)");
}

void ProblemSpec::validate() const {
  sigma_a.validate();
  require(sigma_t >= 0.0 && std::isfinite(sigma_t), "sigma_t must be finite and >= 0");
  kernel.validate();
  if (source.kind == SourceKind::Ball) require(source.radius > 0.0, "source ball radius must be > 0");
  if (inflow.kind == InflowKind::Beam)
    require(inflow.beam_half_angle > 0.0 && inflow.beam_half_angle < kPi,
            "beam half angle must lie in (0, pi)");
  require(noise.std >= 0.0 && std::isfinite(noise.std), "noise std must be finite and >= 0");
}

double manufactured_solution(const Vec2& x) { return std::sin(kPi * x[0]) * std::sin(kPi * x[1]); }

Vec2 manufactured_gradient(const Vec2& x) {
  return kPi * Vec2(std::cos(kPi * x[0]) * std::sin(kPi * x[1]),
                    std::sin(kPi * x[0]) * std::cos(kPi * x[1]));
}

double source_value(const ProblemSpec& problem, const PhasePoint& point) {
  const SourceSpec& s = problem.source;
  switch (s.kind) {
    case SourceKind::Zero: return 0.0;
    case SourceKind::Constant: return s.value;
    case SourceKind::Ball: return (point.x - s.center).norm() <= s.radius ? s.value : 0.0;
    case SourceKind::Manufactured:
      // u* does not depend on the angle, so S u* = 0.
      return transport_apply(manufactured_solution(point.x),
                             point.omega.dot(manufactured_gradient(point.x)),
                             problem.sigma_a(point.x));
  }
  return 0.0;
}

double inflow_value(const ProblemSpec& problem, const BoundaryPoint& point) {
  const InflowSpec& g = problem.inflow;
  switch (g.kind) {
    case InflowKind::Constant: return g.value;
    case InflowKind::LeftEdge: return point.edge == Edge::Left ? g.value : 0.0;
    case InflowKind::Beam: {
      if (point.edge != Edge::Left) return 0.0;
      const double a = std::atan2(point.point.omega[1], point.point.omega[0]);
      return std::abs(a) <= g.beam_half_angle ? g.value : 0.0;
    }
    case InflowKind::Manufactured: return manufactured_solution(point.point.x);
  }
  return 0.0;
}

std::vector<double> inflow_values(const ProblemSpec& problem, std::span<const BoundaryNode> nodes) {
  std::vector<double> g(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    g[i] = inflow_value(problem, nodes[i].point);
    const NoiseSpec& noise = problem.noise;
    if (noise.std > 0.0 && (!noise.edge || *noise.edge == nodes[i].point.edge)) {
      std::mt19937_64 rng(derive_seed(noise.seed, i));
      std::normal_distribution<double> normal(0.0, noise.std);
      g[i] += normal(rng);
    }
  }
  return g;
}

double transport_apply(double u_val, double du_omega, double sigma_a_at_x) {
  return du_omega + sigma_a_at_x * u_val;
}

Eigen::VectorXd scattering_apply(const Eigen::VectorXd& u_slice, const DiscreteKernel& kernel,
                                 double sigma_t) {
  require(static_cast<std::size_t>(u_slice.size()) == kernel.size(),
          "angular slice has " + std::to_string(u_slice.size()) + " values, kernel expects " +
              std::to_string(kernel.size()));
  return sigma_t * (u_slice - kernel.mixing() * u_slice);
}

double legendre_eigenvalue(int n, const ScatteringKernel& kernel, double sigma_t) {
  require(n >= 0, "legendre_eigenvalue needs n >= 0");
  kernel.validate();
  const auto un = static_cast<unsigned>(n);
  const double z = integrate_pm1([&](double y) { return kernel.shape(y); });
  const double moment =
      integrate_pm1([&](double y) { return kernel.shape(y) * std::legendre(un, y); }) / z;
  return sigma_t * (1.0 - moment);
}

double pde_residual(const MlpParams& params, const PhasePoint& point, const DiscreteKernel& kernel,
                    const ProblemSpec& problem) {
  const auto [u, du] = eval_with_spatial_directional(params, point, point.omega);
  double scatter = 0.0;
  if (problem.sigma_t != 0.0) {
    const AngularRule& rule = kernel.rule();
    std::vector<PhasePoint> slice;
    slice.reserve(rule.size());
    for (std::size_t j = 0; j < rule.size(); ++j) slice.push_back(PhasePoint::at(point.x, rule.angle[j]));
    const Eigen::RowVectorXd us = eval_batch(params, slice);
    scatter = kernel.row(point.omega).dot(us);
  }
  return transport_apply(u, du, problem.sigma_a(point.x)) + problem.sigma_t * (u - scatter) -
         source_value(problem, point);
}

}  // namespace deepuzawa
