#pragma once

// Transport and scattering operators, coefficient fields, source and inflow data.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "deepuzawa/network.hpp"
#include "deepuzawa/phase_space.hpp"

namespace deepuzawa {

enum class CoefficientKind { Constant, Ball, Split };

std::string_view to_string(CoefficientKind k);
CoefficientKind parse_coefficient_kind(std::string_view tag);

/// sigma_A(x). Piecewise kinds are evaluated exactly, no smoothing.
struct CoefficientField {
  CoefficientKind kind = CoefficientKind::Constant;
  double value = 1.0;
  // Ball: `inside` for |x - center| <= radius, `outside` elsewhere.
  Vec2 center = Vec2(0.5, 0.5);
  double radius = 0.15;
  double inside = 50.0;
  double outside = 1.0;
  // Split: `left` for x1 < threshold, `right` otherwise.
  double threshold = 0.5;
  double left = 0.1;
  double right = 5.0;

  double operator()(const Vec2& x) const;
  /// Largest value the field takes anywhere.
  double max_value() const;
  /// Smallest value the field takes anywhere.
  double min_value() const;
  void validate() const;
};

enum class KernelKind { Isotropic, ForwardPeaked };

std::string_view to_string(KernelKind k);
KernelKind parse_kernel_kind(std::string_view tag);

struct ScatteringKernel {
  KernelKind kind = KernelKind::Isotropic;
  double epsilon = 0.1;  // forward-peaked width

  /// Unnormalized shape; exp((y - 1)/eps) for the peaked kernel so it never overflows.
  double shape(double y) const;
  /// Normalized so that the integral over [-1, 1] is 1.
  double continuum(double y) const;
  void validate() const;
};

/// Kernel renormalized against one angular rule: row i holds
/// (1/2pi) w_j pi_hat(s_i . s_j), and every row sums to 1.
class DiscreteKernel {
 public:
  DiscreteKernel(const ScatteringKernel& kernel, const AngularRule& rule);

  std::size_t size() const { return static_cast<std::size_t>(mixing_.rows()); }
  const Eigen::MatrixXd& mixing() const { return mixing_; }
  const AngularRule& rule() const { return rule_; }
  const ScatteringKernel& kernel() const { return kernel_; }
  /// Normalized row for an arbitrary direction against the same rule.
  Eigen::RowVectorXd row(const Vec2& omega) const;

 private:
  ScatteringKernel kernel_;
  AngularRule rule_;
  Eigen::MatrixXd mixing_;
};

enum class SourceKind { Zero, Constant, Ball, Manufactured };

std::string_view to_string(SourceKind k);
SourceKind parse_source_kind(std::string_view tag);

struct SourceSpec {
  SourceKind kind = SourceKind::Zero;
  double value = 1.0;
  Vec2 center = Vec2(0.5, 0.5);
  double radius = 1.0;
};

enum class InflowKind { Constant, LeftEdge, Beam, Manufactured };

std::string_view to_string(InflowKind k);
InflowKind parse_inflow_kind(std::string_view tag);

struct InflowSpec {
  InflowKind kind = InflowKind::Constant;
  double value = 0.0;
  double beam_half_angle = 0.19634954084936207;  // pi/16
};

/// Gaussian perturbation of g, drawn once per boundary node.
struct NoiseSpec {
  double std = 0.0;
  std::uint64_t seed = 0;
  std::optional<Edge> edge;  // restrict to one edge; all edges when empty
};

struct ProblemSpec {
  Domain domain;
  CoefficientField sigma_a;
  double sigma_t = 0.0;
  ScatteringKernel kernel;
  SourceSpec source;
  InflowSpec inflow;
  NoiseSpec noise;

  void validate() const;
};

/// u*(x) = sin(pi x1) sin(pi x2) and its gradient.
double manufactured_solution(const Vec2& x);
Vec2 manufactured_gradient(const Vec2& x);

double source_value(const ProblemSpec& problem, const PhasePoint& point);
/// Noise-free inflow datum.
double inflow_value(const ProblemSpec& problem, const BoundaryPoint& point);
/// g at each node with the frozen noise realization applied (node i uses stream i).
std::vector<double> inflow_values(const ProblemSpec& problem, std::span<const BoundaryNode> nodes);

double transport_apply(double u_val, double du_omega, double sigma_a_at_x);

/// (S u)(s_i) = sigma_t (u_i - sum_j K_ij u_j).
Eigen::VectorXd scattering_apply(const Eigen::VectorXd& u_slice, const DiscreteKernel& kernel,
                                 double sigma_t);

/// mu_n = sigma_t (1 - int_{-1}^{1} pi(y) P_n(y) dy) with the continuum-normalized kernel.
double legendre_eigenvalue(int n, const ScatteringKernel& kernel, double sigma_t);

/// s.grad u + (sigma_A + sigma_T) u - sigma_T sum_j K(s, s_j) u(y, s_j) - f(y, s).
double pde_residual(const MlpParams& params, const PhasePoint& point, const DiscreteKernel& kernel,
                    const ProblemSpec& problem);

}  // namespace deepuzawa
