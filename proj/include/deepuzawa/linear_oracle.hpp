#pragma once

// Uzawa iteration on a finite linear trial space with exact inner solves.
// All inner products come from one frozen high-order tensor quadrature, so
// the discrete identities of the convergence analysis hold to roundoff.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deepuzawa/kinetic_ops.hpp"
#include "deepuzawa/phase_space.hpp"

namespace deepuzawa {

struct OracleSetup {
  double sigma_a = 1.0;
  double sigma_t = 0.0;
  ScatteringKernel kernel;
  std::size_t n_spatial = 32;   // Gauss points per axis
  std::size_t n_angles = 64;    // trapezoid directions
  std::size_t n_along = 32;     // boundary Gauss points per edge
  std::size_t n_half = 32;      // boundary Gauss points per half circle
  std::uint64_t data_seed = 11;  // draws the coefficient vectors of f and g
  bool consistent = false;       // f = (T+S) of the g-combination, so lambda* = 0
};

/// {1, x1, x2, x1 x2, x1^2, x2^2} x {1, cos a, sin a}.
inline constexpr std::size_t kOracleBasisSize = 18;

double oracle_basis(std::size_t i, const PhasePoint& p);
/// omega . grad_x of basis function i.
double oracle_basis_directional(std::size_t i, const PhasePoint& p);

class LinearTrialSpace {
 public:
  static LinearTrialSpace build(const OracleSetup& setup);

  std::size_t size() const { return static_cast<std::size_t>(a_.rows()); }
  const OracleSetup& setup() const { return setup_; }
  const Eigen::MatrixXd& A() const { return a_; }
  const Eigen::MatrixXd& B() const { return b_; }
  const Eigen::VectorXd& rhs_f() const { return rf_; }
  const Eigen::VectorXd& rhs_g() const { return bg_; }
  const Eigen::VectorXd& g() const { return g_; }
  const Eigen::VectorXd& boundary_weights() const { return wb_; }
  const Eigen::MatrixXd& trace_matrix() const { return phib_; }
  /// Coefficients whose trace defines g.
  const Eigen::VectorXd& g_coefficients() const { return cg_; }

  Eigen::VectorXd trace(const Eigen::VectorXd& c) const { return phib_ * c; }
  double boundary_inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;
  double boundary_norm_sq(const Eigen::VectorXd& v) const { return boundary_inner(v, v); }
  /// ||(T+S) u_c||^2 with u_c = sum c_i phi_i.
  double operator_norm_sq(const Eigen::VectorXd& c) const { return c.dot(a_ * c); }
  /// ||(T+S) u_c - f||^2.
  double residual_norm_sq(const Eigen::VectorXd& c) const;
  /// ||u||^2 + ||omega.grad u||^2 + ||u||^2_{Gamma+} + ||u||^2_{Gamma-}, parts returned separately.
  struct TripleParts {
    double l2 = 0.0;
    double streaming = 0.0;
    double outflow = 0.0;
    double inflow = 0.0;
    double total() const { return l2 + streaming + outflow + inflow; }
  };
  TripleParts triple_norm_sq(const Eigen::VectorXd& c) const;

  /// Discrete L(c, lambda) and its gradient in c.
  double lagrangian(const Eigen::VectorXd& c, const Eigen::VectorXd& lambda, double gamma) const;
  Eigen::VectorXd lagrangian_gradient(const Eigen::VectorXd& c, const Eigen::VectorXd& lambda,
                                      double gamma) const;

 private:
  OracleSetup setup_;
  Eigen::MatrixXd a_, b_, phib_;
  Eigen::VectorXd rf_, bg_, g_, wb_, cg_;
  double ff_ = 0.0;  // ||f||^2
  Eigen::MatrixXd mass_, stream_, outflow_;
};

/// Unique minimizer of L(., lambda) over the span: (A + gamma B) c = r_f + gamma b_g + Phi_b^T W_b lambda.
Eigen::VectorXd exact_inner_solve(const LinearTrialSpace& space, const Eigen::VectorXd& lambda,
                                  double gamma);

struct SaddlePoint {
  Eigen::VectorXd c;
  Eigen::VectorXd lambda;
  double boundary_mismatch = 0.0;  // ||u* - g||_{Gamma-}
};

/// Solves the KKT system directly. lambda* is the range component plus the
/// part of lambda0 orthogonal to the trace space (which no iteration can change).
SaddlePoint fixed_point_solve(const LinearTrialSpace& space, double gamma,
                              const Eigen::VectorXd& lambda0);

struct OracleRun {
  std::vector<Eigen::VectorXd> c;       // c^0 .. c^n
  std::vector<Eigen::VectorXd> lambda;  // lambda^0 .. lambda^n, lambda^k paired with c^k
  std::vector<double> dist_lambda;      // ||lambda^k - lambda*||, k = 0..n
  std::vector<double> residual_pde;     // ||(T+S) u^k - f||, k = 0..n
  std::vector<double> residual_boundary;
  SaddlePoint saddle;
};

OracleRun run_uzawa_oracle(const LinearTrialSpace& space, double gamma, double rho, int n_iter,
                           const Eigen::VectorXd& lambda0);

/// CSV with columns k,dist_lambda,residual_pde,residual_boundary.
void write_oracle_csv(const std::filesystem::path& path, const OracleRun& run);

/// Largest C over a grid of alpha in (0, 1); C <= 0 when the regime is violated.
double strong_convergence_constant(double sigma_a, double sigma_t, double rho, double gamma);

struct OracleCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// The identity suite run by the `verify` command.
std::vector<OracleCheck> verify_oracle_suite();

}  // namespace deepuzawa
