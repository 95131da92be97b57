#pragma once

// Discrete Lagrangian
//   L_h = 1/2 sum w r^2 + gamma/2 sum w_b (u - g)^2 - sum w_b lambda (u - g)
// and its exact parameter gradient.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "deepuzawa/kinetic_ops.hpp"
#include "deepuzawa/network.hpp"
#include "deepuzawa/phase_space.hpp"

namespace deepuzawa {

struct BatchSpec {
  std::size_t interior = 0;  // clusters per step; 0 keeps the full set
  bool resample = false;
};

struct LagrangianConfig {
  double gamma = 1.0;
  bool include_source = true;
  BatchSpec batch;

  void validate() const;
};

/// Order-sensitive hash of a boundary node set (positions, angles, weights).
std::uint64_t registry_hash(std::span<const BoundaryNode> nodes);

/// lambda on a frozen set of inflow nodes, together with the frozen inflow data g.
class MultiplierField {
 public:
  MultiplierField() = default;
  MultiplierField(std::span<const BoundaryNode> nodes, Eigen::VectorXd g, double initial = 0.0);

  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  std::uint64_t registry() const { return registry_; }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& g() const { return g_; }
  const Eigen::VectorXd& weights() const { return weights_; }

  /// Discrete L2(Gamma^-) norm of lambda.
  double norm() const;
  /// Throws ContractViolation unless `nodes` is the frozen registry.
  void check(std::span<const BoundaryNode> nodes) const;

 private:
  std::uint64_t registry_ = 0;
  Eigen::VectorXd values_;
  Eigen::VectorXd g_;
  Eigen::VectorXd weights_;
};

MultiplierField make_multiplier(const ProblemSpec& problem, std::span<const BoundaryNode> nodes,
                                double initial = 0.0);

struct LossParts {
  double pde = 0.0;
  double boundary_penalty = 0.0;
  double multiplier_term = 0.0;
  double boundary_mismatch_sq = 0.0;  // sum w_b (u - g)^2

  double value() const { return pde + boundary_penalty + multiplier_term; }
};

struct LossAndGradient {
  LossParts parts;
  Eigen::VectorXd gradient;
};

/// Chunked evaluation; chunks run under OpenMP and are reduced in a fixed
/// order, so results do not depend on the thread count.
LossAndGradient evaluate(const MlpParams& params, const MultiplierField& multiplier,
                         const QuadratureSet& quad, const ProblemSpec& problem,
                         const LagrangianConfig& config);

LossParts assemble(const MlpParams& params, const MultiplierField& multiplier,
                   const QuadratureSet& quad, const ProblemSpec& problem,
                   const LagrangianConfig& config);

Eigen::VectorXd gradient(const MlpParams& params, const MultiplierField& multiplier,
                         const QuadratureSet& quad, const ProblemSpec& problem,
                         const LagrangianConfig& config);

/// Single-tape, single-thread evaluation used as the reference for the chunked path.
LossAndGradient evaluate_serial(const MlpParams& params, const MultiplierField& multiplier,
                                const QuadratureSet& quad, const ProblemSpec& problem,
                                const LagrangianConfig& config);

/// Point-by-point assembly through pde_residual and eval, no batching.
LossParts assemble_reference(const MlpParams& params, const MultiplierField& multiplier,
                             const QuadratureSet& quad, const ProblemSpec& problem,
                             const LagrangianConfig& config);

/// Residual r at every interior node (source included per config).
Eigen::VectorXd interior_residuals(const MlpParams& params, const QuadratureSet& quad,
                                   const ProblemSpec& problem, bool include_source = true);

/// Interior clusters drawn without replacement, weights rescaled to keep the
/// total measure; boundary nodes untouched.
QuadratureSet subsample(const QuadratureSet& quad, const BatchSpec& batch, std::uint64_t step_seed);

}  // namespace deepuzawa
