#pragma once

// Deep Uzawa iteration: outer multiplier ascent on the inflow boundary around
// an inner stochastic minimization of the discrete Lagrangian.

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "deepuzawa/lagrangian.hpp"
#include "deepuzawa/network.hpp"
#include "deepuzawa/optimizer.hpp"

namespace deepuzawa {

struct UzawaConfig {
  double rho = 1.0;
  int n_outer = 20;
  int n_inner = 500;
  OptimizerConfig optimizer;
  double lambda_init = 0.0;

  void validate() const;
};

/// One metrics line. Inner steps carry the mini-batch loss that produced the
/// update; rows with inner = -1 are full-set evaluations (outer = -1 is the
/// initial state, otherwise the state after the inner loop of that outer step).
struct MetricsRow {
  int outer = 0;
  int inner = 0;
  LossParts parts;
  double boundary_residual = 0.0;
  double lambda_norm = 0.0;
};

struct RunState {
  MlpParams params;
  MultiplierField multiplier;
  int outer = 0;
  std::vector<MetricsRow> history;
};

using MetricsCallback = std::function<void(const MetricsRow&)>;

/// Runs exactly config.n_inner optimizer steps on `state.params`. With
/// batch.resample each step draws its interior batch from (seed, outer, step).
std::vector<MetricsRow> inner_minimize(RunState& state, Optimizer& optimizer,
                                       const QuadratureSet& quad, const ProblemSpec& problem,
                                       const LagrangianConfig& lagrangian, const UzawaConfig& config,
                                       std::uint64_t seed, const MetricsCallback& on_row = {});

/// lambda(b) <- lambda(b) - rho (u(b) - g(b)) at every registered node.
void multiplier_update(MultiplierField& multiplier, std::span<const BoundaryNode> nodes,
                       const MlpParams& params, double rho);
/// Same update with the boundary values already evaluated.
void multiplier_update(MultiplierField& multiplier, const Eigen::VectorXd& u_boundary, double rho);

Eigen::VectorXd boundary_values(const MlpParams& params, std::span<const BoundaryNode> nodes);

RunState run(const ProblemSpec& problem, const QuadratureSet& quad, const UzawaConfig& config,
             const LagrangianConfig& lagrangian, MlpParams initial, std::uint64_t seed,
             const MetricsCallback& on_row = {});

struct StrongRegime {
  bool valid = false;
  double rho_max = std::numeric_limits<double>::quiet_NaN();  // NaN unless sigma_t < sigma_a / 4
};

/// sigma_t < sigma_a/4 and 0 < rho < 2 gamma - sigma_a - sqrt(sigma_a^2 - 16 sigma_t^2).
StrongRegime check_strong_regime(double sigma_a, double sigma_t, double rho, double gamma);

}  // namespace deepuzawa
