#include "deepuzawa/uzawa.hpp"

#include <cmath>
#include <sstream>

namespace deepuzawa {

namespace {

MetricsRow full_row(int outer, const RunState& state, const QuadratureSet& quad,
                    const ProblemSpec& problem, const LagrangianConfig& lagrangian) {
  MetricsRow row;
  row.outer = outer;
  row.inner = -1;
  row.parts = assemble(state.params, state.multiplier, quad, problem, lagrangian);
  row.boundary_residual = std::sqrt(row.parts.boundary_mismatch_sq);
  row.lambda_norm = state.multiplier.norm();
  return row;
}

void check_finite(const LossAndGradient& lg, int outer, int step) {
  const auto fail = [&](const char* part) {
    std::ostringstream os;
    os << "non-finite " << part << " at outer " << outer << ", inner step " << step;
    throw NumericalError(os.str());
  };
  if (!std::isfinite(lg.parts.pde)) fail("pde loss");
  if (!std::isfinite(lg.parts.boundary_penalty)) fail("boundary penalty");
  if (!std::isfinite(lg.parts.multiplier_term)) fail("multiplier term");
  if (!lg.gradient.allFinite()) fail("gradient");
}

}  // namespace

void UzawaConfig::validate() const {
  require(rho > 0.0 && std::isfinite(rho), "uzawa.rho must be > 0 (multiplier step)");
  require(n_outer >= 1, "uzawa.n_outer must be >= 1");
  require(n_inner >= 1, "uzawa.n_inner must be >= 1");
  require(std::isfinite(lambda_init), "uzawa.lambda_init must be finite");
  optimizer.validate();
}

std::vector<MetricsRow> inner_minimize(RunState& state, Optimizer& optimizer,
                                       const QuadratureSet& quad, const ProblemSpec& problem,
                                       const LagrangianConfig& lagrangian, const UzawaConfig& config,
                                       std::uint64_t seed, const MetricsCallback& on_row) {
  config.validate();
  std::vector<MetricsRow> rows;
  rows.reserve(static_cast<std::size_t>(config.n_inner));
  Eigen::VectorXd theta = state.params.flatten();
  const bool batched = lagrangian.batch.resample && lagrangian.batch.interior > 0;
  for (int m = 0; m < config.n_inner; ++m) {
    LossAndGradient lg;
    if (batched) {
      const std::uint64_t step = static_cast<std::uint64_t>(state.outer) *
                                     static_cast<std::uint64_t>(config.n_inner) +
                                 static_cast<std::uint64_t>(m);
      lg = evaluate(state.params, state.multiplier,
                    subsample(quad, lagrangian.batch, derive_seed(seed, step)), problem, lagrangian);
    } else {
      lg = evaluate(state.params, state.multiplier, quad, problem, lagrangian);
    }
    check_finite(lg, state.outer, m);
    optimizer.step(theta, lg.gradient);
    state.params.assign(theta);

    MetricsRow row;
    row.outer = state.outer;
    row.inner = m;
    row.parts = lg.parts;
    row.boundary_residual = std::sqrt(lg.parts.boundary_mismatch_sq);
    row.lambda_norm = state.multiplier.norm();
    if (on_row) on_row(row);
    rows.push_back(row);
  }
  return rows;
}

Eigen::VectorXd boundary_values(const MlpParams& params, std::span<const BoundaryNode> nodes) {
  std::vector<PhasePoint> pts;
  pts.reserve(nodes.size());
  for (const BoundaryNode& n : nodes) pts.push_back(n.point.point);
  return eval_batch(params, pts).transpose();
}

void multiplier_update(MultiplierField& multiplier, const Eigen::VectorXd& u_boundary, double rho) {
  require(rho > 0.0, "multiplier update needs rho > 0");
  require(u_boundary.size() == multiplier.values().size(),
          "multiplier update: boundary values do not match the registry");
  multiplier.values() -= rho * (u_boundary - multiplier.g());
}

void multiplier_update(MultiplierField& multiplier, std::span<const BoundaryNode> nodes,
                       const MlpParams& params, double rho) {
  multiplier.check(nodes);
  multiplier_update(multiplier, boundary_values(params, nodes), rho);
}

RunState run(const ProblemSpec& problem, const QuadratureSet& quad, const UzawaConfig& config,
             const LagrangianConfig& lagrangian, MlpParams initial, std::uint64_t seed,
             const MetricsCallback& on_row) {
  config.validate();
  lagrangian.validate();
  problem.validate();
  require(!quad.boundary.empty(), "uzawa run needs inflow boundary nodes");

  RunState state;
  state.params = std::move(initial);
  state.multiplier = make_multiplier(problem, quad.boundary, config.lambda_init);
  const auto emit = [&](const MetricsRow& row) {
    state.history.push_back(row);
    if (on_row) on_row(row);
  };
  emit(full_row(-1, state, quad, problem, lagrangian));

  const std::unique_ptr<Optimizer> optimizer = make_optimizer(config.optimizer);
  for (int k = 0; k < config.n_outer; ++k) {
    state.outer = k;
    inner_minimize(state, *optimizer, quad, problem, lagrangian, config, seed, emit);
    emit(full_row(k, state, quad, problem, lagrangian));
    multiplier_update(state.multiplier, quad.boundary, state.params, config.rho);
  }
  return state;
}

StrongRegime check_strong_regime(double sigma_a, double sigma_t, double rho, double gamma) {
  require(sigma_a >= 0.0 && sigma_t >= 0.0 && rho >= 0.0 && gamma >= 0.0,
          "check_strong_regime expects nonnegative inputs");
  StrongRegime out;
  if (!(sigma_t < 0.25 * sigma_a)) return out;
  out.rho_max = 2.0 * gamma - sigma_a - std::sqrt(sigma_a * sigma_a - 16.0 * sigma_t * sigma_t);
  out.valid = rho > 0.0 && rho < out.rho_max;
  return out;
}

}  // namespace deepuzawa
