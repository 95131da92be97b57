#pragma once

// Post-processing of trained networks and every file the solver writes:
// metrics streams, field grids and run manifests.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deepuzawa/kinetic_ops.hpp"
#include "deepuzawa/network.hpp"
#include "deepuzawa/phase_space.hpp"
#include "deepuzawa/uzawa.hpp"

namespace deepuzawa {

inline constexpr const char* kVersion = "0.1.0";

struct GridSpec {
  std::size_t nx = 101;
  std::size_t ny = 101;
  Domain domain;
};

enum class GridQuantity { ScalarFlux, AngularSlice };

/// Node (i, j) sits at x1 = lower + i h1, x2 = lower + j h2; values stored with i fastest.
struct FieldGrid {
  std::size_t nx = 0;
  std::size_t ny = 0;
  Vec2 lower = Vec2(0.0, 0.0);
  Vec2 upper = Vec2(1.0, 1.0);
  GridQuantity quantity = GridQuantity::ScalarFlux;
  double theta = 0.0;
  std::vector<double> values;

  double x1(std::size_t i) const;
  double x2(std::size_t j) const;
  double at(std::size_t i, std::size_t j) const { return values[i + nx * j]; }
  /// Mean over grid nodes inside the closed box [a1, b1] x [a2, b2].
  double box_mean(double a1, double b1, double a2, double b2) const;
};

/// phi(x) = sum_s w_s u(x, s).
FieldGrid scalar_flux(const MlpParams& params, const GridSpec& grid, const AngularRule& rule);
/// u(x, (cos theta, sin theta)) on the grid.
FieldGrid angular_slice(const MlpParams& params, const GridSpec& grid, double theta);

struct BatchValues {
  Eigen::RowVectorXd u;
  Eigen::RowVectorXd du;  // omega . grad_x u
};

BatchValues eval_with_directional(const MlpParams& params, std::span<const PhasePoint> points);

/// Exact field used in reference mode; `directional` is omega . grad_x.
struct ReferenceField {
  std::function<double(const PhasePoint&)> value;
  std::function<double(const PhasePoint&)> directional;
};

ReferenceField manufactured_reference();

struct NormReport {
  double l2_interior = 0.0;
  double pde_residual_norm = 0.0;
  double boundary_residual_norm = 0.0;
  double v_norm = 0.0;
  double triple_norm = 0.0;  // NaN unless requested
};

/// Norms on the given quadrature. With a reference the L2 and triple norms
/// are those of u - reference; the residual norms always use f and g of the problem.
NormReport discrete_norms(const MlpParams& params, const QuadratureSet& quad, const ProblemSpec& problem,
                          const std::optional<ReferenceField>& reference = std::nullopt,
                          bool with_triple = false);

/// ||u - ref|| / ||ref|| over the interior quadrature.
double relative_l2_error(const MlpParams& params, const QuadratureSet& quad, const ReferenceField& reference);

/// Boundary trace rows: x1,x2,omega_angle,u,g.
void emit_boundary_trace(const std::filesystem::path& path, const MlpParams& params,
                         std::span<const BoundaryNode> nodes, const Eigen::VectorXd& g);

inline constexpr const char* kMetricsHeader =
    "outer,inner,loss_total,loss_pde,loss_boundary,loss_multiplier,boundary_residual,lambda_norm";

std::string format_metrics_row(const MetricsRow& row);
std::string metrics_csv(std::span<const MetricsRow> rows);
void emit_metrics(const std::filesystem::path& path, std::span<const MetricsRow> rows);
/// Rows in file order; loss_total is recomputed, boundary_mismatch_sq = boundary_residual^2.
std::vector<MetricsRow> parse_metrics(const std::string& csv);

void emit_grid(const std::filesystem::path& path, const FieldGrid& grid);
/// Parses x1,x2,value rows written by emit_grid.
FieldGrid parse_grid(const std::string& csv);

struct RunManifest {
  std::map<std::string, std::string> config;
  std::string version = kVersion;
  std::string status = "ok";
  double wall_clock_seconds = 0.0;
  std::map<std::string, double> final_metrics;

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

std::string manifest_json(const RunManifest& manifest);
RunManifest parse_manifest(const std::string& json);
void emit_manifest(const std::filesystem::path& path, const RunManifest& manifest);

}  // namespace deepuzawa
