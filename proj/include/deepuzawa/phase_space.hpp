#pragma once

// Geometry of the phase space D x S^1 (unit square by default) and the
// quadrature rules for interior, angular and inflow/outflow boundary integrals.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "deepuzawa/errors.hpp"

namespace deepuzawa {

using Vec2 = Eigen::Vector2d;

/// Directions closer than this to tangential (|n.omega|) belong to neither inflow nor outflow.
inline constexpr double kTangentialBand = 1e-12;

struct PhasePoint {
  Vec2 x = Vec2::Zero();
  double angle = 0.0;
  Vec2 omega = Vec2(1.0, 0.0);

  static PhasePoint at(const Vec2& x, double angle) {
    return PhasePoint{x, angle, Vec2(std::cos(angle), std::sin(angle))};
  }
};

enum class Edge : int { Bottom = 0, Right = 1, Top = 2, Left = 3 };

struct BoundaryPoint {
  PhasePoint point;
  Vec2 normal = Vec2::Zero();
  Edge edge = Edge::Bottom;
  double weight_factor = 0.0;  // |n . omega|
};

/// Axis-aligned rectangle; the unit square unless stated otherwise.
class Domain {
 public:
  Domain() = default;
  Domain(Vec2 lower, Vec2 upper);

  const Vec2& lower() const { return lower_; }
  const Vec2& upper() const { return upper_; }
  double area() const;
  double perimeter() const;
  double edge_length(Edge e) const;
  Vec2 outward_normal(Edge e) const;
  bool contains(const Vec2& x, double tol = 1e-12) const;
  bool on_boundary(const Vec2& x, double tol = 1e-12) const;
  /// Edge holding x; corners go to the edge of lower index.
  Edge edge_of(const Vec2& x, double tol = 1e-12) const;
  /// Point at arc-length t along bottom, right, top, left (counterclockwise from lower-left).
  Vec2 point_on_edge(Edge e, double s) const;

 private:
  Vec2 lower_ = Vec2(0.0, 0.0);
  Vec2 upper_ = Vec2(1.0, 1.0);
};

enum class PointClass { Interior, Inflow, Outflow, Tangential };

PointClass classify(const Domain& domain, const Vec2& x, const Vec2& omega);
std::string_view to_string(PointClass c);

enum class Scheme { MonteCarlo, Hybrid, TensorGauss };

std::string_view to_string(Scheme s);
/// Throws ContractViolation for unknown tags.
Scheme parse_scheme(std::string_view tag);

struct QuadratureRule1d {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre nodes and weights on [a, b].
QuadratureRule1d gauss_legendre(std::size_t n, double a = -1.0, double b = 1.0);

struct AngularRule {
  std::vector<double> angle;
  std::vector<double> weight;
  std::vector<Vec2> omega;

  std::size_t size() const { return angle.size(); }
};

/// Equispaced trapezoid rule on S^1: angles 2*pi*j/n, weights 2*pi/n.
AngularRule trapezoid_circle(std::size_t n);

struct InteriorNode {
  PhasePoint point;
  double weight = 0.0;
};

/// Interior nodes grouped by spatial point. Cluster c owns nodes
/// [offsets[c], offsets[c+1]). When `on_rule` is set every cluster carries
/// exactly the angular rule directions in rule order.
struct InteriorSet {
  std::vector<InteriorNode> nodes;
  std::vector<std::size_t> offsets{0};
  bool on_rule = false;

  std::size_t cluster_count() const { return offsets.size() - 1; }
};

struct BoundaryNode {
  BoundaryPoint point;
  double weight = 0.0;
};

struct InteriorSpec {
  Scheme scheme = Scheme::TensorGauss;
  std::size_t n_points = 0;  // Monte Carlo samples, or spatial points for Hybrid
  std::size_t nx = 0;        // TensorGauss
  std::size_t ny = 0;
};

struct BoundarySpec {
  Scheme scheme = Scheme::TensorGauss;
  std::size_t n_points = 0;  // Monte Carlo
  std::size_t n_along = 0;   // TensorGauss: nodes along each edge
  std::size_t n_angles = 0;  // TensorGauss: nodes on each inflow half-circle
};

struct QuadratureSpec {
  InteriorSpec interior;
  BoundarySpec boundary;
  std::size_t n_angles = 16;
  std::uint64_t seed = 0;
  bool with_outflow = false;
};

struct QuadratureSet {
  QuadratureSpec spec;
  InteriorSet interior;
  AngularRule angular;
  std::vector<BoundaryNode> boundary;
  std::vector<BoundaryNode> outflow;
};

/// SplitMix64 mix of (seed, stream); gives independent per-purpose / per-worker streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

InteriorSet sample_interior(const Domain& domain, const InteriorSpec& spec, const AngularRule& rule,
                            std::uint64_t seed);
std::vector<BoundaryNode> sample_inflow_boundary(const Domain& domain, const BoundarySpec& spec,
                                                 std::uint64_t seed);
/// Mirror of the inflow sampler with the normal sign flipped (n . omega > 0).
std::vector<BoundaryNode> sample_outflow_boundary(const Domain& domain, const BoundarySpec& spec,
                                                  std::uint64_t seed);

QuadratureSet build_quadrature(const Domain& domain, const QuadratureSpec& spec);

/// Exact measure of Gamma^- (= Gamma^+): 2 * perimeter.
double inflow_measure(const Domain& domain);

double integrate_interior(const InteriorSet& set, const std::function<double(const PhasePoint&)>& f);
double integrate_boundary(std::span<const BoundaryNode> nodes,
                          const std::function<double(const BoundaryPoint&)>& f);

/// CSV dump with columns kind,x1,x2,omega_angle,weight.
void write_quadrature_csv(const std::filesystem::path& path, const QuadratureSet& set);

}  // namespace deepuzawa
