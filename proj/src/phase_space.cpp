#include "deepuzawa/phase_space.hpp"

#include <algorithm>
#include <numbers>
#include <random>
#include <sstream>

#include "deepuzawa/file_io.hpp"

namespace deepuzawa {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::array<Edge, 4> kEdges = {Edge::Bottom, Edge::Right, Edge::Top, Edge::Left};

double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a;
}

// Angle of the inward normal of each edge.
double inward_angle(Edge e) {
  switch (e) {
    case Edge::Bottom: return 0.5 * kPi;
    case Edge::Right: return kPi;
    case Edge::Top: return 1.5 * kPi;
    case Edge::Left: return 0.0;
  }
  return 0.0;
}

BoundaryPoint make_boundary_point(const Domain& domain, Edge e, double s, double phi, bool inflow) {
  const double base = inflow ? inward_angle(e) : inward_angle(e) + kPi;
  BoundaryPoint bp;
  bp.point = PhasePoint::at(domain.point_on_edge(e, s), wrap_angle(base + phi));
  bp.normal = domain.outward_normal(e);
  bp.edge = e;
  bp.weight_factor = std::abs(bp.normal.dot(bp.point.omega));
  return bp;
}

std::vector<BoundaryNode> sample_boundary(const Domain& domain, const BoundarySpec& spec,
                                          std::uint64_t seed, bool inflow) {
  std::vector<BoundaryNode> nodes;
  switch (spec.scheme) {
    case Scheme::TensorGauss: {
      require(spec.n_along > 0 && spec.n_angles > 0,
              "boundary tensor rule needs n_along > 0 and n_angles > 0");
      const QuadratureRule1d half_circle = gauss_legendre(spec.n_angles, -0.5 * kPi, 0.5 * kPi);
      for (Edge e : kEdges) {
        const QuadratureRule1d along = gauss_legendre(spec.n_along, 0.0, domain.edge_length(e));
        for (std::size_t i = 0; i < along.nodes.size(); ++i) {
          for (std::size_t j = 0; j < half_circle.nodes.size(); ++j) {
            BoundaryNode node;
            node.point = make_boundary_point(domain, e, along.nodes[i], half_circle.nodes[j], inflow);
            node.weight = along.weights[i] * half_circle.weights[j] * node.point.weight_factor;
            nodes.push_back(node);
          }
        }
      }
      break;
    }
    case Scheme::MonteCarlo: {
      require(spec.n_points > 0, "boundary Monte Carlo rule needs n_points > 0");
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double perimeter = domain.perimeter();
      const double weight = 2.0 * perimeter / static_cast<double>(spec.n_points);
      nodes.reserve(spec.n_points);
      while (nodes.size() < spec.n_points) {
        double t = unit(rng) * perimeter;
        // Inverse CDF of the |n.omega| = cos(phi) density on (-pi/2, pi/2).
        const double phi = std::asin(2.0 * unit(rng) - 1.0);
        if (std::cos(phi) <= kTangentialBand) continue;
        Edge edge = Edge::Left;
        for (Edge e : kEdges) {
          const double len = domain.edge_length(e);
          if (t < len) {
            edge = e;
            break;
          }
          t -= len;
        }
        if (t <= 0.0 || t >= domain.edge_length(edge)) continue;  // corners: measure zero, redraw
        BoundaryNode node;
        node.point = make_boundary_point(domain, edge, t, phi, inflow);
        node.weight = weight;
        nodes.push_back(node);
      }
      break;
    }
    case Scheme::Hybrid:
      throw ContractViolation("boundary sampling supports monte-carlo and tensor-gauss only");
  }
  return nodes;
}

}  // namespace

Domain::Domain(Vec2 lower, Vec2 upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
  require(upper_.x() > lower_.x() && upper_.y() > lower_.y(), "domain: empty rectangle");
}

double Domain::area() const { return (upper_ - lower_).prod(); }

double Domain::perimeter() const { return 2.0 * (upper_ - lower_).sum(); }

double Domain::edge_length(Edge e) const {
  const Vec2 ext = upper_ - lower_;
  return (e == Edge::Bottom || e == Edge::Top) ? ext.x() : ext.y();
}

Vec2 Domain::outward_normal(Edge e) const {
  switch (e) {
    case Edge::Bottom: return Vec2(0.0, -1.0);
    case Edge::Right: return Vec2(1.0, 0.0);
    case Edge::Top: return Vec2(0.0, 1.0);
    case Edge::Left: return Vec2(-1.0, 0.0);
  }
  return Vec2::Zero();
}

bool Domain::contains(const Vec2& x, double tol) const {
  return x.x() >= lower_.x() - tol && x.x() <= upper_.x() + tol && x.y() >= lower_.y() - tol &&
         x.y() <= upper_.y() + tol;
}

bool Domain::on_boundary(const Vec2& x, double tol) const {
  if (!contains(x, tol)) return false;
  return std::abs(x.x() - lower_.x()) <= tol || std::abs(x.x() - upper_.x()) <= tol ||
         std::abs(x.y() - lower_.y()) <= tol || std::abs(x.y() - upper_.y()) <= tol;
}

Edge Domain::edge_of(const Vec2& x, double tol) const {
  require(on_boundary(x, tol), "edge_of: point is not on the boundary");
  if (std::abs(x.y() - lower_.y()) <= tol) return Edge::Bottom;
  if (std::abs(x.x() - upper_.x()) <= tol) return Edge::Right;
  if (std::abs(x.y() - upper_.y()) <= tol) return Edge::Top;
  return Edge::Left;
}

Vec2 Domain::point_on_edge(Edge e, double s) const {
  switch (e) {
    case Edge::Bottom: return Vec2(lower_.x() + s, lower_.y());
    case Edge::Right: return Vec2(upper_.x(), lower_.y() + s);
    case Edge::Top: return Vec2(upper_.x() - s, upper_.y());
    case Edge::Left: return Vec2(lower_.x(), upper_.y() - s);
  }
  return lower_;
}

PointClass classify(const Domain& domain, const Vec2& x, const Vec2& omega) {
  require(domain.contains(x), "classify: point lies outside the closed domain");
  if (!domain.on_boundary(x)) return PointClass::Interior;
  const double n_dot_omega = domain.outward_normal(domain.edge_of(x)).dot(omega);
  if (n_dot_omega < -kTangentialBand) return PointClass::Inflow;
  if (n_dot_omega > kTangentialBand) return PointClass::Outflow;
  return PointClass::Tangential;
}

std::string_view to_string(PointClass c) {
  switch (c) {
    case PointClass::Interior: return "interior";
    case PointClass::Inflow: return "inflow";
    case PointClass::Outflow: return "outflow";
    case PointClass::Tangential: return "tangential";
  }
  return "unknown";
}

std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::MonteCarlo: return "monte-carlo";
    case Scheme::Hybrid: return "hybrid";
    case Scheme::TensorGauss: return "tensor-gauss";
  }
  return "unknown";
}

Scheme parse_scheme(std::string_view tag) {
  if (tag == "monte-carlo") return Scheme::MonteCarlo;
  if (tag == "hybrid") return Scheme::Hybrid;
  if (tag == "tensor-gauss") return Scheme::TensorGauss;
  throw ContractViolation("unknown quadrature scheme '" + std::string(tag) +
                          "' (expected monte-carlo, hybrid or tensor-gauss)");
}

QuadratureRule1d gauss_legendre(std::size_t n, double a, double b) {
  require(n > 0, "gauss_legendre: need at least one node");
  QuadratureRule1d rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const std::size_t m = (n + 1) / 2;
  for (std::size_t i = 0; i < m; ++i) {
    // Newton iteration on P_n from the Chebyshev-like initial guess.
    double z = std::cos(kPi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = z;
      for (std::size_t k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = p2;
      }
      dp = static_cast<double>(n) * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    rule.nodes[i] = mid - half * z;
    rule.nodes[n - 1 - i] = mid + half * z;
    rule.weights[i] = half * w;
    rule.weights[n - 1 - i] = half * w;
  }
  return rule;
}

AngularRule trapezoid_circle(std::size_t n) {
  require(n > 0, "trapezoid_circle: need at least one direction");
  AngularRule rule;
  rule.angle.resize(n);
  rule.weight.assign(n, 2.0 * kPi / static_cast<double>(n));
  rule.omega.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    rule.angle[j] = 2.0 * kPi * static_cast<double>(j) / static_cast<double>(n);
    rule.omega[j] = Vec2(std::cos(rule.angle[j]), std::sin(rule.angle[j]));
  }
  return rule;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

InteriorSet sample_interior(const Domain& domain, const InteriorSpec& spec, const AngularRule& rule,
                            std::uint64_t seed) {
  InteriorSet set;
  const Vec2 lo = domain.lower();
  const Vec2 ext = domain.upper() - domain.lower();
  switch (spec.scheme) {
    case Scheme::TensorGauss: {
      require(spec.nx > 0 && spec.ny > 0 && rule.size() > 0,
              "interior tensor rule needs nx, ny and angular nodes > 0");
      const QuadratureRule1d gx = gauss_legendre(spec.nx, lo.x(), lo.x() + ext.x());
      const QuadratureRule1d gy = gauss_legendre(spec.ny, lo.y(), lo.y() + ext.y());
      set.on_rule = true;
      set.nodes.reserve(spec.nx * spec.ny * rule.size());
      for (std::size_t i = 0; i < spec.nx; ++i) {
        for (std::size_t j = 0; j < spec.ny; ++j) {
          const Vec2 x(gx.nodes[i], gy.nodes[j]);
          const double wxy = gx.weights[i] * gy.weights[j];
          for (std::size_t a = 0; a < rule.size(); ++a) {
            set.nodes.push_back({PhasePoint{x, rule.angle[a], rule.omega[a]}, wxy * rule.weight[a]});
          }
          set.offsets.push_back(set.nodes.size());
        }
      }
      break;
    }
    case Scheme::Hybrid: {
      require(spec.n_points > 0 && rule.size() > 0, "hybrid interior rule needs n_points > 0");
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double wx = domain.area() / static_cast<double>(spec.n_points);
      set.on_rule = true;
      for (std::size_t p = 0; p < spec.n_points; ++p) {
        const double u1 = unit(rng);
        const double u2 = unit(rng);
        const Vec2 x(lo.x() + ext.x() * u1, lo.y() + ext.y() * u2);
        for (std::size_t a = 0; a < rule.size(); ++a) {
          set.nodes.push_back({PhasePoint{x, rule.angle[a], rule.omega[a]}, wx * rule.weight[a]});
        }
        set.offsets.push_back(set.nodes.size());
      }
      break;
    }
    case Scheme::MonteCarlo: {
      require(spec.n_points > 0, "interior Monte Carlo rule needs n_points > 0");
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double w = domain.area() * 2.0 * kPi / static_cast<double>(spec.n_points);
      set.nodes.reserve(spec.n_points);
      for (std::size_t p = 0; p < spec.n_points; ++p) {
        const double u1 = unit(rng);
        const double u2 = unit(rng);
        const double u3 = unit(rng);
        const Vec2 x(lo.x() + ext.x() * u1, lo.y() + ext.y() * u2);
        set.nodes.push_back({PhasePoint::at(x, 2.0 * kPi * u3), w});
        set.offsets.push_back(set.nodes.size());
      }
      break;
    }
  }
  return set;
}

std::vector<BoundaryNode> sample_inflow_boundary(const Domain& domain, const BoundarySpec& spec,
                                                 std::uint64_t seed) {
  return sample_boundary(domain, spec, seed, true);
}

std::vector<BoundaryNode> sample_outflow_boundary(const Domain& domain, const BoundarySpec& spec,
                                                  std::uint64_t seed) {
  return sample_boundary(domain, spec, seed, false);
}

QuadratureSet build_quadrature(const Domain& domain, const QuadratureSpec& spec) {
  QuadratureSet set;
  set.spec = spec;
  set.angular = trapezoid_circle(spec.n_angles);
  set.interior = sample_interior(domain, spec.interior, set.angular, derive_seed(spec.seed, 0));
  set.boundary = sample_inflow_boundary(domain, spec.boundary, derive_seed(spec.seed, 1));
  if (spec.with_outflow) {
    set.outflow = sample_outflow_boundary(domain, spec.boundary, derive_seed(spec.seed, 2));
  }
  return set;
}

double inflow_measure(const Domain& domain) { return 2.0 * domain.perimeter(); }

double integrate_interior(const InteriorSet& set, const std::function<double(const PhasePoint&)>& f) {
  double total = 0.0;
  for (const InteriorNode& node : set.nodes) total += node.weight * f(node.point);
  return total;
}

double integrate_boundary(std::span<const BoundaryNode> nodes,
                          const std::function<double(const BoundaryPoint&)>& f) {
  double total = 0.0;
  for (const BoundaryNode& node : nodes) total += node.weight * f(node.point);
  return total;
}

void write_quadrature_csv(const std::filesystem::path& path, const QuadratureSet& set) {
  std::ostringstream os;
  os << "kind,x1,x2,omega_angle,weight\n";
  auto row = [&](std::string_view kind, const PhasePoint& p, double w) {
    os << kind << ',' << format_double(p.x.x()) << ',' << format_double(p.x.y()) << ','
       << format_double(p.angle) << ',' << format_double(w) << '\n';
  };
  for (const InteriorNode& n : set.interior.nodes) row("interior", n.point, n.weight);
  for (std::size_t a = 0; a < set.angular.size(); ++a) {
    row("angular", PhasePoint{Vec2::Zero(), set.angular.angle[a], set.angular.omega[a]},
        set.angular.weight[a]);
  }
  for (const BoundaryNode& n : set.boundary) row("inflow", n.point.point, n.weight);
  for (const BoundaryNode& n : set.outflow) row("outflow", n.point.point, n.weight);
  write_file_atomic(path, os.str());
}

}  // namespace deepuzawa
