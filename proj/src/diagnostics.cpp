#include "deepuzawa/diagnostics.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "deepuzawa/file_io.hpp"
#include "deepuzawa/lagrangian.hpp"

namespace deepuzawa {

namespace {

constexpr std::size_t kEvalBlock = 4096;

std::vector<PhasePoint> grid_points(const GridSpec& grid, double theta) {
  std::vector<PhasePoint> pts;
  pts.reserve(grid.nx * grid.ny);
  FieldGrid g;
  g.nx = grid.nx;
  g.ny = grid.ny;
  g.lower = grid.domain.lower();
  g.upper = grid.domain.upper();
  for (std::size_t j = 0; j < grid.ny; ++j)
    for (std::size_t i = 0; i < grid.nx; ++i) pts.push_back(PhasePoint::at(Vec2(g.x1(i), g.x2(j)), theta));
  return pts;
}

FieldGrid empty_grid(const GridSpec& grid, GridQuantity q, double theta) {
  require(grid.nx >= 2 && grid.ny >= 2, "field grid needs at least 2 nodes per axis");
  FieldGrid g;
  g.nx = grid.nx;
  g.ny = grid.ny;
  g.lower = grid.domain.lower();
  g.upper = grid.domain.upper();
  g.quantity = q;
  g.theta = theta;
  g.values.assign(grid.nx * grid.ny, 0.0);
  return g;
}

// Blocked eval_batch; blocks run in parallel and land in fixed slots.
Eigen::RowVectorXd eval_many(const MlpParams& params, const std::vector<PhasePoint>& pts) {
  Eigen::RowVectorXd out(static_cast<Eigen::Index>(pts.size()));
  const std::size_t blocks = (pts.size() + kEvalBlock - 1) / kEvalBlock;
#pragma omp parallel for schedule(static)
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t first = b * kEvalBlock;
    const std::size_t n = std::min(kEvalBlock, pts.size() - first);
    out.segment(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(n)) =
        eval_batch(params, std::span<const PhasePoint>(pts.data() + first, n));
  }
  return out;
}

double weighted_sq(const Eigen::RowVectorXd& v, const Eigen::RowVectorXd& w) {
  return v.cwiseAbs2().dot(w);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_number(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw IoError("malformed number '" + s + "'");
  return v;
}

}  // namespace

double FieldGrid::x1(std::size_t i) const {
  return lower[0] + (upper[0] - lower[0]) * static_cast<double>(i) / static_cast<double>(nx - 1);
}

double FieldGrid::x2(std::size_t j) const {
  return lower[1] + (upper[1] - lower[1]) * static_cast<double>(j) / static_cast<double>(ny - 1);
}

double FieldGrid::box_mean(double a1, double b1, double a2, double b2) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i)
      if (x1(i) >= a1 - 1e-12 && x1(i) <= b1 + 1e-12 && x2(j) >= a2 - 1e-12 && x2(j) <= b2 + 1e-12) {
        sum += at(i, j);
        ++count;
      }
  require(count > 0, "box_mean: no grid node inside the box");
  return sum / static_cast<double>(count);
}

FieldGrid scalar_flux(const MlpParams& params, const GridSpec& grid, const AngularRule& rule) {
  double total = 0.0;
  for (double w : rule.weight) total += w;
  require(std::abs(total - 2.0 * std::numbers::pi) <= 1e-10,
          "scalar_flux: angular weights must sum to 2 pi");
  FieldGrid g = empty_grid(grid, GridQuantity::ScalarFlux, 0.0);
  for (std::size_t s = 0; s < rule.size(); ++s) {
    const Eigen::RowVectorXd u = eval_many(params, grid_points(grid, rule.angle[s]));
    for (std::size_t k = 0; k < g.values.size(); ++k) g.values[k] += rule.weight[s] * u(static_cast<Eigen::Index>(k));
  }
  return g;
}

FieldGrid angular_slice(const MlpParams& params, const GridSpec& grid, double theta) {
  FieldGrid g = empty_grid(grid, GridQuantity::AngularSlice, theta);
  const Eigen::RowVectorXd u = eval_many(params, grid_points(grid, theta));
  for (std::size_t k = 0; k < g.values.size(); ++k) g.values[k] = u(static_cast<Eigen::Index>(k));
  return g;
}

BatchValues eval_with_directional(const MlpParams& params, std::span<const PhasePoint> points) {
  BatchValues out;
  out.u.resize(static_cast<Eigen::Index>(points.size()));
  out.du.resize(static_cast<Eigen::Index>(points.size()));
  const std::size_t blocks = (points.size() + kEvalBlock - 1) / kEvalBlock;
#pragma omp parallel for schedule(static)
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t first = b * kEvalBlock;
    const std::size_t n = std::min(kEvalBlock, points.size() - first);
    const auto block = points.subspan(first, n);
    ad::Tape tape(params.size());
    const ad::NodeId in = tape.input(embed_batch(block, params.embedding()),
                                     embed_spatial_tangent(block, params.embedding()));
    const ad::NodeId u = record_network(tape, params, in);
    const auto s = static_cast<Eigen::Index>(first);
    const auto len = static_cast<Eigen::Index>(n);
    out.u.segment(s, len) = tape.value(u).row(0);
    out.du.segment(s, len) = tape.tangent(u).row(0);
  }
  return out;
}

ReferenceField manufactured_reference() {
  return ReferenceField{
      [](const PhasePoint& p) { return manufactured_solution(p.x); },
      [](const PhasePoint& p) { return p.omega.dot(manufactured_gradient(p.x)); }};
}

NormReport discrete_norms(const MlpParams& params, const QuadratureSet& quad, const ProblemSpec& problem,
                          const std::optional<ReferenceField>& reference, bool with_triple) {
  require(!with_triple || !quad.outflow.empty(),
          "triple norm requested but the quadrature carries no outflow nodes");
  NormReport rep;

  std::vector<PhasePoint> pts;
  Eigen::RowVectorXd w(static_cast<Eigen::Index>(quad.interior.nodes.size()));
  for (std::size_t k = 0; k < quad.interior.nodes.size(); ++k) {
    pts.push_back(quad.interior.nodes[k].point);
    w(static_cast<Eigen::Index>(k)) = quad.interior.nodes[k].weight;
  }
  BatchValues in = eval_with_directional(params, pts);
  if (reference) {
    for (std::size_t k = 0; k < pts.size(); ++k) {
      in.u(static_cast<Eigen::Index>(k)) -= reference->value(pts[k]);
      in.du(static_cast<Eigen::Index>(k)) -= reference->directional(pts[k]);
    }
  }
  rep.l2_interior = std::sqrt(weighted_sq(in.u, w));
  const Eigen::VectorXd r = interior_residuals(params, quad, problem, true);
  rep.pde_residual_norm = std::sqrt(weighted_sq(r.transpose(), w));

  const Eigen::VectorXd ub = boundary_values(params, quad.boundary);
  const std::vector<double> g = inflow_values(problem, quad.boundary);
  double bsq = 0.0, in_sq = 0.0;
  for (std::size_t i = 0; i < quad.boundary.size(); ++i) {
    const double e = ub(static_cast<Eigen::Index>(i)) - g[i];
    bsq += quad.boundary[i].weight * e * e;
    const double d = reference ? ub(static_cast<Eigen::Index>(i)) - reference->value(quad.boundary[i].point.point)
                               : ub(static_cast<Eigen::Index>(i));
    in_sq += quad.boundary[i].weight * d * d;
  }
  rep.boundary_residual_norm = std::sqrt(bsq);
  rep.v_norm = std::sqrt(rep.pde_residual_norm * rep.pde_residual_norm + bsq);

  rep.triple_norm = std::numeric_limits<double>::quiet_NaN();
  if (with_triple) {
    const Eigen::VectorXd uo = boundary_values(params, quad.outflow);
    double out_sq = 0.0;
    for (std::size_t i = 0; i < quad.outflow.size(); ++i) {
      const double d = reference ? uo(static_cast<Eigen::Index>(i)) - reference->value(quad.outflow[i].point.point)
                                 : uo(static_cast<Eigen::Index>(i));
      out_sq += quad.outflow[i].weight * d * d;
    }
    rep.triple_norm = std::sqrt(rep.l2_interior * rep.l2_interior + weighted_sq(in.du, w) + out_sq + in_sq);
  }
  return rep;
}

double relative_l2_error(const MlpParams& params, const QuadratureSet& quad, const ReferenceField& reference) {
  std::vector<PhasePoint> pts;
  pts.reserve(quad.interior.nodes.size());
  for (const InteriorNode& n : quad.interior.nodes) pts.push_back(n.point);
  const Eigen::RowVectorXd u = eval_many(params, pts);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const double ref = reference.value(pts[k]);
    const double e = u(static_cast<Eigen::Index>(k)) - ref;
    num += quad.interior.nodes[k].weight * e * e;
    den += quad.interior.nodes[k].weight * ref * ref;
  }
  require(den > 0.0, "relative_l2_error: reference has zero norm");
  return std::sqrt(num / den);
}

void emit_boundary_trace(const std::filesystem::path& path, const MlpParams& params,
                         std::span<const BoundaryNode> nodes, const Eigen::VectorXd& g) {
  require(static_cast<std::size_t>(g.size()) == nodes.size(), "boundary trace: g length mismatch");
  const Eigen::VectorXd u = boundary_values(params, nodes);
  std::ostringstream os;
  os << "x1,x2,omega_angle,u,g\n";
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const PhasePoint& p = nodes[i].point.point;
    os << format_double(p.x[0]) << ',' << format_double(p.x[1]) << ',' << format_double(p.angle) << ','
       << format_double(u(static_cast<Eigen::Index>(i))) << ',' << format_double(g(static_cast<Eigen::Index>(i)))
       << '\n';
  }
  write_file_atomic(path, os.str());
}

std::string format_metrics_row(const MetricsRow& row) {
  std::ostringstream os;
  os << row.outer << ',' << row.inner << ',' << format_double(row.parts.value()) << ','
     << format_double(row.parts.pde) << ',' << format_double(row.parts.boundary_penalty) << ','
     << format_double(row.parts.multiplier_term) << ',' << format_double(row.boundary_residual) << ','
     << format_double(row.lambda_norm);
  return os.str();
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const MetricsRow& r : rows) out += format_metrics_row(r) + "\n";
  return out;
}

void emit_metrics(const std::filesystem::path& path, std::span<const MetricsRow> rows) {
  write_file_atomic(path, metrics_csv(rows));
}

std::vector<MetricsRow> parse_metrics(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) throw IoError("metrics CSV: unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 8) throw IoError("metrics CSV: expected 8 fields in '" + line + "'");
    MetricsRow r;
    r.outer = std::stoi(f[0]);
    r.inner = std::stoi(f[1]);
    r.parts.pde = parse_number(f[3]);
    r.parts.boundary_penalty = parse_number(f[4]);
    r.parts.multiplier_term = parse_number(f[5]);
    r.boundary_residual = parse_number(f[6]);
    r.parts.boundary_mismatch_sq = r.boundary_residual * r.boundary_residual;
    r.lambda_norm = parse_number(f[7]);
    rows.push_back(r);
  }
  return rows;
}

void emit_grid(const std::filesystem::path& path, const FieldGrid& grid) {
  std::ostringstream os;
  os << "x1,x2,value\n";
  for (std::size_t j = 0; j < grid.ny; ++j)
    for (std::size_t i = 0; i < grid.nx; ++i)
      os << format_double(grid.x1(i)) << ',' << format_double(grid.x2(j)) << ','
         << format_double(grid.at(i, j)) << '\n';
  write_file_atomic(path, os.str());
}

FieldGrid parse_grid(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || line != "x1,x2,value") throw IoError("grid CSV: unexpected header");
  std::vector<double> xs, ys;
  FieldGrid g;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 3) throw IoError("grid CSV: expected 3 fields in '" + line + "'");
    xs.push_back(parse_number(f[0]));
    ys.push_back(parse_number(f[1]));
    g.values.push_back(parse_number(f[2]));
  }
  if (g.values.size() < 4) throw IoError("grid CSV: too few rows");
  std::size_t nx = 1;
  while (nx < ys.size() && ys[nx] == ys[0]) ++nx;
  if (g.values.size() % nx != 0) throw IoError("grid CSV: rows do not form a rectangle");
  g.nx = nx;
  g.ny = g.values.size() / nx;
  g.lower = Vec2(xs.front(), ys.front());
  g.upper = Vec2(xs.back(), ys.back());
  return g;
}

std::string manifest_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["status"] = m.status;
  j["wall_clock_seconds"] = m.wall_clock_seconds;
  j["config"] = m.config;
  j["final_metrics"] = m.final_metrics;
  return j.dump(2) + "\n";
}

RunManifest parse_manifest(const std::string& json) {
  try {
    const auto j = nlohmann::json::parse(json);
    RunManifest m;
    m.version = j.at("version").get<std::string>();
    m.status = j.at("status").get<std::string>();
    m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    m.final_metrics = j.at("final_metrics").get<std::map<std::string, double>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
}

void emit_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  write_file_atomic(path, manifest_json(manifest));
}

}  // namespace deepuzawa
