#include "deepuzawa/lagrangian.hpp"

#include <algorithm>
#include <bit>
#include <exception>
#include <numeric>
#include <optional>
#include <random>

namespace deepuzawa {

namespace {

constexpr Eigen::Index kChunkColumns = 256;
constexpr std::size_t kBoundaryChunk = 256;

using SparsePtr = std::shared_ptr<const ad::SparseMatrix>;

struct InteriorChunk {
  ad::Matrix x;
  ad::Matrix dx;
  SparsePtr select;   // residual columns; null when every column is a residual
  SparsePtr scatter;  // null when sigma_t == 0
  Eigen::RowVectorXd sigma;  // sigma_A + sigma_T at each residual
  Eigen::RowVectorXd f;
  Eigen::RowVectorXd w;
};

struct ChunkResult {
  LossParts parts;
  Eigen::VectorXd gradient;
  Eigen::RowVectorXd residual;
  std::exception_ptr error;
};

SparsePtr to_sparse(Eigen::Index rows, Eigen::Index cols,
                    const std::vector<Eigen::Triplet<double>>& entries) {
  auto m = std::make_shared<ad::SparseMatrix>(rows, cols);
  m->setFromTriplets(entries.begin(), entries.end());
  m->makeCompressed();
  return m;
}

InteriorChunk build_interior_chunk(const InteriorSet& set, std::size_t c0, std::size_t c1,
                                   const ProblemSpec& problem, const DiscreteKernel* kernel,
                                   bool include_source, AngleEmbedding embedding) {
  const bool scatter = problem.sigma_t != 0.0;
  std::vector<PhasePoint> columns;
  std::vector<Eigen::Triplet<double>> select;
  std::vector<Eigen::Triplet<double>> mix;
  std::vector<double> sigma, f, w;
  bool identity = true;

  for (std::size_t c = c0; c < c1; ++c) {
    const std::size_t k0 = set.offsets[c];
    const std::size_t k1 = set.offsets[c + 1];
    const auto base = static_cast<Eigen::Index>(columns.size());
    const auto r0 = static_cast<Eigen::Index>(sigma.size());
    for (std::size_t k = k0; k < k1; ++k) {
      const InteriorNode& node = set.nodes[k];
      columns.push_back(node.point);
      sigma.push_back(problem.sigma_a(node.point.x) + problem.sigma_t);
      f.push_back(include_source ? source_value(problem, node.point) : 0.0);
      w.push_back(node.weight);
    }
    if (!scatter) continue;
    if (set.on_rule) {
      require(k1 - k0 == kernel->size(), "interior cluster does not carry the angular rule");
      const Eigen::MatrixXd& m = kernel->mixing();
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) mix.emplace_back(base + j, r0 + i, m(i, j));
    } else {
      identity = false;
      const AngularRule& rule = kernel->rule();
      const Vec2 x = set.nodes[k0].point.x;
      const auto rule_base = static_cast<Eigen::Index>(columns.size());
      for (std::size_t j = 0; j < rule.size(); ++j) columns.push_back(PhasePoint::at(x, rule.angle[j]));
      for (std::size_t k = k0; k < k1; ++k) {
        const Eigen::RowVectorXd row = kernel->row(set.nodes[k].point.omega);
        const auto r = r0 + static_cast<Eigen::Index>(k - k0);
        for (Eigen::Index j = 0; j < row.size(); ++j) mix.emplace_back(rule_base + j, r, row(j));
      }
    }
    if (!set.on_rule)
      for (std::size_t k = k0; k < k1; ++k)
        select.emplace_back(base + static_cast<Eigen::Index>(k - k0),
                            r0 + static_cast<Eigen::Index>(k - k0), 1.0);
  }

  InteriorChunk chunk;
  chunk.x = embed_batch(columns, embedding);
  chunk.dx = embed_spatial_tangent(columns, embedding);
  const auto n_cols = static_cast<Eigen::Index>(columns.size());
  const auto n_res = static_cast<Eigen::Index>(sigma.size());
  if (!identity) chunk.select = to_sparse(n_cols, n_res, select);
  if (scatter) chunk.scatter = to_sparse(n_cols, n_res, mix);
  chunk.sigma = Eigen::Map<const Eigen::RowVectorXd>(sigma.data(), n_res);
  chunk.f = Eigen::Map<const Eigen::RowVectorXd>(f.data(), n_res);
  chunk.w = Eigen::Map<const Eigen::RowVectorXd>(w.data(), n_res);
  return chunk;
}

ChunkResult run_interior_chunk(const MlpParams& params, const InteriorChunk& chunk, double sigma_t,
                               bool want_gradient) {
  ChunkResult out;
  ad::Tape tape(params.size());
  const ad::NodeId in = tape.input(chunk.x, chunk.dx);
  const ad::NodeId u = record_network(tape, params, in);
  const ad::NodeId ures = chunk.select ? tape.contract(u, chunk.select) : u;
  const ad::NodeId du = tape.directional(ures);
  ad::NodeId r = tape.add(du, tape.mul(tape.constant(chunk.sigma), ures));
  if (chunk.scatter) r = tape.sub(r, tape.scale(tape.contract(u, chunk.scatter), sigma_t));

  out.residual = tape.value(r).row(0) - chunk.f;
  const Eigen::RowVectorXd wr = chunk.w.cwiseProduct(out.residual);
  out.parts.pde = 0.5 * wr.dot(out.residual);
  if (want_gradient) {
    const ad::Seed seed{r, wr, {}};
    out.gradient = tape.reverse(std::span<const ad::Seed>(&seed, 1));
  }
  return out;
}

ChunkResult run_boundary_chunk(const MlpParams& params, std::span<const BoundaryNode> nodes,
                               const MultiplierField& multiplier, std::size_t first, std::size_t last,
                               double gamma, bool want_gradient) {
  ChunkResult out;
  std::vector<PhasePoint> pts;
  pts.reserve(last - first);
  for (std::size_t i = first; i < last; ++i) pts.push_back(nodes[i].point.point);
  ad::Tape tape(params.size());
  const ad::NodeId in = tape.input(embed_batch(pts, params.embedding()));
  const ad::NodeId u = record_network(tape, params, in);

  const auto n = static_cast<Eigen::Index>(last - first);
  const auto s = static_cast<Eigen::Index>(first);
  const Eigen::RowVectorXd e = tape.value(u).row(0) - multiplier.g().segment(s, n).transpose();
  const Eigen::RowVectorXd w = multiplier.weights().segment(s, n).transpose();
  const Eigen::RowVectorXd lam = multiplier.values().segment(s, n).transpose();
  const Eigen::RowVectorXd we = w.cwiseProduct(e);
  out.parts.boundary_mismatch_sq = we.dot(e);
  out.parts.boundary_penalty = 0.5 * gamma * out.parts.boundary_mismatch_sq;
  out.parts.multiplier_term = -lam.dot(we);
  if (want_gradient) {
    const ad::Seed seed{u, gamma * we - w.cwiseProduct(lam), {}};
    out.gradient = tape.reverse(std::span<const ad::Seed>(&seed, 1));
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> cluster_ranges(const InteriorSet& set,
                                                                std::size_t extra_per_cluster) {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::size_t start = 0;
  Eigen::Index cols = 0;
  for (std::size_t c = 0; c < set.cluster_count(); ++c) {
    cols += static_cast<Eigen::Index>(set.offsets[c + 1] - set.offsets[c] + extra_per_cluster);
    if (cols >= kChunkColumns) {
      ranges.emplace_back(start, c + 1);
      start = c + 1;
      cols = 0;
    }
  }
  if (start < set.cluster_count()) ranges.emplace_back(start, set.cluster_count());
  return ranges;
}

std::optional<DiscreteKernel> kernel_for(const QuadratureSet& quad, const ProblemSpec& problem) {
  if (problem.sigma_t == 0.0) return std::nullopt;
  require(quad.angular.size() > 0, "scattering needs an angular rule in the quadrature set");
  return DiscreteKernel(problem.kernel, quad.angular);
}

void add_parts(LossParts& into, const LossParts& p) {
  into.pde += p.pde;
  into.boundary_penalty += p.boundary_penalty;
  into.multiplier_term += p.multiplier_term;
  into.boundary_mismatch_sq += p.boundary_mismatch_sq;
}

void check_inputs(const MlpParams& params, const MultiplierField& multiplier,
                  const QuadratureSet& quad, const LagrangianConfig& config) {
  require(params.depth() > 0, "lagrangian: empty network");
  config.validate();
  multiplier.check(quad.boundary);
}

LossAndGradient evaluate_chunked(const MlpParams& params, const MultiplierField& multiplier,
                                 const QuadratureSet& quad, const ProblemSpec& problem,
                                 const LagrangianConfig& config, bool want_gradient) {
  check_inputs(params, multiplier, quad, config);
  const std::optional<DiscreteKernel> kernel = kernel_for(quad, problem);
  const InteriorSet& set = quad.interior;
  const std::size_t extra = (kernel && !set.on_rule) ? kernel->size() : 0;
  const auto ranges = cluster_ranges(set, extra);
  const std::size_t n_bnd = quad.boundary.size();
  const std::size_t n_bchunks = (n_bnd + kBoundaryChunk - 1) / kBoundaryChunk;
  const std::size_t n_tasks = ranges.size() + n_bchunks;
  std::vector<ChunkResult> results(n_tasks);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t t = 0; t < n_tasks; ++t) {
    try {
      if (t < ranges.size()) {
        const InteriorChunk chunk =
            build_interior_chunk(set, ranges[t].first, ranges[t].second, problem,
                                 kernel ? &*kernel : nullptr, config.include_source, params.embedding());
        results[t] = run_interior_chunk(params, chunk, problem.sigma_t, want_gradient);
      } else {
        const std::size_t b = t - ranges.size();
        const std::size_t first = b * kBoundaryChunk;
        results[t] = run_boundary_chunk(params, quad.boundary, multiplier, first,
                                        std::min(n_bnd, first + kBoundaryChunk), config.gamma,
                                        want_gradient);
      }
    } catch (...) {
      results[t].error = std::current_exception();
    }
  }

  LossAndGradient out;
  if (want_gradient) out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  for (const ChunkResult& r : results) {
    if (r.error) std::rethrow_exception(r.error);
    add_parts(out.parts, r.parts);
    if (want_gradient) out.gradient += r.gradient;
  }
  return out;
}

}  // namespace

void LagrangianConfig::validate() const {
  require(gamma >= 0.0 && std::isfinite(gamma), "gamma must be finite and >= 0");
}

std::uint64_t registry_hash(std::span<const BoundaryNode> nodes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (const BoundaryNode& n : nodes) {
    mix(n.point.point.x[0]);
    mix(n.point.point.x[1]);
    mix(n.point.point.angle);
    mix(n.weight);
  }
  mix(static_cast<double>(nodes.size()));
  return h;
}

MultiplierField::MultiplierField(std::span<const BoundaryNode> nodes, Eigen::VectorXd g,
                                 double initial)
    : registry_(registry_hash(nodes)), g_(std::move(g)) {
  const auto n = static_cast<Eigen::Index>(nodes.size());
  require(g_.size() == n, "multiplier: inflow data length differs from the node count");
  values_ = Eigen::VectorXd::Constant(n, initial);
  weights_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) weights_(i) = nodes[static_cast<std::size_t>(i)].weight;
}

double MultiplierField::norm() const { return std::sqrt(weights_.dot(values_.cwiseAbs2())); }

void MultiplierField::check(std::span<const BoundaryNode> nodes) const {
  require(nodes.size() == size() && registry_hash(nodes) == registry_,
          "multiplier registry does not match the boundary quadrature nodes");
}

MultiplierField make_multiplier(const ProblemSpec& problem, std::span<const BoundaryNode> nodes,
                                double initial) {
  const std::vector<double> g = inflow_values(problem, nodes);
  return MultiplierField(nodes, Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size())),
                         initial);
}

LossAndGradient evaluate(const MlpParams& params, const MultiplierField& multiplier,
                         const QuadratureSet& quad, const ProblemSpec& problem,
                         const LagrangianConfig& config) {
  return evaluate_chunked(params, multiplier, quad, problem, config, true);
}

LossParts assemble(const MlpParams& params, const MultiplierField& multiplier,
                   const QuadratureSet& quad, const ProblemSpec& problem,
                   const LagrangianConfig& config) {
  return evaluate_chunked(params, multiplier, quad, problem, config, false).parts;
}

Eigen::VectorXd gradient(const MlpParams& params, const MultiplierField& multiplier,
                         const QuadratureSet& quad, const ProblemSpec& problem,
                         const LagrangianConfig& config) {
  return evaluate_chunked(params, multiplier, quad, problem, config, true).gradient;
}

LossAndGradient evaluate_serial(const MlpParams& params, const MultiplierField& multiplier,
                                const QuadratureSet& quad, const ProblemSpec& problem,
                                const LagrangianConfig& config) {
  check_inputs(params, multiplier, quad, config);
  const std::optional<DiscreteKernel> kernel = kernel_for(quad, problem);
  LossAndGradient out;
  out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  if (quad.interior.cluster_count() > 0) {
    const InteriorChunk chunk =
        build_interior_chunk(quad.interior, 0, quad.interior.cluster_count(), problem,
                             kernel ? &*kernel : nullptr, config.include_source, params.embedding());
    const ChunkResult r = run_interior_chunk(params, chunk, problem.sigma_t, true);
    add_parts(out.parts, r.parts);
    out.gradient += r.gradient;
  }
  if (!quad.boundary.empty()) {
    const ChunkResult r = run_boundary_chunk(params, quad.boundary, multiplier, 0,
                                             quad.boundary.size(), config.gamma, true);
    add_parts(out.parts, r.parts);
    out.gradient += r.gradient;
  }
  return out;
}

LossParts assemble_reference(const MlpParams& params, const MultiplierField& multiplier,
                             const QuadratureSet& quad, const ProblemSpec& problem,
                             const LagrangianConfig& config) {
  check_inputs(params, multiplier, quad, config);
  const ScatteringKernel kernel_spec = problem.kernel;
  const DiscreteKernel kernel(kernel_spec, quad.angular.size() > 0 ? quad.angular : trapezoid_circle(8));
  LossParts parts;
  for (const InteriorNode& node : quad.interior.nodes) {
    double r = pde_residual(params, node.point, kernel, problem);
    if (!config.include_source) r += source_value(problem, node.point);
    parts.pde += 0.5 * node.weight * r * r;
  }
  for (std::size_t i = 0; i < quad.boundary.size(); ++i) {
    const double e = eval(params, quad.boundary[i].point.point) - multiplier.g()(static_cast<Eigen::Index>(i));
    const double w = quad.boundary[i].weight;
    parts.boundary_mismatch_sq += w * e * e;
    parts.multiplier_term -= w * multiplier.values()(static_cast<Eigen::Index>(i)) * e;
  }
  parts.boundary_penalty = 0.5 * config.gamma * parts.boundary_mismatch_sq;
  return parts;
}

Eigen::VectorXd interior_residuals(const MlpParams& params, const QuadratureSet& quad,
                                   const ProblemSpec& problem, bool include_source) {
  const std::optional<DiscreteKernel> kernel = kernel_for(quad, problem);
  const InteriorSet& set = quad.interior;
  const std::size_t extra = (kernel && !set.on_rule) ? kernel->size() : 0;
  const auto ranges = cluster_ranges(set, extra);
  std::vector<ChunkResult> results(ranges.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t t = 0; t < ranges.size(); ++t) {
    try {
      const InteriorChunk chunk = build_interior_chunk(set, ranges[t].first, ranges[t].second, problem,
                                                       kernel ? &*kernel : nullptr, include_source,
                                                       params.embedding());
      results[t] = run_interior_chunk(params, chunk, problem.sigma_t, false);
    } catch (...) {
      results[t].error = std::current_exception();
    }
  }
  Eigen::VectorXd r(static_cast<Eigen::Index>(set.nodes.size()));
  Eigen::Index k = 0;
  for (const ChunkResult& c : results) {
    if (c.error) std::rethrow_exception(c.error);
    r.segment(k, c.residual.size()) = c.residual.transpose();
    k += c.residual.size();
  }
  return r;
}

QuadratureSet subsample(const QuadratureSet& quad, const BatchSpec& batch, std::uint64_t step_seed) {
  const std::size_t total = quad.interior.cluster_count();
  require(batch.interior <= total, "interior batch of " + std::to_string(batch.interior) +
                                       " clusters exceeds the " + std::to_string(total) + " available");
  if (batch.interior == 0 || batch.interior == total) return quad;

  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(step_seed);
  for (std::size_t i = 0; i < batch.interior; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(batch.interior);
  std::sort(idx.begin(), idx.end());

  QuadratureSet out;
  out.spec = quad.spec;
  out.angular = quad.angular;
  out.boundary = quad.boundary;
  out.outflow = quad.outflow;
  out.interior.on_rule = quad.interior.on_rule;
  const double scale = static_cast<double>(total) / static_cast<double>(batch.interior);
  for (std::size_t c : idx) {
    for (std::size_t k = quad.interior.offsets[c]; k < quad.interior.offsets[c + 1]; ++k) {
      InteriorNode node = quad.interior.nodes[k];
      node.weight *= scale;
      out.interior.nodes.push_back(node);
    }
    out.interior.offsets.push_back(out.interior.nodes.size());
  }
  return out;
}

}  // namespace deepuzawa
