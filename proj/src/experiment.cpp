#include "deepuzawa/experiment.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "deepuzawa/file_io.hpp"
#include "deepuzawa/linear_oracle.hpp"

namespace deepuzawa {

namespace {

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Typed reads from the resolved map; failures are collected, never thrown.
class Fields {
 public:
  Fields(const ConfigMap& m, std::vector<std::string>& errors) : m_(m), errors_(errors) {}

  double real(const std::string& key) {
    const std::string& v = m_.at(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (trim(v.substr(used)).empty() && std::isfinite(d)) return d;
    } catch (const std::exception&) {
    }
    fail(key, "expected a finite number, got '" + v + "'");
    return 0.0;
  }

  long long integer(const std::string& key, long long min_value) {
    const std::string& v = m_.at(key);
    try {
      std::size_t used = 0;
      const long long i = std::stoll(v, &used);
      if (!trim(v.substr(used)).empty()) throw std::invalid_argument(v);
      if (i < min_value) {
        fail(key, "must be >= " + std::to_string(min_value) + ", got " + v);
        return min_value;
      }
      return i;
    } catch (const std::exception&) {
      fail(key, "expected an integer, got '" + v + "'");
      return min_value;
    }
  }

  std::uint64_t seed(const std::string& key) {
    const std::string& v = m_.at(key);
    try {
      std::size_t used = 0;
      if (!v.empty() && v[0] != '-') {
        const unsigned long long s = std::stoull(v, &used);
        if (trim(v.substr(used)).empty()) return s;
      }
    } catch (const std::exception&) {
    }
    fail(key, "expected a nonnegative integer seed, got '" + v + "'");
    return 0;
  }

  bool flag(const std::string& key) {
    const std::string& v = m_.at(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(key, "expected true or false, got '" + v + "'");
    return false;
  }

  const std::string& text(const std::string& key) { return m_.at(key); }

  template <class Parse>
  auto tag(const std::string& key, Parse parse, decltype(parse(std::string_view{})) fallback) {
    try {
      return parse(m_.at(key));
    } catch (const ContractViolation& e) {
      fail(key, e.what());
      return fallback;
    }
  }

  void check(bool ok, const std::string& key, const std::string& message) {
    if (!ok) fail(key, message);
  }

  void fail(const std::string& key, const std::string& message) { errors_.push_back(key + ": " + message); }

 private:
  const ConfigMap& m_;
  std::vector<std::string>& errors_;
};

std::optional<Edge> parse_edge(std::string_view tag) {
  if (tag == "all") return std::nullopt;
  if (tag == "bottom") return Edge::Bottom;
  if (tag == "right") return Edge::Right;
  if (tag == "top") return Edge::Top;
  if (tag == "left") return Edge::Left;
  throw ContractViolation("unknown edge '" + std::string(tag) + "' (all | bottom | right | top | left)");
}

RunMode parse_mode(std::string_view tag) {
  if (tag == "train") return RunMode::Train;
  if (tag == "oracle") return RunMode::Oracle;
  throw ContractViolation("unknown mode '" + std::string(tag) + "' (train | oracle)");
}

void collect(std::vector<std::string>& errors, const std::string& where, const auto& validate) {
  try {
    validate();
  } catch (const ContractViolation& e) {
    errors.push_back(where + ": " + e.what());
  }
}

std::string describe_row(const MetricsRow& row) {
  std::ostringstream os;
  os << std::setprecision(6) << "outer " << row.outer << ": loss " << row.parts.value() << ", pde "
     << row.parts.pde << ", boundary residual " << row.boundary_residual << ", |lambda| " << row.lambda_norm;
  return os.str();
}

std::string slice_name(double theta) {
  std::ostringstream os;
  os << "slice_theta_" << std::fixed << std::setprecision(4) << theta << ".csv";
  return os.str();
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '=') out += c;
    else if (!out.empty() && out.back() != '_') out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

ExperimentResult run_oracle(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                            std::ostream* log, RunManifest manifest) {
  ExperimentResult result;
  result.out_dir = out_dir;
  const std::vector<OracleCheck> checks = verify_oracle_suite();
  std::size_t passed = 0;
  for (const OracleCheck& c : checks) {
    if (c.passed) ++passed;
    manifest.final_metrics["check." + sanitize(c.name)] = c.passed ? 1.0 : 0.0;
    if (log) *log << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
  }
  manifest.final_metrics["checks_passed"] = static_cast<double>(passed);
  manifest.final_metrics["checks_total"] = static_cast<double>(checks.size());

  OracleSetup setup;
  setup.sigma_a = config.oracle.sigma_a;
  setup.sigma_t = config.oracle.sigma_t;
  setup.kernel = config.problem.kernel;
  const LinearTrialSpace space = LinearTrialSpace::build(setup);
  const OracleRun run = run_uzawa_oracle(space, config.oracle.gamma, config.oracle.rho, config.oracle.n_iter,
                                         Eigen::VectorXd::Zero(space.g().size()));
  write_oracle_csv(out_dir / "oracle.csv", run);
  manifest.final_metrics["dist_lambda_initial"] = run.dist_lambda.front();
  manifest.final_metrics["dist_lambda_final"] = run.dist_lambda.back();
  manifest.final_metrics["residual_boundary_final"] = run.residual_boundary.back();

  result.exit_code = passed == checks.size() ? kExitOk : kExitNumerical;
  if (result.exit_code != kExitOk) manifest.status = "failed: oracle identity checks";
  result.manifest = manifest;
  return result;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : ContractViolation("invalid configuration:\n  " + join(violations, "\n  ")),
      violations_(std::move(violations)) {}

const ConfigMap& default_config() {
  static const ConfigMap defaults = {
      {"seed", "0"},
      {"experiment.name", "custom"},
      {"experiment.mode", "train"},
      {"problem.sigma_a.kind", "constant"},
      {"problem.sigma_a.value", "1"},
      {"problem.sigma_a.center_x", "0.5"},
      {"problem.sigma_a.center_y", "0.5"},
      {"problem.sigma_a.radius", "0.15"},
      {"problem.sigma_a.inside", "50"},
      {"problem.sigma_a.outside", "1"},
      {"problem.sigma_a.threshold", "0.5"},
      {"problem.sigma_a.left", "0.1"},
      {"problem.sigma_a.right", "5"},
      {"problem.sigma_t", "0"},
      {"problem.kernel", "isotropic"},
      {"problem.kernel_epsilon", "0.1"},
      {"problem.source.kind", "zero"},
      {"problem.source.value", "1"},
      {"problem.source.center_x", "0.5"},
      {"problem.source.center_y", "0.5"},
      {"problem.source.radius", "1"},
      {"problem.inflow.kind", "constant"},
      {"problem.inflow.value", "0"},
      {"problem.inflow.beam_half_angle", "0.19634954084936207"},
      {"problem.noise.std", "0"},
      {"problem.noise.seed", "0"},
      {"problem.noise.edge", "all"},
      {"quadrature.interior.scheme", "monte-carlo"},
      {"quadrature.interior.n_points", "20000"},
      {"quadrature.interior.nx", "32"},
      {"quadrature.interior.ny", "32"},
      {"quadrature.boundary.scheme", "tensor-gauss"},
      {"quadrature.boundary.n_points", "512"},
      {"quadrature.boundary.n_along", "16"},
      {"quadrature.boundary.n_angles", "8"},
      {"quadrature.n_angles", "16"},
      {"quadrature.batch", "512"},
      {"quadrature.resample", "true"},
      {"network.widths", "4,64,64,64,1"},
      {"network.activation", "tanh"},
      {"network.embedding", "cos-sin"},
      {"uzawa.rho", "1"},
      {"uzawa.gamma", "1"},
      {"uzawa.n_outer", "20"},
      {"uzawa.n_inner", "500"},
      {"uzawa.learning_rate", "0.001"},
      {"uzawa.optimizer", "adam"},
      {"uzawa.beta1", "0.9"},
      {"uzawa.beta2", "0.999"},
      {"uzawa.epsilon", "1e-08"},
      {"uzawa.lambda_init", "0"},
      {"lagrangian.include_source", "true"},
      {"evaluation.nx", "24"},
      {"evaluation.n_angles", "32"},
      {"evaluation.reference", "none"},
      {"outputs.grid_nx", "101"},
      {"outputs.grid_ny", "101"},
      {"outputs.slices", "0"},
      {"outputs.checkpoint", "true"},
      {"outputs.quadrature_dump", "false"},
      {"oracle.sigma_a", "1"},
      {"oracle.sigma_t", "0.5"},
      {"oracle.gamma", "1"},
      {"oracle.rho", "1"},
      {"oracle.n_iter", "200"},
  };
  return defaults;
}

ExperimentConfig resolve_config(const ConfigMap& entries) {
  std::vector<std::string> errors;
  ConfigMap flat = default_config();
  for (const auto& [key, value] : entries) {
    if (!flat.contains(key)) {
      errors.push_back(key + ": unknown key");
      continue;
    }
    flat[key] = trim(value);
  }

  ExperimentConfig c;
  Fields f(flat, errors);
  c.name = f.text("experiment.name");
  c.mode = f.tag("experiment.mode", parse_mode, RunMode::Train);
  c.seed = f.seed("seed");

  ProblemSpec& p = c.problem;
  p.sigma_a.kind = f.tag("problem.sigma_a.kind", parse_coefficient_kind, CoefficientKind::Constant);
  p.sigma_a.value = f.real("problem.sigma_a.value");
  p.sigma_a.center = Vec2(f.real("problem.sigma_a.center_x"), f.real("problem.sigma_a.center_y"));
  p.sigma_a.radius = f.real("problem.sigma_a.radius");
  p.sigma_a.inside = f.real("problem.sigma_a.inside");
  p.sigma_a.outside = f.real("problem.sigma_a.outside");
  p.sigma_a.threshold = f.real("problem.sigma_a.threshold");
  p.sigma_a.left = f.real("problem.sigma_a.left");
  p.sigma_a.right = f.real("problem.sigma_a.right");
  p.sigma_t = f.real("problem.sigma_t");
  p.kernel.kind = f.tag("problem.kernel", parse_kernel_kind, KernelKind::Isotropic);
  p.kernel.epsilon = f.real("problem.kernel_epsilon");
  p.source.kind = f.tag("problem.source.kind", parse_source_kind, SourceKind::Zero);
  p.source.value = f.real("problem.source.value");
  p.source.center = Vec2(f.real("problem.source.center_x"), f.real("problem.source.center_y"));
  p.source.radius = f.real("problem.source.radius");
  p.inflow.kind = f.tag("problem.inflow.kind", parse_inflow_kind, InflowKind::Constant);
  p.inflow.value = f.real("problem.inflow.value");
  p.inflow.beam_half_angle = f.real("problem.inflow.beam_half_angle");
  p.noise.std = f.real("problem.noise.std");
  p.noise.seed = f.seed("problem.noise.seed");
  p.noise.edge = f.tag("problem.noise.edge", parse_edge, std::nullopt);
  collect(errors, "problem", [&] { p.validate(); });

  QuadratureSpec& q = c.quadrature;
  q.interior.scheme = f.tag("quadrature.interior.scheme", parse_scheme, Scheme::MonteCarlo);
  q.interior.n_points = static_cast<std::size_t>(f.integer("quadrature.interior.n_points", 1));
  q.interior.nx = static_cast<std::size_t>(f.integer("quadrature.interior.nx", 1));
  q.interior.ny = static_cast<std::size_t>(f.integer("quadrature.interior.ny", 1));
  q.boundary.scheme = f.tag("quadrature.boundary.scheme", parse_scheme, Scheme::TensorGauss);
  f.check(q.boundary.scheme != Scheme::Hybrid, "quadrature.boundary.scheme",
          "boundary rules are monte-carlo or tensor-gauss");
  q.boundary.n_points = static_cast<std::size_t>(f.integer("quadrature.boundary.n_points", 1));
  q.boundary.n_along = static_cast<std::size_t>(f.integer("quadrature.boundary.n_along", 1));
  q.boundary.n_angles = static_cast<std::size_t>(f.integer("quadrature.boundary.n_angles", 1));
  q.n_angles = static_cast<std::size_t>(f.integer("quadrature.n_angles", 8));
  q.seed = derive_seed(c.seed, 10);

  c.lagrangian.gamma = f.real("uzawa.gamma");
  f.check(c.lagrangian.gamma >= 0.0, "uzawa.gamma", "must be >= 0 (boundary penalty weight)");
  c.lagrangian.include_source = f.flag("lagrangian.include_source");
  c.lagrangian.batch.interior = static_cast<std::size_t>(f.integer("quadrature.batch", 0));
  c.lagrangian.batch.resample = f.flag("quadrature.resample");
  {
    const std::size_t clusters = q.interior.scheme == Scheme::TensorGauss ? q.interior.nx * q.interior.ny
                                                                          : q.interior.n_points;
    f.check(c.lagrangian.batch.interior <= clusters, "quadrature.batch",
            "exceeds the " + std::to_string(clusters) + " interior clusters");
  }

  for (const std::string& w : split_list(f.text("network.widths"))) {
    try {
      c.widths.push_back(std::stoi(w));
    } catch (const std::exception&) {
      f.fail("network.widths", "not an integer list: '" + f.text("network.widths") + "'");
      break;
    }
  }
  c.activation = f.tag("network.activation", parse_activation, Activation::Tanh);
  c.embedding = f.tag("network.embedding", parse_embedding, AngleEmbedding::CosSin);
  collect(errors, "network.widths", [&] { MlpParams(c.widths, c.activation, c.embedding); });

  UzawaConfig& u = c.uzawa;
  u.rho = f.real("uzawa.rho");
  u.n_outer = static_cast<int>(f.integer("uzawa.n_outer", 1));
  u.n_inner = static_cast<int>(f.integer("uzawa.n_inner", 1));
  u.optimizer.kind = f.tag("uzawa.optimizer", parse_optimizer, OptimizerKind::Adam);
  u.optimizer.learning_rate = f.real("uzawa.learning_rate");
  u.optimizer.beta1 = f.real("uzawa.beta1");
  u.optimizer.beta2 = f.real("uzawa.beta2");
  u.optimizer.epsilon = f.real("uzawa.epsilon");
  u.lambda_init = f.real("uzawa.lambda_init");
  collect(errors, "uzawa", [&] { u.validate(); });

  c.evaluation.nx = static_cast<std::size_t>(f.integer("evaluation.nx", 2));
  c.evaluation.n_angles = static_cast<std::size_t>(f.integer("evaluation.n_angles", 8));
  const std::string& ref = f.text("evaluation.reference");
  f.check(ref == "none" || ref == "manufactured", "evaluation.reference", "expected none or manufactured");
  c.evaluation.manufactured_reference = ref == "manufactured";

  c.outputs.grid_nx = static_cast<std::size_t>(f.integer("outputs.grid_nx", 2));
  c.outputs.grid_ny = static_cast<std::size_t>(f.integer("outputs.grid_ny", 2));
  c.outputs.slices.clear();
  for (const std::string& s : split_list(f.text("outputs.slices"))) {
    try {
      c.outputs.slices.push_back(std::stod(s));
    } catch (const std::exception&) {
      f.fail("outputs.slices", "not a number list: '" + f.text("outputs.slices") + "'");
      break;
    }
  }
  c.outputs.checkpoint = f.flag("outputs.checkpoint");
  c.outputs.quadrature_dump = f.flag("outputs.quadrature_dump");

  c.oracle.sigma_a = f.real("oracle.sigma_a");
  c.oracle.sigma_t = f.real("oracle.sigma_t");
  c.oracle.gamma = f.real("oracle.gamma");
  c.oracle.rho = f.real("oracle.rho");
  c.oracle.n_iter = static_cast<int>(f.integer("oracle.n_iter", 1));
  f.check(c.oracle.sigma_a >= 0.0 && c.oracle.sigma_t >= 0.0, "oracle", "coefficients must be >= 0");
  f.check(c.oracle.gamma > 0.0, "oracle.gamma", "must be > 0");
  f.check(c.oracle.rho > 0.0, "oracle.rho", "must be > 0 (multiplier step)");

  if (!errors.empty()) throw ConfigError(std::move(errors));
  c.flat = std::move(flat);
  return c;
}

ConfigMap parse_ini(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream is(text);
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError({"line " + std::to_string(e.line()) + ": " + e.message()});
  }
  ConfigMap out;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      out[name] = node.data();
      continue;
    }
    for (const auto& [key, leaf] : node) out[name + "." + key] = leaf.data();
  }
  return out;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return resolve_config(parse_manifest(text).config);
  return resolve_config(parse_ini(text));
}

void apply_override(ConfigMap& entries, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError({"override '" + assignment + "': expected key=value"});
  const std::string key = trim(assignment.substr(0, eq));
  if (!default_config().contains(key)) throw ConfigError({key + ": unknown key"});
  entries[key] = trim(assignment.substr(eq + 1));
}

const std::vector<PresetInfo>& presets() {
  static const std::vector<PresetInfo> table = {
      {"example1", "directional transport, sigma = 1, ball source r0 = 1, g = 0", "Example 1"},
      {"example2", "beam from the left edge shadowed by an absorbing ball (sigma = 50)", "Example 2"},
      {"example3-isotropic", "scattering dominated (sigma_A = 0.1, sigma_T = 9.9), isotropic kernel, g = 1",
       "Example 3"},
      {"example3-forward", "scattering dominated, forward-peaked kernel, g = 1", "Example 3"},
      {"example4", "noisy discontinuous inflow on the left edge (std 0.05)", "Example 4"},
      {"example5", "heterogeneous absorption 0.1 | 5 split at x1 = 0.5, g = 1", "Example 5"},
      {"manufactured", "u* = sin(pi x1) sin(pi x2), sigma_A = 1, error against u*", "verification"},
      {"oracle-verify", "linear-basis Uzawa identities to machine precision", "verification"},
  };
  return table;
}

ConfigMap expand_preset(const std::string& name) {
  ConfigMap m{{"experiment.name", name}};
  const auto scattering = [&] {
    m["quadrature.interior.scheme"] = "hybrid";
    m["quadrature.interior.n_points"] = "2000";
    m["quadrature.batch"] = "32";
  };
  if (name == "example1") {
    m["problem.source.kind"] = "ball";
    m["problem.source.radius"] = "1";
    m["problem.inflow.value"] = "0";
    m["outputs.slices"] = "0,1.5707963267948966,3.141592653589793,4.71238898038469";
  } else if (name == "example2") {
    m["problem.sigma_a.kind"] = "ball";
    m["problem.inflow.kind"] = "beam";
    m["problem.inflow.value"] = "1";
    m["quadrature.boundary.n_along"] = "12";
    m["quadrature.boundary.n_angles"] = "24";
    m["uzawa.n_outer"] = "10";
    m["uzawa.n_inner"] = "400";
  } else if (name == "example3-isotropic" || name == "example3-forward") {
    m["problem.sigma_a.value"] = "0.1";
    m["problem.sigma_t"] = "9.9";
    m["problem.inflow.value"] = "1";
    m["problem.kernel"] = name == "example3-forward" ? "forward-peaked" : "isotropic";
    m["problem.kernel_epsilon"] = "0.1";
    scattering();
    m["uzawa.n_outer"] = "10";
    m["uzawa.n_inner"] = "400";
  } else if (name == "example4") {
    m["problem.inflow.kind"] = "left-edge";
    m["problem.inflow.value"] = "1";
    m["problem.noise.std"] = "0.05";
    m["problem.noise.seed"] = "2024";
    m["problem.noise.edge"] = "left";
    m["uzawa.n_outer"] = "10";
    m["uzawa.n_inner"] = "400";
  } else if (name == "example5") {
    m["problem.sigma_a.kind"] = "split";
    m["problem.inflow.value"] = "1";
    m["uzawa.n_outer"] = "10";
    m["uzawa.n_inner"] = "400";
  } else if (name == "manufactured") {
    m["problem.source.kind"] = "manufactured";
    m["problem.inflow.kind"] = "manufactured";
    m["evaluation.reference"] = "manufactured";
    scattering();
  } else if (name == "oracle-verify") {
    m["experiment.mode"] = "oracle";
  } else {
    std::vector<std::string> names;
    for (const PresetInfo& p : presets()) names.push_back(p.name);
    throw ConfigError({"unknown preset '" + name + "' (" + join(names, ", ") + ")"});
  }
  return m;
}

std::string list_presets_table() {
  std::ostringstream os;
  os << std::left << std::setw(20) << "preset" << std::setw(14) << "maps to" << "description\n";
  for (const PresetInfo& p : presets())
    os << std::left << std::setw(20) << p.name << std::setw(14) << p.example_tag << p.description << '\n';
  return os.str();
}

ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                std::ostream* log) {
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  RunManifest manifest;
  manifest.config = config.flat;

  ExperimentResult result;
  result.out_dir = out_dir;
  try {
    std::filesystem::create_directories(out_dir);
  } catch (const std::filesystem::filesystem_error& e) {
    throw IoError("cannot create output directory " + out_dir.string() + ": " + e.what());
  }

  if (config.mode == RunMode::Oracle) {
    result = run_oracle(config, out_dir, log, manifest);
    result.manifest.wall_clock_seconds = elapsed();
    emit_manifest(out_dir / "manifest.json", result.manifest);
    return result;
  }

  const ProblemSpec& problem = config.problem;
  const QuadratureSet quad = build_quadrature(problem.domain, config.quadrature);
  if (config.outputs.quadrature_dump) write_quadrature_csv(out_dir / "quadrature.csv", quad);
  MlpParams params = init_params(config.widths, config.activation, derive_seed(config.seed, 11), config.embedding);

  std::vector<MetricsRow> rows;
  const auto on_row = [&](const MetricsRow& row) {
    rows.push_back(row);
    if (log && row.inner == -1) *log << describe_row(row) << '\n' << std::flush;
  };
  RunState state;
  try {
    state = run(problem, quad, config.uzawa, config.lagrangian, std::move(params), derive_seed(config.seed, 12),
                on_row);
  } catch (const NumericalError& e) {
    emit_metrics(out_dir / "metrics.csv", rows);
    manifest.status = std::string("aborted: ") + e.what();
    manifest.wall_clock_seconds = elapsed();
    emit_manifest(out_dir / "manifest.json", manifest);
    if (log) *log << "numerical abort: " << e.what() << '\n';
    result.exit_code = kExitNumerical;
    result.manifest = manifest;
    return result;
  }
  const double train_seconds = elapsed();
  emit_metrics(out_dir / "metrics.csv", rows);

  QuadratureSpec eval_spec;
  eval_spec.interior = InteriorSpec{Scheme::TensorGauss, 0, config.evaluation.nx, config.evaluation.nx};
  eval_spec.boundary = BoundarySpec{Scheme::TensorGauss, 0, 16, 16};
  eval_spec.n_angles = config.evaluation.n_angles;
  eval_spec.with_outflow = true;
  const QuadratureSet eval_quad = build_quadrature(problem.domain, eval_spec);
  std::optional<ReferenceField> reference;
  if (config.evaluation.manufactured_reference) reference = manufactured_reference();
  const NormReport norms = discrete_norms(state.params, eval_quad, problem, reference, true);

  const GridSpec grid{config.outputs.grid_nx, config.outputs.grid_ny, problem.domain};
  const FieldGrid flux = scalar_flux(state.params, grid, eval_quad.angular);
  emit_grid(out_dir / "scalar_flux.csv", flux);
  for (double theta : config.outputs.slices)
    emit_grid(out_dir / slice_name(theta), angular_slice(state.params, grid, theta));
  emit_boundary_trace(out_dir / "boundary_trace.csv", state.params, quad.boundary, state.multiplier.g());
  if (config.outputs.checkpoint) write_checkpoint(out_dir / "checkpoint.uzmlp", state.params);

  const MetricsRow& first = rows.front();
  const MetricsRow& last = rows.back();
  auto& fm = manifest.final_metrics;
  fm["loss_total"] = last.parts.value();
  fm["loss_pde"] = last.parts.pde;
  fm["loss_boundary"] = last.parts.boundary_penalty;
  fm["loss_multiplier"] = last.parts.multiplier_term;
  fm["boundary_residual"] = last.boundary_residual;
  fm["initial_boundary_residual"] = first.boundary_residual;
  fm["lambda_norm"] = state.multiplier.norm();
  fm["eval_pde_residual_norm"] = norms.pde_residual_norm;
  fm["eval_boundary_residual_norm"] = norms.boundary_residual_norm;
  fm["eval_v_norm"] = norms.v_norm;
  fm["eval_triple_norm"] = norms.triple_norm;
  if (reference) {
    fm["relative_l2_error"] = relative_l2_error(state.params, eval_quad, *reference);
    fm["error_l2"] = norms.l2_interior;
  }
  const double eps = 1e-9;
  fm["flux_mean_x1_below_0.4"] = flux.box_mean(0.0, 0.4 - eps, 0.0, 1.0);
  fm["flux_mean_x1_above_0.6"] = flux.box_mean(0.6 + eps, 1.0, 0.0, 1.0);
  fm["flux_mean_shadow_box"] = flux.box_mean(0.7, 0.9, 0.4, 0.6);
  fm["flux_mean_lit_box"] = flux.box_mean(0.1, 0.3, 0.4, 0.6);
  fm["train_seconds"] = train_seconds;
  manifest.wall_clock_seconds = elapsed();
  emit_manifest(out_dir / "manifest.json", manifest);
  if (log) {
    *log << std::setprecision(6) << "done in " << manifest.wall_clock_seconds << " s";
    if (reference) *log << ", relative L2 error " << fm["relative_l2_error"];
    *log << '\n';
  }
  result.manifest = manifest;
  return result;
}

}  // namespace deepuzawa
