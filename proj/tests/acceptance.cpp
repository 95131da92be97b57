// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//   acceptance [--only 3,5] [--out DIR]

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <omp.h>

#include <CLI11.hpp>

#include "deepuzawa/experiment.hpp"
#include "deepuzawa/file_io.hpp"
#include "deepuzawa/linear_oracle.hpp"

using namespace deepuzawa;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double budget_seconds;
  std::function<Outcome()> body;
};

std::filesystem::path g_out;

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3) << v;
  return os.str();
}

Outcome oracle_checks(const std::vector<std::string>& prefixes) {
  Outcome o{true, ""};
  int n = 0;
  for (const OracleCheck& c : verify_oracle_suite()) {
    bool match = false;
    for (const auto& p : prefixes) match |= c.name.rfind(p, 0) == 0;
    if (!match) continue;
    ++n;
    if (!c.passed) {
      o.passed = false;
      o.detail += c.name + " [" + c.detail + "] ";
    }
  }
  if (n == 0) return {false, "no matching checks"};
  if (o.passed) o.detail = std::to_string(n) + " checks";
  return o;
}

Outcome oracle_identities() {
  return oracle_checks({"residual identity", "multiplier distance recursion", "telescoping bound",
                        "monotone multiplier distance"});
}

Outcome strong_regime() {
  if (!check_strong_regime(1.0, 0.1, 1.0, 2.0).valid) return {false, "regime check rejects the setup"};
  return oracle_checks({"strong regime"});
}

Outcome gradient_exactness() {
  QuadratureSpec spec;
  spec.interior = InteriorSpec{Scheme::TensorGauss, 0, 2, 2};
  spec.boundary = BoundarySpec{Scheme::TensorGauss, 0, 2, 4};
  spec.n_angles = 8;
  const QuadratureSet q = build_quadrature(Domain(), spec);

  ProblemSpec p;
  p.sigma_a.kind = CoefficientKind::Split;
  p.sigma_t = 1.0;
  p.kernel = ScatteringKernel{KernelKind::ForwardPeaked, 0.5};
  p.source.kind = SourceKind::Ball;
  p.source.radius = 0.4;
  p.inflow.value = 1.0;

  const MlpParams net = init_params({4, 8, 8, 1}, Activation::Tanh, 17);
  MultiplierField m = make_multiplier(p, q.boundary);
  std::mt19937_64 rng(18);
  std::normal_distribution<double> normal;
  for (auto& v : m.values()) v = normal(rng);
  LagrangianConfig c;
  c.gamma = 1.0;

  const Eigen::VectorXd g = gradient(net, m, q, p, c);
  const Eigen::VectorXd theta = net.flatten();
  Eigen::VectorXd fd(theta.size());
  MlpParams work = net;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd t = theta;
    t(i) += h;
    work.assign(t);
    const double plus = assemble(work, m, q, p, c).value();
    t(i) -= 2 * h;
    work.assign(t);
    fd(i) = (plus - assemble(work, m, q, p, c).value()) / (2 * h);
  }
  const double rel = (g - fd).norm() / fd.norm();
  return {rel <= 1e-5, "rel err " + sci(rel) + " over " + std::to_string(theta.size()) + " parameters"};
}

Outcome scattering_suite() {
  const AngularRule r = trapezoid_circle(32);
  const DiscreteKernel iso(ScatteringKernel{}, r);
  double worst_const = 0, worst_cos = 0, worst_mu = 0;
  for (const ScatteringKernel& k : {ScatteringKernel{}, ScatteringKernel{KernelKind::ForwardPeaked, 0.1}}) {
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(r.size()));
    worst_const = std::max(worst_const, scattering_apply(3.5 * one, DiscreteKernel(k, r), 2.0).cwiseAbs().maxCoeff());
  }
  const double sigma_t = 0.7;
  for (int n = 1; n <= 3; ++n) {
    Eigen::VectorXd u(static_cast<Eigen::Index>(r.size()));
    for (std::size_t j = 0; j < r.size(); ++j) u(static_cast<Eigen::Index>(j)) = std::cos(n * r.angle[j]);
    worst_cos = std::max(worst_cos, (scattering_apply(u, iso, sigma_t) - sigma_t * u).cwiseAbs().maxCoeff());
  }
  worst_mu = std::max({std::abs(legendre_eigenvalue(0, ScatteringKernel{}, sigma_t)),
                       std::abs(legendre_eigenvalue(1, ScatteringKernel{}, sigma_t) - sigma_t),
                       std::abs(legendre_eigenvalue(2, ScatteringKernel{}, sigma_t) - sigma_t)});
  const bool ok = worst_const <= 1e-12 && worst_cos <= 1e-8 && worst_mu <= 1e-10;
  return {ok, "constants " + sci(worst_const) + ", cos n theta " + sci(worst_cos) + ", mu_n " + sci(worst_mu)};
}

Outcome mc_consistency() {
  ProblemSpec p;
  p.source.kind = SourceKind::Constant;
  p.inflow.value = 1.0;
  const MlpParams net = init_params({4, 16, 16, 1}, Activation::Tanh, 21);
  const LagrangianConfig c;

  QuadratureSpec ref_spec;
  ref_spec.interior = InteriorSpec{Scheme::TensorGauss, 0, 48, 48};
  ref_spec.boundary = BoundarySpec{Scheme::TensorGauss, 0, 16, 16};
  ref_spec.n_angles = 64;
  const QuadratureSet ref = build_quadrature(Domain(), ref_spec);
  MultiplierField lambda = make_multiplier(p, ref.boundary);
  for (std::size_t i = 0; i < ref.boundary.size(); ++i) {
    const PhasePoint& pt = ref.boundary[i].point.point;
    lambda.values()(static_cast<Eigen::Index>(i)) = std::cos(pt.x.x() + 2 * pt.x.y()) + 0.5 * std::sin(pt.angle);
  }
  const double exact = assemble(net, lambda, ref, p, c).value();

  std::vector<double> lx, ly;
  std::string detail;
  for (std::size_t n : {100, 1000, 10000, 100000}) {
    double sum = 0;
    for (int s = 0; s < 20; ++s) {
      QuadratureSet q = ref;
      InteriorSpec is{Scheme::MonteCarlo, n, 0, 0};
      q.interior = sample_interior(Domain(), is, ref.angular, derive_seed(1000 + s, n));
      sum += std::abs(assemble(net, lambda, q, p, c).value() - exact);
    }
    lx.push_back(std::log(static_cast<double>(n)));
    ly.push_back(std::log(sum / 20));
    detail += "N=" + std::to_string(n) + ":" + sci(sum / 20) + " ";
  }
  const double mx = (lx[0] + lx[1] + lx[2] + lx[3]) / 4, my = (ly[0] + ly[1] + ly[2] + ly[3]) / 4;
  double sxy = 0, sxx = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  const double slope = sxy / sxx;
  return {std::abs(slope + 0.5) <= 0.15, "slope " + sci(slope) + "; " + detail};
}

Outcome gd_suboptimality() { return oracle_checks({"gradient descent suboptimality bound"}); }

ExperimentResult run_preset(const std::string& name, const ConfigMap& overrides, const std::string& dir) {
  ConfigMap m = expand_preset(name);
  for (const auto& [k, v] : overrides) m[k] = v;
  return run_experiment(resolve_config(m), g_out / dir, &std::cout);
}

Outcome manufactured() {
  Outcome o{true, ""};
  for (const char* st : {"0", "1"}) {
    const ExperimentResult r = run_preset("manufactured", {{"problem.sigma_t", st}}, std::string("manufactured_st") + st);
    if (r.exit_code != kExitOk) return {false, std::string("sigma_t=") + st + " exited " + std::to_string(r.exit_code)};
    const auto& f = r.manifest.final_metrics;
    const double err = f.at("relative_l2_error");
    const double br = f.at("boundary_residual"), br0 = f.at("initial_boundary_residual");
    const bool ok = err <= 5e-2 && br <= 0.1 * br0;
    o.passed = o.passed && ok;
    o.detail += std::string("sigma_t=") + st + ": rel L2 " + sci(err) + ", boundary " + sci(br) + " vs 0.1x" +
                sci(br0) + "; ";
  }
  return o;
}

Outcome example2_shadow() {
  const ExperimentResult r = run_preset("example2", {}, "example2");
  if (r.exit_code != kExitOk) return {false, "exit " + std::to_string(r.exit_code)};
  const double shadow = r.manifest.final_metrics.at("flux_mean_shadow_box");
  const double lit = r.manifest.final_metrics.at("flux_mean_lit_box");
  return {shadow < 0.5 * lit, "shadow " + sci(shadow) + ", lit " + sci(lit)};
}

Outcome example5_attenuation() {
  const ExperimentResult r = run_preset("example5", {}, "example5");
  if (r.exit_code != kExitOk) return {false, "exit " + std::to_string(r.exit_code)};
  const double right = r.manifest.final_metrics.at("flux_mean_x1_above_0.6");
  const double left = r.manifest.final_metrics.at("flux_mean_x1_below_0.4");
  return {right < left, "x1>0.6 " + sci(right) + ", x1<0.4 " + sci(left)};
}

Outcome reproducibility() {
  // every preset, shrunk, run on all threads and then replayed from its manifest on one
  const ConfigMap shrink{{"quadrature.interior.n_points", "256"}, {"quadrature.interior.nx", "4"},
                         {"quadrature.interior.ny", "4"},         {"quadrature.batch", "32"},
                         {"quadrature.boundary.n_points", "64"},  {"quadrature.boundary.n_along", "6"},
                         {"quadrature.boundary.n_angles", "6"},   {"network.widths", "4,16,16,1"},
                         {"uzawa.n_outer", "2"},                  {"uzawa.n_inner", "10"},
                         {"outputs.grid_nx", "11"},               {"outputs.grid_ny", "11"},
                         {"evaluation.nx", "6"},                  {"evaluation.n_angles", "8"},
                         {"oracle.n_iter", "50"}};
  Outcome o{true, ""};
  const int procs = omp_get_num_procs();
  for (const PresetInfo& p : presets()) {
    const auto a = g_out / "repro" / p.name, b = g_out / "repro" / (p.name + "_replay");
    omp_set_num_threads(std::max(procs, 4));
    ConfigMap m = expand_preset(p.name);
    for (const auto& [k, v] : shrink) m[k] = v;
    const ExperimentResult first = run_experiment(resolve_config(m), a);
    omp_set_num_threads(1);
    const ExperimentResult second = run_experiment(parse_config(a / "manifest.json"), b);
    const std::string file = resolve_config(m).mode == RunMode::Oracle ? "oracle.csv" : "metrics.csv";
    const bool same = first.exit_code == kExitOk && second.exit_code == kExitOk &&
                      read_file(a / file) == read_file(b / file);
    if (!same) o.detail += p.name + " differs; ";
    o.passed = o.passed && same;
  }
  omp_set_num_threads(procs);
  if (o.passed) o.detail = std::to_string(presets().size()) + " presets replayed bit-for-bit";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep Uzawa acceptance suite"};
  std::vector<int> only;
  std::string out = (std::filesystem::temp_directory_path() / "deepuzawa_acceptance").string();
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--out", out, "scratch directory for run outputs");
  CLI11_PARSE(app, argc, argv);
  g_out = out;

  const std::vector<Criterion> all{
      {1, "oracle identity suite", 5, oracle_identities},
      {2, "strong-regime suite", 5, strong_regime},
      {3, "gradient exactness", 30, gradient_exactness},
      {4, "scattering operator suite", 5, scattering_suite},
      {5, "Monte Carlo consistency", 60, mc_consistency},
      {6, "suboptimality decay", 10, gd_suboptimality},
      {7, "manufactured solution end-to-end", 1200, manufactured},
      {8, "example 2 shadow", 600, example2_shadow},
      {9, "example 5 attenuation", 600, example5_attenuation},
      {10, "reproducibility from manifest", 0, reproducibility},
  };
  const std::set<int> wanted(only.begin(), only.end());

  std::vector<std::string> lines;
  bool all_ok = true;
  for (const Criterion& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.body();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) {
      o.passed = false;
      o.detail += " over the " + std::to_string(static_cast<int>(c.budget_seconds)) + " s budget";
    }
    std::ostringstream line;
    line << (o.passed ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.title << ", " << std::fixed
         << std::setprecision(1) << secs << " s): " << o.detail;
    std::cout << line.str() << std::endl;
    lines.push_back(line.str());
    all_ok = all_ok && o.passed;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << '\n';
  return all_ok ? 0 : 1;
}
