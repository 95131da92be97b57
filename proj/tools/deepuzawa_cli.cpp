// deepuzawa: train and inspect Deep Uzawa transport solvers.

#include <cstdlib>
#include <iostream>

#include <omp.h>

#include <CLI11.hpp>

#include "deepuzawa/experiment.hpp"
#include "deepuzawa/linear_oracle.hpp"

using namespace deepuzawa;

namespace {

std::filesystem::path default_out(const std::string& name) {
  if (const char* env = std::getenv("UZAWA_OUT_DIR"); env && *env) return std::filesystem::path(env) / name;
  return std::filesystem::path("runs") / name;
}

int execute(const ExperimentConfig& config, std::filesystem::path out) {
  if (out.empty()) out = default_out(config.name);
  std::cerr << "writing to " << out.string() << '\n';
  return run_experiment(config, out, &std::cerr).exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep Uzawa solver for stationary linear transport"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (default: runtime choice)")->check(CLI::PositiveNumber);

  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  auto* run_cmd = app.add_subcommand("run", "run the experiment described by an INI config or manifest");
  run_cmd->add_option("config", config_path, "config file")->required();
  run_cmd->add_option("--out", out_dir, "output directory");
  run_cmd->add_option("--override", overrides, "key=value, repeatable");

  std::string preset_name;
  auto* preset_cmd = app.add_subcommand("preset", "run a named preset");
  preset_cmd->add_option("name", preset_name, "preset name (see list-presets)")->required();
  preset_cmd->add_option("--out", out_dir, "output directory");
  preset_cmd->add_option("--seed", seed, "top-level seed");
  preset_cmd->add_option("--override", overrides, "key=value, repeatable");

  auto* list_cmd = app.add_subcommand("list-presets", "print the preset table");
  auto* verify_cmd = app.add_subcommand("verify", "check the linear-oracle identities");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*list_cmd) {
      std::cout << list_presets_table();
      return kExitOk;
    }
    if (*verify_cmd) {
      bool ok = true;
      for (const OracleCheck& c : verify_oracle_suite()) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << "  " << c.detail << '\n';
        ok = ok && c.passed;
      }
      return ok ? kExitOk : kExitNumerical;
    }
    if (*run_cmd) {
      ExperimentConfig base = parse_config(config_path);
      ConfigMap entries = base.flat;
      for (const std::string& o : overrides) apply_override(entries, o);
      return execute(resolve_config(entries), out_dir);
    }
    ConfigMap entries = expand_preset(preset_name);
    if (seed) entries["seed"] = std::to_string(*seed);
    for (const std::string& o : overrides) apply_override(entries, o);
    return execute(resolve_config(entries), out_dir);
  } catch (const ContractViolation& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  }
}
