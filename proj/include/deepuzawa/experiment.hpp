#pragma once

// Experiment configuration (flat dotted keys), presets and the run driver
// behind the command-line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "deepuzawa/diagnostics.hpp"
#include "deepuzawa/kinetic_ops.hpp"
#include "deepuzawa/lagrangian.hpp"
#include "deepuzawa/network.hpp"
#include "deepuzawa/phase_space.hpp"
#include "deepuzawa/uzawa.hpp"

namespace deepuzawa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitIo = 4;

using ConfigMap = std::map<std::string, std::string>;

/// Every violation found while validating a config, not just the first.
class ConfigError : public ContractViolation {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

enum class RunMode { Train, Oracle };

struct EvaluationSpec {
  std::size_t nx = 24;        // tensor Gauss points per axis for final norms
  std::size_t n_angles = 32;
  bool manufactured_reference = false;
};

struct OutputSpec {
  std::size_t grid_nx = 101;
  std::size_t grid_ny = 101;
  std::vector<double> slices{0.0};
  bool checkpoint = true;
  bool quadrature_dump = false;
};

struct OracleSpec {
  double sigma_a = 1.0;
  double sigma_t = 0.5;
  double gamma = 1.0;
  double rho = 1.0;
  int n_iter = 200;
};

struct ExperimentConfig {
  ConfigMap flat;  // fully resolved key map, the source of truth for manifests
  std::string name;
  RunMode mode = RunMode::Train;
  std::uint64_t seed = 0;
  ProblemSpec problem;
  QuadratureSpec quadrature;
  LagrangianConfig lagrangian;
  std::vector<int> widths;
  Activation activation = Activation::Tanh;
  AngleEmbedding embedding = AngleEmbedding::CosSin;
  UzawaConfig uzawa;
  EvaluationSpec evaluation;
  OutputSpec outputs;
  OracleSpec oracle;
};

/// All keys with their default values.
const ConfigMap& default_config();

/// Defaults overlaid with `entries`; unknown keys and invalid values are
/// collected and thrown together as ConfigError.
ExperimentConfig resolve_config(const ConfigMap& entries);

/// INI text: [section] headers, key = value lines, ';' or '#' comments.
/// Keys become "section.key". Syntax errors carry the line number.
ConfigMap parse_ini(const std::string& text);

/// INI config file or a run manifest (JSON, detected by a leading '{').
ExperimentConfig parse_config(const std::filesystem::path& path);

/// "key=value" into the map; the key must exist in the schema.
void apply_override(ConfigMap& entries, const std::string& assignment);

struct PresetInfo {
  std::string name;
  std::string description;
  std::string example_tag;
};

const std::vector<PresetInfo>& presets();
/// Entries that differ from the defaults for the named preset.
ConfigMap expand_preset(const std::string& name);
std::string list_presets_table();

struct ExperimentResult {
  int exit_code = kExitOk;
  RunManifest manifest;
  std::filesystem::path out_dir;
};

/// Runs the experiment and writes manifest.json, metrics.csv and the grids
/// into `out_dir`. Numerical aborts still write partial outputs.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                std::ostream* log = nullptr);

}  // namespace deepuzawa
