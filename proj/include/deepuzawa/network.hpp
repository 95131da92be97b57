#pragma once

// Fully-connected trial network u_theta(x, omega) with smooth activation.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "deepuzawa/autodiff.hpp"
#include "deepuzawa/phase_space.hpp"

namespace deepuzawa {

enum class Activation { Tanh, Gelu, Silu };
enum class AngleEmbedding { CosSin, RawAngle };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view tag);
std::string_view to_string(AngleEmbedding e);
AngleEmbedding parse_embedding(std::string_view tag);

/// Number of network inputs produced by the embedding: (x1, x2, cos, sin) or (x1, x2, angle).
int embedding_dimension(AngleEmbedding e);

struct Layer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

/// P = sum_l (d_l * d_{l-1} + d_l).
std::size_t parameter_count(std::span<const int> widths);

class MlpParams {
 public:
  MlpParams() = default;
  /// Zero parameters for the given profile.
  MlpParams(std::vector<int> widths, Activation activation,
            AngleEmbedding embedding = AngleEmbedding::CosSin);

  const std::vector<int>& widths() const { return widths_; }
  Activation activation() const { return activation_; }
  AngleEmbedding embedding() const { return embedding_; }
  std::size_t depth() const { return layers_.size(); }
  std::size_t size() const { return parameter_count(widths_); }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  /// Layer-by-layer, weight (column-major) then bias.
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  static MlpParams unflatten(std::vector<int> widths, Activation activation,
                             AngleEmbedding embedding, const Eigen::VectorXd& flat);

 private:
  std::vector<int> widths_;
  Activation activation_ = Activation::Tanh;
  AngleEmbedding embedding_ = AngleEmbedding::CosSin;
  std::vector<Layer> layers_;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases; deterministic in `seed`.
MlpParams init_params(std::vector<int> widths, Activation activation, std::uint64_t seed,
                      AngleEmbedding embedding = AngleEmbedding::CosSin);

Eigen::VectorXd embed(const PhasePoint& point, AngleEmbedding embedding);
/// Embedding of many points, one column each.
Eigen::MatrixXd embed_batch(std::span<const PhasePoint> points, AngleEmbedding embedding);
/// Tangent of the embedding when x moves along `omega` (the angle stays fixed).
Eigen::MatrixXd embed_spatial_tangent(std::span<const PhasePoint> points, AngleEmbedding embedding);

double eval(const MlpParams& params, const PhasePoint& point);
/// Plain forward pass over a batch; no tape.
Eigen::RowVectorXd eval_batch(const MlpParams& params, std::span<const PhasePoint> points);

struct ValueAndDirectional {
  double u = 0.0;
  double du = 0.0;
};

/// u and the derivative of u along `direction` in x, through the autodiff tape.
ValueAndDirectional eval_with_spatial_directional(const MlpParams& params, const PhasePoint& point,
                                                  const Vec2& direction);

/// Records the network on `tape` applied to `input` (d_0 x B). Parameter
/// slots follow `flatten()` order starting at `offset`.
ad::NodeId record_network(ad::Tape& tape, const MlpParams& params, ad::NodeId input,
                          std::size_t offset = 0);

/// Binary checkpoint: magic "UZMLP1", activation, embedding, widths, then the
/// flat parameter vector, all little-endian (float64 for values).
void write_checkpoint(const std::filesystem::path& path, const MlpParams& params);
MlpParams read_checkpoint(const std::filesystem::path& path);

}  // namespace deepuzawa
