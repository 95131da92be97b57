#include "deepuzawa/network.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "deepuzawa/file_io.hpp"

namespace deepuzawa {

namespace {

constexpr char kMagic[6] = {'U', 'Z', 'M', 'L', 'P', '1'};

double activate(Activation a, double z) {
  switch (a) {
    case Activation::Tanh: return std::tanh(z);
    case Activation::Gelu: return 0.5 * z * std::erfc(-z / std::numbers::sqrt2);
    case Activation::Silu: return z / (1.0 + std::exp(-z));
  }
  return z;
}

void check_widths(std::span<const int> widths) {
  require(widths.size() >= 3, "network needs depth L >= 2 (at least one hidden layer)");
  for (int w : widths) require(w > 0, "network widths must be positive");
  require(widths.back() == 1, "network output width must be 1");
}

template <class T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>,
                                                    std::conditional_t<sizeof(T) == 8, std::int64_t,
                                                                       std::int32_t>,
                                                    T>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& data, const std::filesystem::path& path) : data_(data), path_(path) {}

  template <class T>
  T get() {
    using U = std::make_unsigned_t<std::conditional_t<
        std::is_floating_point_v<T>, std::conditional_t<sizeof(T) == 8, std::int64_t, std::int32_t>, T>>;
    if (pos_ + sizeof(U) > data_.size()) throw IoError("truncated checkpoint: " + path_.string());
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      bits |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  std::string bytes(std::size_t n) {
    if (pos_ + n > data_.size()) throw IoError("truncated checkpoint: " + path_.string());
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Gelu: return "gelu";
    case Activation::Silu: return "silu";
  }
  return "?";
}

Activation parse_activation(std::string_view tag) {
  if (tag == "tanh") return Activation::Tanh;
  if (tag == "gelu") return Activation::Gelu;
  if (tag == "silu") return Activation::Silu;
  throw ContractViolation("unknown activation '" + std::string(tag) + "' (tanh | gelu | silu)");
}

std::string_view to_string(AngleEmbedding e) {
  return e == AngleEmbedding::CosSin ? "cos-sin" : "raw-angle";
}

AngleEmbedding parse_embedding(std::string_view tag) {
  if (tag == "cos-sin") return AngleEmbedding::CosSin;
  if (tag == "raw-angle") return AngleEmbedding::RawAngle;
  throw ContractViolation("unknown embedding '" + std::string(tag) + "' (cos-sin | raw-angle)");
}

int embedding_dimension(AngleEmbedding e) { return e == AngleEmbedding::CosSin ? 4 : 3; }

std::size_t parameter_count(std::span<const int> widths) {
  std::size_t p = 0;
  for (std::size_t l = 1; l < widths.size(); ++l)
    p += static_cast<std::size_t>(widths[l]) * static_cast<std::size_t>(widths[l - 1] + 1);
  return p;
}

MlpParams::MlpParams(std::vector<int> widths, Activation activation, AngleEmbedding embedding)
    : widths_(std::move(widths)), activation_(activation), embedding_(embedding) {
  check_widths(widths_);
  require(widths_.front() == embedding_dimension(embedding_),
          "first width must equal the embedding dimension (" +
              std::to_string(embedding_dimension(embedding_)) + " for " +
              std::string(to_string(embedding_)) + ")");
  for (std::size_t l = 1; l < widths_.size(); ++l)
    layers_.push_back(Layer{Eigen::MatrixXd::Zero(widths_[l], widths_[l - 1]),
                            Eigen::VectorXd::Zero(widths_[l])});
}

Eigen::VectorXd MlpParams::flatten() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(size()));
  Eigen::Index k = 0;
  for (const Layer& layer : layers_) {
    flat.segment(k, layer.weight.size()) = layer.weight.reshaped();
    k += layer.weight.size();
    flat.segment(k, layer.bias.size()) = layer.bias;
    k += layer.bias.size();
  }
  return flat;
}

void MlpParams::assign(const Eigen::VectorXd& flat) {
  require(static_cast<std::size_t>(flat.size()) == size(),
          "parameter vector has length " + std::to_string(flat.size()) + ", expected " +
              std::to_string(size()));
  Eigen::Index k = 0;
  for (Layer& layer : layers_) {
    layer.weight.reshaped() = flat.segment(k, layer.weight.size());
    k += layer.weight.size();
    layer.bias = flat.segment(k, layer.bias.size());
    k += layer.bias.size();
  }
}

MlpParams MlpParams::unflatten(std::vector<int> widths, Activation activation,
                               AngleEmbedding embedding, const Eigen::VectorXd& flat) {
  MlpParams p(std::move(widths), activation, embedding);
  p.assign(flat);
  return p;
}

MlpParams init_params(std::vector<int> widths, Activation activation, std::uint64_t seed,
                      AngleEmbedding embedding) {
  MlpParams p(std::move(widths), activation, embedding);
  std::mt19937_64 rng(seed);
  for (Layer& layer : p.layers()) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = dist(rng);
  }
  return p;
}

Eigen::VectorXd embed(const PhasePoint& point, AngleEmbedding embedding) {
  if (embedding == AngleEmbedding::CosSin)
    return Eigen::Vector4d(point.x[0], point.x[1], point.omega[0], point.omega[1]);
  return Eigen::Vector3d(point.x[0], point.x[1], point.angle);
}

Eigen::MatrixXd embed_batch(std::span<const PhasePoint> points, AngleEmbedding embedding) {
  Eigen::MatrixXd m(embedding_dimension(embedding), static_cast<Eigen::Index>(points.size()));
  for (std::size_t j = 0; j < points.size(); ++j)
    m.col(static_cast<Eigen::Index>(j)) = embed(points[j], embedding);
  return m;
}

Eigen::MatrixXd embed_spatial_tangent(std::span<const PhasePoint> points, AngleEmbedding embedding) {
  Eigen::MatrixXd m =
      Eigen::MatrixXd::Zero(embedding_dimension(embedding), static_cast<Eigen::Index>(points.size()));
  for (std::size_t j = 0; j < points.size(); ++j) {
    m(0, static_cast<Eigen::Index>(j)) = points[j].omega[0];
    m(1, static_cast<Eigen::Index>(j)) = points[j].omega[1];
  }
  return m;
}

Eigen::RowVectorXd eval_batch(const MlpParams& params, std::span<const PhasePoint> points) {
  require(params.depth() > 0, "eval on an empty network");
  Eigen::MatrixXd h = embed_batch(points, params.embedding());
  const auto& layers = params.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd z = layers[l].weight * h;
    z.colwise() += layers[l].bias;
    if (l + 1 < layers.size())
      h = z.unaryExpr([a = params.activation()](double v) { return activate(a, v); });
    else
      h = std::move(z);
  }
  return h.row(0);
}

double eval(const MlpParams& params, const PhasePoint& point) {
  return eval_batch(params, std::span<const PhasePoint>(&point, 1))(0);
}

ad::NodeId record_network(ad::Tape& tape, const MlpParams& params, ad::NodeId input,
                          std::size_t offset) {
  require(tape.value(input).rows() == params.widths().front(),
          "network input has " + std::to_string(tape.value(input).rows()) + " rows, expected " +
              std::to_string(params.widths().front()));
  ad::NodeId h = input;
  const auto& layers = params.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const ad::NodeId w = tape.parameter(offset, layers[l].weight);
    offset += static_cast<std::size_t>(layers[l].weight.size());
    const ad::NodeId b = tape.parameter(offset, layers[l].bias);
    offset += static_cast<std::size_t>(layers[l].bias.size());
    h = tape.add_column(tape.matmul(w, h), b);
    if (l + 1 == layers.size()) break;
    switch (params.activation()) {
      case Activation::Tanh: h = tape.tanh(h); break;
      case Activation::Gelu: h = tape.gelu(h); break;
      case Activation::Silu: h = tape.silu(h); break;
    }
  }
  return h;
}

ValueAndDirectional eval_with_spatial_directional(const MlpParams& params, const PhasePoint& point,
                                                  const Vec2& direction) {
  require(std::abs(direction.norm() - 1.0) <= 1e-12, "direction must be a unit vector");
  const Eigen::VectorXd x = embed(point, params.embedding());
  Eigen::VectorXd dx = Eigen::VectorXd::Zero(x.size());
  dx.head<2>() = direction;
  ad::Tape tape(params.size());
  const auto r = ad::record_forward(
      tape, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
      std::span<const double>(dx.data(), static_cast<std::size_t>(dx.size())),
      [&](ad::Tape& t, ad::NodeId in) { return record_network(t, params, in); });
  return {r.value, r.directional};
}

void write_checkpoint(const std::filesystem::path& path, const MlpParams& params) {
  std::string out(kMagic, sizeof(kMagic));
  out.push_back(static_cast<char>(params.activation()));
  out.push_back(static_cast<char>(params.embedding()));
  put_le(out, static_cast<std::uint32_t>(params.widths().size()));
  for (int w : params.widths()) put_le(out, static_cast<std::uint32_t>(w));
  const Eigen::VectorXd flat = params.flatten();
  put_le(out, static_cast<std::uint64_t>(flat.size()));
  for (double v : flat) put_le(out, v);
  write_file_atomic(path, out);
}

MlpParams read_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  Reader in(data, path);
  if (in.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw IoError("not a UZMLP1 checkpoint: " + path.string());
  const auto act = static_cast<unsigned char>(in.bytes(1)[0]);
  const auto emb = static_cast<unsigned char>(in.bytes(1)[0]);
  if (act > 2 || emb > 1) throw IoError("bad checkpoint header: " + path.string());
  const auto n = in.get<std::uint32_t>();
  if (n > 64) throw IoError("bad checkpoint header: " + path.string());
  std::vector<int> widths(n);
  for (auto& w : widths) w = static_cast<int>(in.get<std::uint32_t>());
  const auto p = in.get<std::uint64_t>();
  if (p != parameter_count(widths)) throw IoError("checkpoint size mismatch: " + path.string());
  Eigen::VectorXd flat(static_cast<Eigen::Index>(p));
  for (auto& v : flat) v = in.get<double>();
  if (!in.done()) throw IoError("trailing bytes in checkpoint: " + path.string());
  return MlpParams::unflatten(std::move(widths), static_cast<Activation>(act),
                              static_cast<AngleEmbedding>(emb), flat);
}

}  // namespace deepuzawa
