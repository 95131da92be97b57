#pragma once

// Graph-based differentiation engine for the trial network.
//
// Every node carries a primal matrix P and a tangent matrix D = dP/de, where
// e perturbs the tape inputs along their seeded tangent. Columns are
// independent evaluation points, so one tape records a whole batch.
// Reverse mode propagates adjoints for both P and D, which gives exact
// parameter gradients of losses that contain the directional derivative
// (forward-over-reverse).

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "deepuzawa/errors.hpp"

namespace deepuzawa::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class OpKind {
  Input,
  Constant,
  Parameter,
  MatMul,
  AddColumn,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  Tanh,
  Gelu,
  Silu,
  Exp,
  Sin,
  Cos,
  Pow,
  Contract,
  Directional,
  Sum,
};

const char* op_name(OpKind op);

/// Raised when a primitive leaves its domain or produces a non-finite value.
class EvaluationError : public NumericalError {
 public:
  EvaluationError(std::size_t node, OpKind op, const std::string& detail);
  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

/// Adjoint seed for one output node. An empty matrix means "no seed" for
/// that half; otherwise the shape must match the node.
struct Seed {
  NodeId node;
  Matrix primal_adjoint;
  Matrix tangent_adjoint;
};

class Tape {
 public:
  explicit Tape(std::size_t n_params = 0) : n_params_(n_params) {}

  NodeId input(Matrix value, Matrix tangent);
  NodeId input(Matrix value);
  NodeId constant(Matrix value);
  /// Registers a parameter block occupying flat slots [offset, offset + rows*cols)
  /// in column-major order.
  NodeId parameter(std::size_t offset, Matrix value);

  NodeId matmul(NodeId a, NodeId b);
  /// x + c * 1^T, with c a column vector.
  NodeId add_column(NodeId x, NodeId column);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId tanh(NodeId a);
  NodeId gelu(NodeId a);
  NodeId silu(NodeId a);
  NodeId exp(NodeId a);
  NodeId sin(NodeId a);
  NodeId cos(NodeId a);
  NodeId pow(NodeId a, double exponent);
  /// x * C for a constant sparse C (angular mixing, column selection).
  NodeId contract(NodeId x, std::shared_ptr<const SparseMatrix> c);
  /// Promotes the tangent of x to a primal value.
  NodeId directional(NodeId x);
  /// 1x1 sum of all entries.
  NodeId sum(NodeId x);

  const Matrix& value(NodeId id) const { return at(id).value; }
  /// Tangent by value; structurally zero tangents are materialized here.
  Matrix tangent(NodeId id) const;
  bool tangent_is_zero(NodeId id) const { return at(id).tangent_zero; }
  OpKind op(NodeId id) const { return at(id).op; }

  std::size_t size() const { return nodes_.size(); }
  std::size_t n_params() const { return n_params_; }

  /// d(sum_i <seed_i, output_i>)/d(theta) for every registered parameter slot.
  Vector reverse(std::span<const Seed> seeds) const;
  void reverse_accumulate(std::span<const Seed> seeds, Eigen::Ref<Vector> gradient) const;

 private:
  struct Node {
    OpKind op = OpKind::Constant;
    std::size_t a = 0;
    std::size_t b = 0;
    double scalar = 0.0;
    std::size_t offset = 0;
    Matrix value;
    Matrix tangent;
    bool tangent_zero = true;
    std::shared_ptr<const SparseMatrix> sparse;
  };

  const Node& at(NodeId id) const;
  NodeId push(Node node);
  NodeId unary(OpKind op, NodeId a, double scalar = 0.0);
  NodeId binary_elementwise(OpKind op, NodeId a, NodeId b);

  std::size_t n_params_;
  std::vector<Node> nodes_;
};

struct ForwardResult {
  double value = 0.0;
  double directional = 0.0;
  NodeId output;
};

/// Records `program(tape, input_node)` on the tape with a column input and
/// its tangent seed. The program must return a 1x1 node.
template <class Program>
ForwardResult record_forward(Tape& tape, std::span<const double> inputs,
                             std::span<const double> input_tangents, Program&& program) {
  require(inputs.size() == input_tangents.size(),
          "record_forward: inputs and input_tangents differ in length");
  Matrix x = Eigen::Map<const Vector>(inputs.data(), static_cast<Eigen::Index>(inputs.size()));
  Matrix dx = Eigen::Map<const Vector>(input_tangents.data(),
                                       static_cast<Eigen::Index>(input_tangents.size()));
  const NodeId in = tape.input(std::move(x), std::move(dx));
  const NodeId out = program(tape, in);
  require(tape.value(out).size() == 1, "record_forward: program output is not scalar");
  ForwardResult result;
  result.value = tape.value(out)(0, 0);
  result.directional = tape.tangent_is_zero(out) ? 0.0 : tape.tangent(out)(0, 0);
  result.output = out;
  return result;
}

}  // namespace deepuzawa::ad
