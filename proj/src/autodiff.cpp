#include "deepuzawa/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace deepuzawa::ad {

namespace {

double gelu_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double gelu_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// f, f', f'' for the elementwise primitives.
struct Derivs {
  double f;
  double d1;
  double d2;
};

Derivs eval_unary(OpKind op, double z, double p) {
  switch (op) {
    case OpKind::Tanh: {
      const double t = std::tanh(z);
      const double s = 1.0 - t * t;
      return {t, s, -2.0 * t * s};
    }
    case OpKind::Gelu: {
      const double cdf = gelu_cdf(z);
      const double pdf = gelu_pdf(z);
      return {z * cdf, cdf + z * pdf, pdf * (2.0 - z * z)};
    }
    case OpKind::Silu: {
      const double s = sigmoid(z);
      const double ds = s * (1.0 - s);
      return {z * s, s + z * ds, ds * (2.0 + z * (1.0 - 2.0 * s))};
    }
    case OpKind::Exp: {
      const double e = std::exp(z);
      return {e, e, e};
    }
    case OpKind::Sin:
      return {std::sin(z), std::cos(z), -std::sin(z)};
    case OpKind::Cos:
      return {std::cos(z), -std::sin(z), -std::cos(z)};
    case OpKind::Pow: {
      if (p == 0.0) return {1.0, 0.0, 0.0};
      if (p == 1.0) return {z, 1.0, 0.0};
      if (p == 2.0) return {z * z, 2.0 * z, 2.0};
      return {std::pow(z, p), p * std::pow(z, p - 1.0), p * (p - 1.0) * std::pow(z, p - 2.0)};
    }
    default:
      break;
  }
  return {z, 1.0, 0.0};
}

bool is_integer(double p) { return std::floor(p) == p; }

void accumulate(Matrix& target, const Matrix& addend) {
  if (target.size() == 0) {
    target = addend;
  } else {
    target += addend;
  }
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Input: return "input";
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::MatMul: return "matmul";
    case OpKind::AddColumn: return "add_column";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Scale: return "scale";
    case OpKind::Tanh: return "tanh";
    case OpKind::Gelu: return "gelu";
    case OpKind::Silu: return "silu";
    case OpKind::Exp: return "exp";
    case OpKind::Sin: return "sin";
    case OpKind::Cos: return "cos";
    case OpKind::Pow: return "pow";
    case OpKind::Contract: return "contract";
    case OpKind::Directional: return "directional";
    case OpKind::Sum: return "sum";
  }
  return "unknown";
}

EvaluationError::EvaluationError(std::size_t node, OpKind op, const std::string& detail)
    : NumericalError([&] {
        std::ostringstream os;
        os << "evaluation error at node " << node << " (" << op_name(op) << "): " << detail;
        return os.str();
      }()),
      node_(node) {}

const Tape::Node& Tape::at(NodeId id) const {
  require(id.index < nodes_.size(), "tape: node " + std::to_string(id.index) + " does not exist");
  return nodes_[id.index];
}

NodeId Tape::push(Node node) {
  const std::size_t index = nodes_.size();
  if (!node.value.allFinite()) {
    throw EvaluationError(index, node.op, "non-finite primal value");
  }
  if (!node.tangent_zero && !node.tangent.allFinite()) {
    throw EvaluationError(index, node.op, "non-finite tangent value");
  }
  nodes_.push_back(std::move(node));
  return NodeId{index};
}

Matrix Tape::tangent(NodeId id) const {
  const Node& n = at(id);
  if (n.tangent_zero) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.tangent;
}

NodeId Tape::input(Matrix value, Matrix tangent) {
  require(value.rows() == tangent.rows() && value.cols() == tangent.cols(),
          "tape input: value and tangent shapes differ");
  Node n;
  n.op = OpKind::Input;
  n.value = std::move(value);
  n.tangent = std::move(tangent);
  n.tangent_zero = false;
  return push(std::move(n));
}

NodeId Tape::input(Matrix value) {
  Node n;
  n.op = OpKind::Input;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::constant(Matrix value) {
  Node n;
  n.op = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::parameter(std::size_t offset, Matrix value) {
  require(offset + static_cast<std::size_t>(value.size()) <= n_params_,
          "tape parameter: slot range exceeds the parameter count");
  Node n;
  n.op = OpKind::Parameter;
  n.offset = offset;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Node& na = at(a);
  const Node& nb = at(b);
  require(na.value.cols() == nb.value.rows(), "tape matmul: inner dimensions differ");
  Node n;
  n.op = OpKind::MatMul;
  n.a = a.index;
  n.b = b.index;
  n.value.noalias() = na.value * nb.value;
  if (!na.tangent_zero || !nb.tangent_zero) {
    n.tangent_zero = false;
    n.tangent = Matrix::Zero(n.value.rows(), n.value.cols());
    if (!na.tangent_zero) n.tangent.noalias() += na.tangent * nb.value;
    if (!nb.tangent_zero) n.tangent.noalias() += na.value * nb.tangent;
  }
  return push(std::move(n));
}

NodeId Tape::add_column(NodeId x, NodeId column) {
  const Node& nx = at(x);
  const Node& nc = at(column);
  require(nc.value.cols() == 1 && nc.value.rows() == nx.value.rows(),
          "tape add_column: column shape does not match");
  Node n;
  n.op = OpKind::AddColumn;
  n.a = x.index;
  n.b = column.index;
  n.value = nx.value;
  n.value.colwise() += nc.value.col(0);
  if (!nx.tangent_zero || !nc.tangent_zero) {
    n.tangent_zero = false;
    n.tangent = nx.tangent_zero ? Matrix::Zero(nx.value.rows(), nx.value.cols()) : nx.tangent;
    if (!nc.tangent_zero) n.tangent.colwise() += nc.tangent.col(0);
  }
  return push(std::move(n));
}

NodeId Tape::binary_elementwise(OpKind op, NodeId a, NodeId b) {
  const Node& na = at(a);
  const Node& nb = at(b);
  require(na.value.rows() == nb.value.rows() && na.value.cols() == nb.value.cols(),
          std::string("tape ") + op_name(op) + ": operand shapes differ");
  Node n;
  n.op = op;
  n.a = a.index;
  n.b = b.index;
  const auto pa = na.value.array();
  const auto pb = nb.value.array();
  const bool has_tangent = !na.tangent_zero || !nb.tangent_zero;
  const Matrix zero = has_tangent ? Matrix::Zero(na.value.rows(), na.value.cols()) : Matrix();
  const Matrix& da = na.tangent_zero ? zero : na.tangent;
  const Matrix& db = nb.tangent_zero ? zero : nb.tangent;
  switch (op) {
    case OpKind::Add:
      n.value = (pa + pb).matrix();
      if (has_tangent) n.tangent = da + db;
      break;
    case OpKind::Sub:
      n.value = (pa - pb).matrix();
      if (has_tangent) n.tangent = da - db;
      break;
    case OpKind::Mul:
      n.value = (pa * pb).matrix();
      if (has_tangent) n.tangent = (da.array() * pb + pa * db.array()).matrix();
      break;
    case OpKind::Div:
      if ((pb == 0.0).any()) {
        throw EvaluationError(nodes_.size(), op, "division by zero");
      }
      n.value = (pa / pb).matrix();
      if (has_tangent) n.tangent = (da.array() / pb - pa * db.array() / (pb * pb)).matrix();
      break;
    default:
      throw ContractViolation("tape: not a binary elementwise op");
  }
  n.tangent_zero = !has_tangent;
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) { return binary_elementwise(OpKind::Add, a, b); }
NodeId Tape::sub(NodeId a, NodeId b) { return binary_elementwise(OpKind::Sub, a, b); }
NodeId Tape::mul(NodeId a, NodeId b) { return binary_elementwise(OpKind::Mul, a, b); }
NodeId Tape::div(NodeId a, NodeId b) { return binary_elementwise(OpKind::Div, a, b); }

NodeId Tape::scale(NodeId a, double factor) {
  const Node& na = at(a);
  Node n;
  n.op = OpKind::Scale;
  n.a = a.index;
  n.scalar = factor;
  n.value = factor * na.value;
  n.tangent_zero = na.tangent_zero;
  if (!na.tangent_zero) n.tangent = factor * na.tangent;
  return push(std::move(n));
}

NodeId Tape::unary(OpKind op, NodeId a, double scalar) {
  const Node& na = at(a);
  if (op == OpKind::Pow && !is_integer(scalar) && (na.value.array() < 0.0).any()) {
    throw EvaluationError(nodes_.size(), op, "negative base with non-integer exponent");
  }
  Node n;
  n.op = op;
  n.a = a.index;
  n.scalar = scalar;
  n.value.resize(na.value.rows(), na.value.cols());
  n.tangent_zero = na.tangent_zero;
  if (!na.tangent_zero) n.tangent.resize(na.value.rows(), na.value.cols());
  for (Eigen::Index i = 0; i < na.value.size(); ++i) {
    const Derivs d = eval_unary(op, na.value.data()[i], scalar);
    n.value.data()[i] = d.f;
    if (!na.tangent_zero) n.tangent.data()[i] = d.d1 * na.tangent.data()[i];
  }
  return push(std::move(n));
}

NodeId Tape::tanh(NodeId a) { return unary(OpKind::Tanh, a); }
NodeId Tape::gelu(NodeId a) { return unary(OpKind::Gelu, a); }
NodeId Tape::silu(NodeId a) { return unary(OpKind::Silu, a); }
NodeId Tape::exp(NodeId a) { return unary(OpKind::Exp, a); }
NodeId Tape::sin(NodeId a) { return unary(OpKind::Sin, a); }
NodeId Tape::cos(NodeId a) { return unary(OpKind::Cos, a); }
NodeId Tape::pow(NodeId a, double exponent) { return unary(OpKind::Pow, a, exponent); }

NodeId Tape::contract(NodeId x, std::shared_ptr<const SparseMatrix> c) {
  require(c != nullptr, "tape contract: null matrix");
  const Node& nx = at(x);
  require(nx.value.cols() == c->rows(), "tape contract: x columns do not match C rows");
  Node n;
  n.op = OpKind::Contract;
  n.a = x.index;
  n.value = nx.value * (*c);
  n.tangent_zero = nx.tangent_zero;
  if (!nx.tangent_zero) n.tangent = nx.tangent * (*c);
  n.sparse = std::move(c);
  return push(std::move(n));
}

NodeId Tape::directional(NodeId x) {
  const Node& nx = at(x);
  Node n;
  n.op = OpKind::Directional;
  n.a = x.index;
  n.value = nx.tangent_zero ? Matrix::Zero(nx.value.rows(), nx.value.cols()) : nx.tangent;
  return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
  const Node& nx = at(x);
  Node n;
  n.op = OpKind::Sum;
  n.a = x.index;
  n.value = Matrix::Constant(1, 1, nx.value.sum());
  n.tangent_zero = nx.tangent_zero;
  if (!nx.tangent_zero) n.tangent = Matrix::Constant(1, 1, nx.tangent.sum());
  return push(std::move(n));
}

Vector Tape::reverse(std::span<const Seed> seeds) const {
  Vector gradient = Vector::Zero(static_cast<Eigen::Index>(n_params_));
  reverse_accumulate(seeds, gradient);
  return gradient;
}

void Tape::reverse_accumulate(std::span<const Seed> seeds, Eigen::Ref<Vector> gradient) const {
  require(static_cast<std::size_t>(gradient.size()) == n_params_,
          "tape reverse: gradient length differs from parameter count");
  const std::size_t count = nodes_.size();
  std::vector<Matrix> pbar(count);
  std::vector<Matrix> tbar(count);
  std::size_t last = 0;
  bool any = false;
  for (const Seed& seed : seeds) {
    if (seed.node.index >= count) {
      throw ContractViolation("tape reverse: adjoint seed on nonexistent node " +
                              std::to_string(seed.node.index));
    }
    const Node& n = nodes_[seed.node.index];
    auto check_shape = [&](const Matrix& m) {
      require(m.rows() == n.value.rows() && m.cols() == n.value.cols(),
              "tape reverse: seed shape does not match node " + std::to_string(seed.node.index));
    };
    if (seed.primal_adjoint.size() != 0) {
      check_shape(seed.primal_adjoint);
      accumulate(pbar[seed.node.index], seed.primal_adjoint);
    }
    if (seed.tangent_adjoint.size() != 0 && !n.tangent_zero) {
      check_shape(seed.tangent_adjoint);
      accumulate(tbar[seed.node.index], seed.tangent_adjoint);
    }
    last = std::max(last, seed.node.index);
    any = true;
  }
  if (!any) return;

  for (std::size_t i = last + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    const bool has_p = pbar[i].size() != 0;
    const bool has_t = tbar[i].size() != 0;
    if (!has_p && !has_t) continue;
    const Matrix& yp = pbar[i];
    const Matrix& yt = tbar[i];

    switch (n.op) {
      case OpKind::Input:
      case OpKind::Constant:
        break;
      case OpKind::Parameter:
        if (has_p) {
          gradient.segment(static_cast<Eigen::Index>(n.offset), yp.size()) +=
              Eigen::Map<const Vector>(yp.data(), yp.size());
        }
        break;
      case OpKind::MatMul: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        // y = A B, dy = dA B + A dB
        if (na.op != OpKind::Constant && na.op != OpKind::Input) {
          Matrix ga = Matrix::Zero(na.value.rows(), na.value.cols());
          if (has_p) ga.noalias() += yp * nb.value.transpose();
          if (has_t && !nb.tangent_zero) ga.noalias() += yt * nb.tangent.transpose();
          accumulate(pbar[n.a], ga);
          if (has_t && !na.tangent_zero) {
            Matrix ta = yt * nb.value.transpose();
            accumulate(tbar[n.a], ta);
          }
        }
        if (nb.op != OpKind::Constant && nb.op != OpKind::Input) {
          Matrix gb = Matrix::Zero(nb.value.rows(), nb.value.cols());
          if (has_p) gb.noalias() += na.value.transpose() * yp;
          if (has_t && !na.tangent_zero) gb.noalias() += na.tangent.transpose() * yt;
          accumulate(pbar[n.b], gb);
          if (has_t && !nb.tangent_zero) {
            Matrix tb = na.value.transpose() * yt;
            accumulate(tbar[n.b], tb);
          }
        }
        break;
      }
      case OpKind::AddColumn: {
        const Node& nx = nodes_[n.a];
        const Node& nc = nodes_[n.b];
        if (has_p) {
          accumulate(pbar[n.a], yp);
          Matrix gc = yp.rowwise().sum();
          accumulate(pbar[n.b], gc);
        }
        if (has_t) {
          if (!nx.tangent_zero) accumulate(tbar[n.a], yt);
          if (!nc.tangent_zero) {
            Matrix tc = yt.rowwise().sum();
            accumulate(tbar[n.b], tc);
          }
        }
        break;
      }
      case OpKind::Add:
      case OpKind::Sub: {
        const double sign = n.op == OpKind::Add ? 1.0 : -1.0;
        const Node& nb = nodes_[n.b];
        if (has_p) {
          accumulate(pbar[n.a], yp);
          Matrix gb = sign * yp;
          accumulate(pbar[n.b], gb);
        }
        if (has_t) {
          if (!nodes_[n.a].tangent_zero) accumulate(tbar[n.a], yt);
          if (!nb.tangent_zero) {
            Matrix tb = sign * yt;
            accumulate(tbar[n.b], tb);
          }
        }
        break;
      }
      case OpKind::Mul: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        const auto pa = na.value.array();
        const auto pb = nb.value.array();
        Matrix ga = Matrix::Zero(pa.rows(), pa.cols());
        Matrix gb = Matrix::Zero(pa.rows(), pa.cols());
        if (has_p) {
          ga.array() += yp.array() * pb;
          gb.array() += yp.array() * pa;
        }
        if (has_t) {
          if (!nb.tangent_zero) ga.array() += yt.array() * nb.tangent.array();
          if (!na.tangent_zero) gb.array() += yt.array() * na.tangent.array();
          if (!na.tangent_zero) {
            Matrix ta = (yt.array() * pb).matrix();
            accumulate(tbar[n.a], ta);
          }
          if (!nb.tangent_zero) {
            Matrix tb = (yt.array() * pa).matrix();
            accumulate(tbar[n.b], tb);
          }
        }
        accumulate(pbar[n.a], ga);
        accumulate(pbar[n.b], gb);
        break;
      }
      case OpKind::Div: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        const auto pa = na.value.array();
        const auto pb = nb.value.array();
        Matrix ga = Matrix::Zero(pa.rows(), pa.cols());
        Matrix gb = Matrix::Zero(pa.rows(), pa.cols());
        if (has_p) {
          ga.array() += yp.array() / pb;
          gb.array() -= yp.array() * pa / (pb * pb);
        }
        if (has_t) {
          // dy = da/b - a db/b^2
          const auto t = yt.array();
          if (!nb.tangent_zero) {
            const auto db = nb.tangent.array();
            ga.array() -= t * db / (pb * pb);
            gb.array() += t * 2.0 * pa * db / (pb * pb * pb);
            Matrix tb = (-t * pa / (pb * pb)).matrix();
            accumulate(tbar[n.b], tb);
          }
          if (!na.tangent_zero) {
            const auto da = na.tangent.array();
            gb.array() -= t * da / (pb * pb);
            Matrix ta = (t / pb).matrix();
            accumulate(tbar[n.a], ta);
          }
        }
        accumulate(pbar[n.a], ga);
        accumulate(pbar[n.b], gb);
        break;
      }
      case OpKind::Scale: {
        if (has_p) {
          Matrix ga = n.scalar * yp;
          accumulate(pbar[n.a], ga);
        }
        if (has_t && !nodes_[n.a].tangent_zero) {
          Matrix ta = n.scalar * yt;
          accumulate(tbar[n.a], ta);
        }
        break;
      }
      case OpKind::Tanh:
      case OpKind::Gelu:
      case OpKind::Silu:
      case OpKind::Exp:
      case OpKind::Sin:
      case OpKind::Cos:
      case OpKind::Pow: {
        const Node& na = nodes_[n.a];
        Matrix ga = Matrix::Zero(na.value.rows(), na.value.cols());
        Matrix ta;
        const bool tangent_path = has_t && !na.tangent_zero;
        if (tangent_path) ta.resize(na.value.rows(), na.value.cols());
        for (Eigen::Index k = 0; k < na.value.size(); ++k) {
          const Derivs d = eval_unary(n.op, na.value.data()[k], n.scalar);
          double g = has_p ? d.d1 * yp.data()[k] : 0.0;
          if (tangent_path) {
            // dy = f'(a) da  =>  a gets f''(a) da ybar_t, da gets f'(a) ybar_t
            g += d.d2 * na.tangent.data()[k] * yt.data()[k];
            ta.data()[k] = d.d1 * yt.data()[k];
          }
          ga.data()[k] = g;
        }
        accumulate(pbar[n.a], ga);
        if (tangent_path) accumulate(tbar[n.a], ta);
        break;
      }
      case OpKind::Contract: {
        const SparseMatrix ct = n.sparse->transpose();
        if (has_p) {
          Matrix ga = yp * ct;
          accumulate(pbar[n.a], ga);
        }
        if (has_t && !nodes_[n.a].tangent_zero) {
          Matrix ta = yt * ct;
          accumulate(tbar[n.a], ta);
        }
        break;
      }
      case OpKind::Directional: {
        if (has_p && !nodes_[n.a].tangent_zero) accumulate(tbar[n.a], yp);
        break;
      }
      case OpKind::Sum: {
        const Node& nx = nodes_[n.a];
        if (has_p) {
          Matrix ga = Matrix::Constant(nx.value.rows(), nx.value.cols(), yp(0, 0));
          accumulate(pbar[n.a], ga);
        }
        if (has_t && !nx.tangent_zero) {
          Matrix ta = Matrix::Constant(nx.value.rows(), nx.value.cols(), yt(0, 0));
          accumulate(tbar[n.a], ta);
        }
        break;
      }
    }
    // Adjoints of processed nodes are no longer needed.
    pbar[i] = Matrix();
    tbar[i] = Matrix();
  }
}

}  // namespace deepuzawa::ad
