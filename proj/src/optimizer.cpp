#include "deepuzawa/optimizer.hpp"

#include <cmath>
#include <string>

#include "deepuzawa/errors.hpp"

namespace deepuzawa {

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view tag) {
  if (tag == "sgd") return OptimizerKind::Sgd;
  if (tag == "adam") return OptimizerKind::Adam;
  throw ContractViolation("unknown optimizer '" + std::string(tag) + "' (sgd | adam)");
}

void OptimizerConfig::validate() const {
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning rate must be > 0");
  if (kind == OptimizerKind::Adam) {
    require(beta1 >= 0.0 && beta1 < 1.0, "adam beta1 must lie in [0, 1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "adam beta2 must lie in [0, 1)");
    require(epsilon > 0.0, "adam epsilon must be > 0");
  }
}

void Sgd::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  require(theta.size() == grad.size(), "sgd: gradient length differs from theta");
  theta -= lr_ * grad;
  ++t_;
}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  require(theta.size() == grad.size(), "adam: gradient length differs from theta");
  if (m_.size() != theta.size()) {
    m_ = Eigen::VectorXd::Zero(theta.size());
    v_ = Eigen::VectorXd::Zero(theta.size());
  }
  ++t_;
  b1t_ *= b1_;
  b2t_ *= b2_;
  m_ = b1_ * m_ + (1.0 - b1_) * grad;
  v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
  const double c1 = 1.0 / (1.0 - b1t_);
  const double c2 = 1.0 / (1.0 - b2t_);
  theta.array() -= lr_ * (m_.array() * c1) / ((v_.array() * c2).sqrt() + eps_);
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config) {
  config.validate();
  if (config.kind == OptimizerKind::Sgd) return std::make_unique<Sgd>(config.learning_rate);
  return std::make_unique<Adam>(config.learning_rate, config.beta1, config.beta2, config.epsilon);
}

}  // namespace deepuzawa
