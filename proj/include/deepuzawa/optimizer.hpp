#pragma once

// First-order optimizers over the flat parameter vector.

#include <memory>
#include <string_view>

#include <Eigen/Dense>

namespace deepuzawa {

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view tag);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// theta <- theta - update(grad). State (moments, step count) persists across calls.
  virtual void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) = 0;
  virtual std::size_t steps() const = 0;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double learning_rate) : lr_(learning_rate) {}
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) override;
  std::size_t steps() const override { return t_; }

 private:
  double lr_;
  std::size_t t_ = 0;
};

class Adam final : public Optimizer {
 public:
  Adam(double learning_rate, double beta1, double beta2, double epsilon)
      : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon) {}
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) override;
  std::size_t steps() const override { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  double b1t_ = 1.0, b2t_ = 1.0;
  std::size_t t_ = 0;
  Eigen::VectorXd m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& config);

}  // namespace deepuzawa
