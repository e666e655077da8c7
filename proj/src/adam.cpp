#include "quadattack/adam.hpp"

#include <cmath>

#include "quadattack/error.hpp"

namespace quadattack {

AdamState::AdamState(Eigen::Index size, AdamConfig config)
    : config_(config), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

void AdamState::step(Eigen::Ref<Eigen::VectorXd> param, const Eigen::VectorXd& grad) {
  if (param.size() != m_.size() || grad.size() != m_.size()) {
    throw DimensionError("adam: parameter/gradient size does not match optimizer state");
  }
  if (!grad.allFinite()) throw NumericError("adam: non-finite gradient");
  ++t_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    param[i] -= config_.step_size * m_hat / (std::sqrt(v_hat) + config_.epsilon);
  }
}

void AdamState::reset() {
  m_.setZero();
  v_.setZero();
  t_ = 0;
}

}  // namespace quadattack
