#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace quadattack {

struct AdamConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers and step counter for one parameter vector.
class AdamState {
 public:
  AdamState() = default;
  AdamState(Eigen::Index size, AdamConfig config);

  /// In-place bias-corrected Adam update of `param`. Throws NumericError on a
  /// non-finite gradient and DimensionError on a size mismatch.
  void step(Eigen::Ref<Eigen::VectorXd> param, const Eigen::VectorXd& grad);

  /// Zeroes both moments and the step counter.
  void reset();

  const AdamConfig& config() const { return config_; }
  const Eigen::VectorXd& first_moment() const { return m_; }
  const Eigen::VectorXd& second_moment() const { return v_; }
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  std::int64_t t_ = 0;
};

}  // namespace quadattack
