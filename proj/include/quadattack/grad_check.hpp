#pragma once

#include <functional>

#include <Eigen/Core>

#include "quadattack/model.hpp"

namespace quadattack {

/// A scalar loss of (input, features, logits) and its partial derivatives.
/// `grad_input` is the direct dependence on the input (e.g. a norm penalty on
/// the perturbation); leave it empty when there is none.
struct LossEval {
  double value = 0.0;
  Eigen::VectorXd grad_logits;
  Eigen::VectorXd grad_features;
  Eigen::VectorXd grad_input;
};

using LossFn = std::function<LossEval(const Eigen::VectorXd& input, const Eigen::VectorXd& features,
                                      const Eigen::VectorXd& logits)>;

/// 0.5 * ||features||^2
LossEval feature_energy_loss(const Eigen::VectorXd& input, const Eigen::VectorXd& features,
                             const Eigen::VectorXd& logits);
/// sum(logits)
LossEval logit_sum_loss(const Eigen::VectorXd& input, const Eigen::VectorXd& features,
                        const Eigen::VectorXd& logits);

/// dLoss/dinput through forward + backward.
Eigen::VectorXd input_gradient(const Model& model, const Eigen::VectorXd& x, const LossFn& loss);

double evaluate_loss(const Model& model, const Eigen::VectorXd& x, const LossFn& loss);

/// Compares the analytic input gradient against central differences with
/// step `eps`. Returns max_i |analytic_i - numeric_i| / max(||analytic||_inf,
/// ||numeric||_inf), or 0 when both gradients vanish. Throws ValidationError
/// when eps <= 0.
double grad_check(const Model& model, const Eigen::VectorXd& x, const LossFn& loss, double eps);

}  // namespace quadattack
