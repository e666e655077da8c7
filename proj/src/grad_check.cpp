#include "quadattack/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "quadattack/error.hpp"

namespace quadattack {

LossEval feature_energy_loss(const Eigen::VectorXd&, const Eigen::VectorXd& features, const Eigen::VectorXd& logits) {
  return {0.5 * features.squaredNorm(), Eigen::VectorXd::Zero(logits.size()), features, {}};
}

LossEval logit_sum_loss(const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd& logits) {
  return {logits.sum(), Eigen::VectorXd::Ones(logits.size()), {}, {}};
}

double evaluate_loss(const Model& model, const Eigen::VectorXd& x, const LossFn& loss) {
  const ForwardResult fr = forward(model, Tensor::from_vector(x));
  return loss(x, fr.features.vec(), fr.logits.vec()).value;
}

Eigen::VectorXd input_gradient(const Model& model, const Eigen::VectorXd& x, const LossFn& loss) {
  const ForwardResult fr = forward(model, Tensor::from_vector(x));
  const LossEval le = loss(x, fr.features.vec(), fr.logits.vec());
  const Tensor gl = le.grad_logits.size() ? Tensor::from_vector(le.grad_logits)
                                          : Tensor::from_vector(Eigen::VectorXd::Zero(fr.logits.size()));
  Tensor gf;
  if (le.grad_features.size()) gf = Tensor::from_vector(le.grad_features);
  Gradients g = backward(model, fr.trace, gl, le.grad_features.size() ? &gf : nullptr, BackwardScope::InputOnly);
  if (le.grad_input.size()) g.input += le.grad_input;
  return g.input;
}

double grad_check(const Model& model, const Eigen::VectorXd& x, const LossFn& loss, double eps) {
  if (!(eps > 0.0)) throw ValidationError("grad_check: eps must be positive");
  const Eigen::VectorXd analytic = input_gradient(model, x, loss);
  Eigen::VectorXd numeric(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = evaluate_loss(model, probe, loss);
    probe[i] = x[i] - eps;
    const double down = evaluate_loss(model, probe, loss);
    probe[i] = x[i];
    numeric[i] = (up - down) / (2.0 * eps);
  }
  const double scale = std::max(analytic.lpNorm<Eigen::Infinity>(), numeric.lpNorm<Eigen::Infinity>());
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).lpNorm<Eigen::Infinity>() / scale;
}

}  // namespace quadattack
