#include "quadattack/losses.hpp"

#include <cmath>
#include <limits>

#include "quadattack/error.hpp"
#include "quadattack/train.hpp"

namespace quadattack {

ScalarGrad cw_topk_loss(const Eigen::VectorXd& logits, const TargetList& targets) {
  const std::size_t C = targets.num_classes;
  if (static_cast<std::size_t>(logits.size()) != C) throw DimensionError("cw_topk_loss: logit length mismatch");
  ScalarGrad out{0.0, Eigen::VectorXd::Zero(logits.size())};
  std::vector<bool> in_prefix(C, false);
  Eigen::Index min_idx = -1;
  for (std::size_t i = 0; i < targets.k(); ++i) {
    const auto t = static_cast<Eigen::Index>(targets.targets[i]);
    in_prefix[targets.targets[i]] = true;
    if (min_idx < 0 || logits[t] < logits[min_idx] || (logits[t] == logits[min_idx] && t < min_idx)) min_idx = t;
    Eigen::Index max_idx = -1;
    for (std::size_t j = 0; j < C; ++j) {
      if (in_prefix[j]) continue;
      const auto jj = static_cast<Eigen::Index>(j);
      if (max_idx < 0 || logits[jj] > logits[max_idx]) max_idx = jj;
    }
    const double hinge = logits[max_idx] - logits[min_idx];
    if (hinge > 0.0) {
      out.value += hinge;
      out.grad[max_idx] += 1.0;
      out.grad[min_idx] -= 1.0;
    }
  }
  return out;
}

AdTargetDistribution ad_target_distribution(const TargetList& targets, double decay, double complement_mass) {
  targets.validate();
  if (!(decay > 0.0 && decay < 1.0)) throw ValidationError("ad: decay must lie in (0,1)");
  if (!(complement_mass > 0.0 && complement_mass < 1.0)) throw ValidationError("ad: complement mass must lie in (0,1)");
  const std::size_t C = targets.num_classes, K = targets.k();
  AdTargetDistribution dist;
  dist.decay = decay;
  dist.complement_mass = complement_mass;
  dist.probs = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(C), complement_mass / static_cast<double>(C - K));
  double total = 0.0;
  for (std::size_t i = 0; i < K; ++i) total += std::pow(decay, static_cast<double>(i));
  for (std::size_t i = 0; i < K; ++i) {
    dist.probs[static_cast<Eigen::Index>(targets.targets[i])] =
        (1.0 - complement_mass) * std::pow(decay, static_cast<double>(i)) / total;
  }
  const double last = dist.probs[static_cast<Eigen::Index>(targets.targets.back())];
  if (!(last > complement_mass / static_cast<double>(C - K))) {
    throw ValidationError("ad: last target mass does not exceed the per-class complement mass");
  }
  return dist;
}

ScalarGrad ad_loss(const Eigen::VectorXd& logits, const AdTargetDistribution& dist) {
  if (logits.size() != dist.probs.size()) throw DimensionError("ad_loss: logit length mismatch");
  const Eigen::VectorXd logp = log_softmax(logits);
  const Eigen::ArrayXd p = logp.array().exp();
  if (dist.direction == KlDirection::TargetToModel) {
    const Eigen::ArrayXd& q = dist.probs.array();
    return {(q * (q.log() - logp.array())).sum(), (p - q).matrix()};
  }
  const Eigen::ArrayXd diff = logp.array() - dist.probs.array().log();
  const double kl = (p * diff).sum();
  return {kl, (p * (diff - kl)).matrix()};
}

ScalarGrad latent_residual(const Eigen::VectorXd& z_bar, const Eigen::VectorXd& z_hat) {
  if (z_bar.size() != z_hat.size()) throw DimensionError("latent_residual: size mismatch");
  const Eigen::VectorXd r = z_bar - z_hat;
  const double n = r.norm();
  if (n == 0.0) return {0.0, Eigen::VectorXd::Zero(r.size())};
  return {n, r / n};
}

ScalarGrad norm_penalty(const Eigen::VectorXd& delta, PNorm p) {
  ScalarGrad out{0.0, Eigen::VectorXd::Zero(delta.size())};
  const auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  switch (p) {
    case PNorm::L1:
      out.value = delta.lpNorm<1>();
      out.grad = delta.unaryExpr(sign);
      break;
    case PNorm::L2:
      out.value = delta.norm();
      if (out.value > 0.0) out.grad = delta / out.value;
      break;
    case PNorm::Linf: {
      if (delta.size() == 0) break;
      Eigen::Index idx = 0;
      out.value = delta.cwiseAbs().maxCoeff(&idx);
      out.grad[idx] = sign(delta[idx]);
      break;
    }
  }
  return out;
}

}  // namespace quadattack
