#pragma once

#include <cstddef>

#include <Eigen/Core>

#include "quadattack/constraints.hpp"

namespace quadattack {

/// Scalar loss value with its (sub)gradient.
struct ScalarGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};

/// Extended top-K C&W hinge:
///   sum_{i=1..K} max(0, max_{j not in t_1..t_i} l_j - min_{t in t_1..t_i} l_t).
/// Subgradient picks the lowest index among tied maximizers/minimizers.
ScalarGrad cw_topk_loss(const Eigen::VectorXd& logits, const TargetList& targets);

/// Target distribution for adversarial distillation: target t_i gets mass
/// proportional to decay^(i-1), scaled to 1 - complement_mass; non-targets
/// share complement_mass uniformly.
enum class KlDirection {
  ModelToTarget,  // KL(softmax(l) || P)
  TargetToModel,  // KL(P || softmax(l))
};

struct AdTargetDistribution {
  Eigen::VectorXd probs;
  KlDirection direction = KlDirection::ModelToTarget;
  double decay = 0.5;
  double complement_mass = 0.1;
};

/// Throws ValidationError unless 0 < decay < 1, 0 < complement_mass < 1 and
/// the resulting masses are strictly ordered t_1 > ... > t_K > non-targets.
AdTargetDistribution ad_target_distribution(const TargetList& targets, double decay, double complement_mass);

/// KL divergence between softmax(logits) and dist.probs in the direction set by
/// dist.direction, evaluated in log space; gradient w.r.t. logits.
/// ModelToTarget has a vanishing gradient once the softmax saturates.
ScalarGrad ad_loss(const Eigen::VectorXd& logits, const AdTargetDistribution& dist);

/// ||z_hat - z_bar||_2 and its gradient w.r.t. z_bar (0 when the residual vanishes).
ScalarGrad latent_residual(const Eigen::VectorXd& z_bar, const Eigen::VectorXd& z_hat);

enum class PNorm { L1, L2, Linf };

/// ||delta||_p with subgradient 0 at delta = 0 (and sign 0 at zero entries).
ScalarGrad norm_penalty(const Eigen::VectorXd& delta, PNorm p);

}  // namespace quadattack
