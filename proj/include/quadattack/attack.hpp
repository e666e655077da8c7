#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "quadattack/adam.hpp"
#include "quadattack/constraints.hpp"
#include "quadattack/grad_check.hpp"
#include "quadattack/losses.hpp"
#include "quadattack/model.hpp"
#include "quadattack/qp.hpp"

namespace quadattack {

enum class Method { QuadAttack, CWK, AD };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

std::string to_string(KlDirection d);
KlDirection kl_direction_from_string(const std::string& s);

std::string to_string(PNorm p);
PNorm pnorm_from_string(const std::string& s);

/// Which learning-rate column of the published schedule applies.
enum class ArchFamily { Convolutional, Transformer };

/// Published step-size schedule keyed on K and architecture family.
double default_step_size(std::size_t k, ArchFamily family);
/// 0.5 for QuadAttack at K = 1, 5 for the logit/probability losses at K = 1,
/// 10 otherwise.
double default_lambda(Method method, std::size_t k);

struct AttackConfig {
  Method method = Method::QuadAttack;
  double step_size = 0.75e-3;
  double lambda = 10.0;
  double margin = 0.2;  // QP slack eta
  std::size_t steps = 60;
  /// Optimizer state is reset after this many steps; 0 disables the reset.
  std::size_t warmup_steps = 5;
  /// n in an n x m budget; lambdas are spread linearly over [lambda_lo, lambda_hi] when n > 1.
  std::size_t num_assignments = 1;
  double lambda_lo = 1.0;
  double lambda_hi = 19.0;
  PNorm p_norm = PNorm::L2;
  double init_noise_sigma = 1e-3;
  std::uint64_t seed = 0;
  double ad_decay = 0.5;
  double ad_complement_mass = 0.1;
  KlDirection ad_direction = KlDirection::ModelToTarget;
  qp::SolverConfig solver;

  /// Published defaults for (method, K, family).
  static AttackConfig defaults(Method method, std::size_t k, ArchFamily family = ArchFamily::Convolutional);

  /// Throws ValidationError. `steps` may be 0 (a degenerate budget).
  void validate() const;

  /// Lambda used by assignment `index` of `num_assignments`.
  double assignment_lambda(std::size_t index) const;
};

/// Lowest-l2 successful iterate seen so far.
struct BestIterate {
  Eigen::VectorXd delta;
  double l2 = 0.0;
  std::size_t iteration = 0;
};

struct AttackState {
  Eigen::VectorXd delta;
  AdamState optimizer;
  std::size_t iter = 0;
  std::optional<BestIterate> best;
  std::optional<std::size_t> first_success;
  /// Last latent target from an Optimal QP solve.
  std::optional<Eigen::VectorXd> latent_target;
};

/// One record per iteration, describing the iterate the step started from.
struct IterationRecord {
  std::size_t iter = 0;
  double loss = 0.0;          // lambda * attack_term + penalty
  double attack_term = 0.0;   // latent residual / hinge / KL (unweighted)
  double penalty = 0.0;       // ||delta||_p
  double l1 = 0.0, l2 = 0.0, linf = 0.0;
  bool order_ok = false;
  std::optional<qp::Status> qp_status;  // QuadAttack only
  bool reused_target = false;
};

struct AttackResult {
  bool success = false;
  Eigen::VectorXd delta;
  double l1 = 0.0, l2 = 0.0, linf = 0.0;
  std::optional<std::size_t> iterations_to_first_success;
  std::size_t assignment_index = 0;
  double lambda = 0.0;
  std::size_t iterations = 0;
};

/// i.i.d. N(0, sigma^2) entries; sigma = 0 gives zeros.
Eigen::VectorXd init_perturbation(Eigen::Index size, double sigma, std::mt19937_64& rng);

/// delta such that x + delta is the elementwise projection of x + delta onto [0,1].
Eigen::VectorXd clamp_perturbation(const Eigen::VectorXd& x, const Eigen::VectorXd& delta);

/// Per-attack constants precomputed from the target list.
struct AttackContext {
  TargetList targets;
  OrderMatrix order;
  std::optional<AdTargetDistribution> ad_dist;

  static AttackContext make(const TargetList& targets, const AttackConfig& cfg);
};

/// The attack objective lambda * term(x + delta) + ||delta||_p evaluated at
/// input x_hat. For QuadAttack `latent_target` is held constant.
LossEval attack_objective(Method method, const AttackContext& ctx, double lambda, PNorm p_norm,
                          const Eigen::VectorXd& clean_x, const std::optional<Eigen::VectorXd>& latent_target,
                          const Eigen::VectorXd& input, const Eigen::VectorXd& features,
                          const Eigen::VectorXd& logits, double* attack_term = nullptr, double* penalty = nullptr);

/// Same objective as a LossFn (for gradient checks).
LossFn attack_loss_fn(Method method, const AttackContext& ctx, double lambda, PNorm p_norm,
                      const Eigen::VectorXd& clean_x, std::optional<Eigen::VectorXd> latent_target);

AttackState start_attack(const Eigen::VectorXd& x, const AttackConfig& cfg, std::mt19937_64& rng);

/// One iteration from the current iterate: forward pass, order check and
/// best-iterate update, objective (for QuadAttack: QP projection of the
/// features, reusing the last target when the QP is not Optimal), backward
/// pass to delta, one Adam step, clamp to the [0,1] box.
IterationRecord attack_step(const Model& model, const Eigen::VectorXd& x, AttackState& state,
                            const AttackContext& ctx, const AttackConfig& cfg, double lambda);

/// Convenience wrapper for QuadAttack.
IterationRecord quadattack_step(const Model& model, const Eigen::VectorXd& x, AttackState& state,
                                const AttackContext& ctx, const AttackConfig& cfg);

/// Checks the final iterate (which no step has evaluated yet).
IterationRecord finish_attack(const Model& model, const Eigen::VectorXd& x, AttackState& state,
                              const AttackContext& ctx);

/// Single assignment with the given lambda. Seeded from cfg.seed.
AttackResult run_assignment(const Model& model, const Eigen::VectorXd& x, const TargetList& targets,
                            const AttackConfig& cfg, std::size_t assignment_index,
                            std::vector<IterationRecord>* trace = nullptr);

/// Every assignment of an n x m budget, in assignment order.
std::vector<AttackResult> run_assignments(const Model& model, const Eigen::VectorXd& x, const TargetList& targets,
                                          const AttackConfig& cfg);

/// Lowest-l2 success across assignments; otherwise the first assignment's result.
AttackResult reduce_assignments(const std::vector<AttackResult>& results);
AttackResult run_attack(const Model& model, const Eigen::VectorXd& x, const TargetList& targets,
                        const AttackConfig& cfg);

/// True iff x + delta satisfies the ordered top-K condition on a fresh forward pass.
bool verify_success(const Model& model, const Eigen::VectorXd& x, const Eigen::VectorXd& delta,
                    const TargetList& targets);

/// Line-delimited JSON, one object per record.
void write_trace(std::ostream& out, const std::vector<IterationRecord>& records);

}  // namespace quadattack
