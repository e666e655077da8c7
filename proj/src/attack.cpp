#include "quadattack/attack.hpp"

#include <cmath>
#include <iomanip>

#include <json.hpp>

#include "quadattack/error.hpp"

namespace quadattack {

std::string to_string(Method m) {
  switch (m) {
    case Method::QuadAttack:
      return "quadattack";
    case Method::CWK:
      return "cwk";
    case Method::AD:
      return "ad";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  if (s == "quadattack") return Method::QuadAttack;
  if (s == "cwk") return Method::CWK;
  if (s == "ad") return Method::AD;
  throw ValidationError("unknown attack method '" + s + "' (expected quadattack, cwk or ad)");
}

std::string to_string(PNorm p) {
  switch (p) {
    case PNorm::L1:
      return "1";
    case PNorm::L2:
      return "2";
    case PNorm::Linf:
      return "inf";
  }
  return "2";
}

PNorm pnorm_from_string(const std::string& s) {
  if (s == "1") return PNorm::L1;
  if (s == "2") return PNorm::L2;
  if (s == "inf") return PNorm::Linf;
  throw ValidationError("p_norm must be 1, 2 or inf");
}

std::string to_string(KlDirection d) {
  return d == KlDirection::TargetToModel ? "target_to_model" : "model_to_target";
}

KlDirection kl_direction_from_string(const std::string& s) {
  if (s == "model_to_target") return KlDirection::ModelToTarget;
  if (s == "target_to_model") return KlDirection::TargetToModel;
  throw ValidationError("ad_direction must be model_to_target or target_to_model");
}

double default_step_size(std::size_t k, ArchFamily family) {
  const bool transformer = family == ArchFamily::Transformer;
  if (k < 5) return 0.75e-3;
  if (k < 10) return transformer ? 1.0e-3 : 2.0e-3;
  if (k < 15) return transformer ? 1.0e-3 : 3.0e-3;
  if (k < 20) return transformer ? 1.5e-3 : 3.5e-3;
  return transformer ? 2.0e-3 : 4.0e-3;
}

double default_lambda(Method method, std::size_t k) {
  if (k == 1) return method == Method::QuadAttack ? 0.5 : 5.0;
  return 10.0;
}

AttackConfig AttackConfig::defaults(Method method, std::size_t k, ArchFamily family) {
  AttackConfig cfg;
  cfg.method = method;
  cfg.step_size = default_step_size(k, family);
  cfg.lambda = default_lambda(method, k);
  return cfg;
}

void AttackConfig::validate() const {
  if (!(step_size > 0.0)) throw ValidationError("attack: step size must be positive");
  if (!(lambda > 0.0)) throw ValidationError("attack: lambda must be positive");
  if (!(margin >= 0.0)) throw ValidationError("attack: margin must be nonnegative");
  if (steps > 0 && warmup_steps >= steps) throw ValidationError("attack: warmup_steps must be below steps");
  if (num_assignments < 1) throw ValidationError("attack: need at least one assignment");
  if (num_assignments > 1 && !(lambda_lo > 0.0 && lambda_lo <= lambda_hi)) {
    throw ValidationError("attack: lambda range must satisfy 0 < lo <= hi");
  }
  if (!(init_noise_sigma >= 0.0)) throw ValidationError("attack: init noise sigma must be nonnegative");
  solver.validate();
}

double AttackConfig::assignment_lambda(std::size_t index) const {
  if (num_assignments == 1) return lambda;
  return lambda_lo + (lambda_hi - lambda_lo) * static_cast<double>(index) / static_cast<double>(num_assignments - 1);
}

Eigen::VectorXd init_perturbation(Eigen::Index size, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw ValidationError("init_perturbation: sigma must be nonnegative");
  Eigen::VectorXd d = Eigen::VectorXd::Zero(size);
  if (sigma == 0.0) return d;
  std::normal_distribution<double> dist(0.0, sigma);
  for (Eigen::Index i = 0; i < size; ++i) d[i] = dist(rng);
  return d;
}

Eigen::VectorXd clamp_perturbation(const Eigen::VectorXd& x, const Eigen::VectorXd& delta) {
  return (x + delta).cwiseMax(0.0).cwiseMin(1.0) - x;
}

AttackContext AttackContext::make(const TargetList& targets, const AttackConfig& cfg) {
  AttackContext ctx{targets, build_order_matrix(targets), std::nullopt};
  if (cfg.method == Method::AD) {
    ctx.ad_dist = ad_target_distribution(targets, cfg.ad_decay, cfg.ad_complement_mass);
    ctx.ad_dist->direction = cfg.ad_direction;
  }
  return ctx;
}

LossEval attack_objective(Method method, const AttackContext& ctx, double lambda, PNorm p_norm,
                          const Eigen::VectorXd& clean_x, const std::optional<Eigen::VectorXd>& latent_target,
                          const Eigen::VectorXd& input, const Eigen::VectorXd& features,
                          const Eigen::VectorXd& logits, double* attack_term, double* penalty) {
  LossEval out;
  out.grad_logits = Eigen::VectorXd::Zero(logits.size());
  out.grad_features = Eigen::VectorXd::Zero(features.size());
  double term = 0.0;
  switch (method) {
    case Method::QuadAttack:
      if (latent_target) {
        const ScalarGrad r = latent_residual(features, *latent_target);
        term = r.value;
        out.grad_features = lambda * r.grad;
      }
      break;
    case Method::CWK: {
      const ScalarGrad c = cw_topk_loss(logits, ctx.targets);
      term = c.value;
      out.grad_logits = lambda * c.grad;
      break;
    }
    case Method::AD: {
      if (!ctx.ad_dist) throw ValidationError("attack: AD context lacks a target distribution");
      const ScalarGrad a = ad_loss(logits, *ctx.ad_dist);
      term = a.value;
      out.grad_logits = lambda * a.grad;
      break;
    }
  }
  const ScalarGrad pen = norm_penalty(input - clean_x, p_norm);
  out.value = lambda * term + pen.value;
  out.grad_input = pen.grad;
  if (attack_term) *attack_term = term;
  if (penalty) *penalty = pen.value;
  return out;
}

LossFn attack_loss_fn(Method method, const AttackContext& ctx, double lambda, PNorm p_norm,
                      const Eigen::VectorXd& clean_x, std::optional<Eigen::VectorXd> latent_target) {
  return [=](const Eigen::VectorXd& input, const Eigen::VectorXd& features, const Eigen::VectorXd& logits) {
    return attack_objective(method, ctx, lambda, p_norm, clean_x, latent_target, input, features, logits);
  };
}

AttackState start_attack(const Eigen::VectorXd& x, const AttackConfig& cfg, std::mt19937_64& rng) {
  AttackState state;
  state.delta = clamp_perturbation(x, init_perturbation(x.size(), cfg.init_noise_sigma, rng));
  state.optimizer = AdamState(x.size(), AdamConfig{cfg.step_size, 0.9, 0.999, 1e-8});
  return state;
}

namespace {

IterationRecord observe(const Eigen::VectorXd& logits, AttackState& state, const AttackContext& ctx) {
  IterationRecord rec;
  rec.iter = state.iter;
  rec.l1 = state.delta.lpNorm<1>();
  rec.l2 = state.delta.norm();
  rec.linf = state.delta.size() ? state.delta.lpNorm<Eigen::Infinity>() : 0.0;
  rec.order_ok = check_order(logits, ctx.targets);
  if (rec.order_ok) {
    if (!state.first_success) state.first_success = state.iter;
    if (!state.best || rec.l2 < state.best->l2) state.best = BestIterate{state.delta, rec.l2, state.iter};
  }
  return rec;
}

}  // namespace

IterationRecord attack_step(const Model& model, const Eigen::VectorXd& x, AttackState& state,
                            const AttackContext& ctx, const AttackConfig& cfg, double lambda) {
  const Eigen::VectorXd x_hat = x + state.delta;
  const ForwardResult fr = forward(model, Tensor::from_vector(x_hat));
  const Eigen::VectorXd features = fr.features.vec();
  const Eigen::VectorXd logits = fr.logits.vec();
  IterationRecord rec = observe(logits, state, ctx);

  if (cfg.method == Method::QuadAttack) {
    const qp::Problem prob = build_qp(ctx.order, model.head_A, model.head_B, features, cfg.margin);
    std::optional<qp::Solution> sol;
    try {
      sol = qp::solve(prob, cfg.solver);
      rec.qp_status = sol->status;
    } catch (const NumericError&) {
      rec.qp_status.reset();
    }
    if (sol && sol->status == qp::Status::Optimal) {
      state.latent_target = sol->z;
    } else {
      rec.reused_target = state.latent_target.has_value();
    }
  }

  const LossEval loss = attack_objective(cfg.method, ctx, lambda, cfg.p_norm, x, state.latent_target, x_hat, features,
                                         logits, &rec.attack_term, &rec.penalty);
  rec.loss = loss.value;
  if (!std::isfinite(loss.value)) throw NumericError("attack: non-finite loss at iteration " + std::to_string(state.iter));

  const Tensor gl = Tensor::from_vector(loss.grad_logits);
  const Tensor gf = Tensor::from_vector(loss.grad_features);
  Gradients grads = backward(model, fr.trace, gl, &gf, BackwardScope::InputOnly);
  grads.input += loss.grad_input;

  Eigen::VectorXd delta = state.delta;
  state.optimizer.step(delta, grads.input);
  state.delta = clamp_perturbation(x, delta);
  ++state.iter;
  return rec;
}

IterationRecord quadattack_step(const Model& model, const Eigen::VectorXd& x, AttackState& state,
                                const AttackContext& ctx, const AttackConfig& cfg) {
  if (cfg.method != Method::QuadAttack) throw ValidationError("quadattack_step: config method is not quadattack");
  return attack_step(model, x, state, ctx, cfg, cfg.lambda);
}

IterationRecord finish_attack(const Model& model, const Eigen::VectorXd& x, AttackState& state,
                              const AttackContext& ctx) {
  const Eigen::VectorXd logits = logits_of(model, x + state.delta);
  IterationRecord rec = observe(logits, state, ctx);
  rec.loss = std::nan("");
  return rec;
}

bool verify_success(const Model& model, const Eigen::VectorXd& x, const Eigen::VectorXd& delta,
                    const TargetList& targets) {
  return check_order(logits_of(model, x + delta), targets);
}

namespace {

void fill_energies(AttackResult& r) {
  r.l1 = r.delta.lpNorm<1>();
  r.l2 = r.delta.norm();
  r.linf = r.delta.size() ? r.delta.lpNorm<Eigen::Infinity>() : 0.0;
}

}  // namespace

AttackResult run_assignment(const Model& model, const Eigen::VectorXd& x, const TargetList& targets,
                            const AttackConfig& cfg, std::size_t assignment_index,
                            std::vector<IterationRecord>* trace) {
  cfg.validate();
  targets.validate();
  if (static_cast<std::size_t>(x.size()) != model.input_dim()) throw DimensionError("attack: input size mismatch");
  if (targets.num_classes != model.num_classes()) throw DimensionError("attack: target list class count mismatch");

  const double lambda = cfg.assignment_lambda(assignment_index);
  std::mt19937_64 rng(cfg.seed);
  AttackState state = start_attack(x, cfg, rng);
  AttackResult result;
  result.assignment_index = assignment_index;
  result.lambda = lambda;
  if (cfg.steps == 0) {
    result.delta = state.delta;
    fill_energies(result);
    return result;
  }

  const AttackContext ctx = AttackContext::make(targets, cfg);
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    IterationRecord rec = attack_step(model, x, state, ctx, cfg, lambda);
    if (trace) trace->push_back(std::move(rec));
    if (cfg.warmup_steps > 0 && state.iter == cfg.warmup_steps) state.optimizer.reset();
  }
  IterationRecord last = finish_attack(model, x, state, ctx);
  if (trace) trace->push_back(std::move(last));

  result.iterations = state.iter;
  result.iterations_to_first_success = state.first_success;
  if (state.best) {
    result.delta = state.best->delta;
    result.success = verify_success(model, x, result.delta, targets);
  } else {
    result.delta = state.delta;
  }
  fill_energies(result);
  return result;
}

std::vector<AttackResult> run_assignments(const Model& model, const Eigen::VectorXd& x, const TargetList& targets,
                                          const AttackConfig& cfg) {
  std::vector<AttackResult> out;
  out.reserve(cfg.num_assignments);
  for (std::size_t a = 0; a < cfg.num_assignments; ++a) out.push_back(run_assignment(model, x, targets, cfg, a));
  return out;
}

AttackResult reduce_assignments(const std::vector<AttackResult>& results) {
  if (results.empty()) throw ValidationError("reduce_assignments: no results");
  const AttackResult* best = nullptr;
  for (const auto& r : results) {
    if (r.success && (!best || r.l2 < best->l2)) best = &r;
  }
  return best ? *best : results.front();
}

AttackResult run_attack(const Model& model, const Eigen::VectorXd& x, const TargetList& targets,
                        const AttackConfig& cfg) {
  return reduce_assignments(run_assignments(model, x, targets, cfg));
}

void write_trace(std::ostream& out, const std::vector<IterationRecord>& records) {
  for (const auto& r : records) {
    nlohmann::json j{{"iter", r.iter},       {"attack_term", r.attack_term}, {"penalty", r.penalty},
                     {"l1", r.l1},           {"l2", r.l2},                   {"linf", r.linf},
                     {"order_ok", r.order_ok}, {"reused_target", r.reused_target}};
    j["loss"] = std::isfinite(r.loss) ? nlohmann::json(r.loss) : nlohmann::json(nullptr);
    j["qp_status"] = r.qp_status ? nlohmann::json(qp::to_string(*r.qp_status)) : nlohmann::json(nullptr);
    out << j.dump() << '\n';
  }
}

}  // namespace quadattack
