#include "quadattack/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "quadattack/attack.hpp"
#include "quadattack/constraints.hpp"
#include "quadattack/error.hpp"
#include "quadattack/grad_check.hpp"
#include "quadattack/losses.hpp"
#include "quadattack/model.hpp"

namespace quadattack {

namespace {

using OrderBuilder = std::function<OrderMatrix(const TargetList&)>;

struct Suite {
  std::mt19937_64 rng;
  std::optional<std::string> fault;

  bool faulty(const char* name) const { return fault && *fault == name; }

  OrderMatrix order(const TargetList& t) const {
    OrderMatrix m = build_order_matrix(t);
    if (faulty("dt-sign")) m.rows.row(0) *= -1.0;
    return m;
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

TargetList random_targets(std::mt19937_64& rng, std::size_t c, std::size_t k) {
  std::vector<std::size_t> classes(c);
  for (std::size_t i = 0; i < c; ++i) classes[i] = i;
  std::shuffle(classes.begin(), classes.end(), rng);
  TargetList t;
  t.num_classes = c;
  t.targets.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(k));
  return t;
}

Eigen::VectorXd gaussian(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

CheckResult order_matrix_golden(Suite& s) {
  TargetList t{{1, 2, 0}, std::nullopt, 5};
  Eigen::MatrixXd expected(4, 5);
  expected << 0, 1, -1, 0, 0,  //
      -1, 0, 1, 0, 0,          //
      1, 0, 0, -1, 0,          //
      1, 0, 0, 0, -1;
  const OrderMatrix m = s.order(t);
  const bool ok = m.rows == expected;
  return {"order_matrix_golden", ok, ok ? "C=5 T=[2,3,1]" : "matrix differs from the hand-derived rows"};
}

CheckResult order_matrix_equivalence(Suite& s) {
  std::size_t mismatches = 0;
  const std::size_t draws = 20000;
  for (std::size_t i = 0; i < draws; ++i) {
    const std::size_t c = std::uniform_int_distribution<std::size_t>(2, 10)(s.rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, c - 1)(s.rng);
    const TargetList t = random_targets(s.rng, c, k);
    Eigen::VectorXd l = gaussian(s.rng, static_cast<Eigen::Index>(c));
    const bool via_matrix = ((s.order(t).rows * l).array() > 0.0).all();
    if (via_matrix != check_order(l, t)) ++mismatches;
  }
  return {"order_matrix_equivalence", mismatches == 0,
          std::to_string(mismatches) + " mismatches over " + std::to_string(draws) + " draws"};
}

CheckResult qp_kkt(Suite& s) {
  double worst = 0.0;
  std::size_t optimal = 0, total = 200;
  for (std::size_t i = 0; i < total; ++i) {
    qp::Problem p = random_feasible_qp(s.rng, 32, 16, i % 3 == 0 ? 3 : 0, 1e-2);
    qp::Solution sol = qp::solve(p);
    if (sol.status != qp::Status::Optimal) continue;
    ++optimal;
    if (s.faulty("qp-dual")) sol.ineq_duals = -sol.ineq_duals;
    worst = std::max(worst, qp::kkt_residuals(p, sol).max());
  }
  const bool ok = optimal == total && worst <= 1e-8;
  return {"qp_kkt", ok, std::to_string(optimal) + "/" + std::to_string(total) + " optimal, max residual " + fmt(worst)};
}

CheckResult qp_projection(Suite& s) {
  // Projection of z_bar onto the half-space a'z <= c has a closed form.
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Eigen::Index d = std::uniform_int_distribution<Eigen::Index>(1, 8)(s.rng);
    const Eigen::VectorXd a = gaussian(s.rng, d);
    const Eigen::VectorXd zbar = gaussian(s.rng, d);
    const double c = std::normal_distribution<double>(0.0, 1.0)(s.rng);
    qp::Problem p;
    p.Q = 2.0 * Eigen::MatrixXd::Identity(d, d);
    p.p = -2.0 * zbar;
    p.G = a.transpose();
    p.h = Eigen::VectorXd::Constant(1, c);
    const double excess = std::max(0.0, a.dot(zbar) - c);
    const Eigen::VectorXd expected = zbar - excess / a.squaredNorm() * a;
    const qp::Solution sol = qp::solve(p);
    if (sol.status != qp::Status::Optimal) return {"qp_projection", false, "non-optimal status on a feasible problem"};
    worst = std::max(worst, (sol.z - expected).lpNorm<Eigen::Infinity>());
  }
  return {"qp_projection", worst <= 1e-6, "max deviation " + fmt(worst)};
}

CheckResult qp_infeasible(Suite&) {
  // z <= -1 and -z <= -1 cannot both hold.
  qp::Problem p;
  p.Q = Eigen::MatrixXd::Identity(1, 1);
  p.p = Eigen::VectorXd::Zero(1);
  p.G.resize(2, 1);
  p.G << 1, -1;
  p.h = Eigen::VectorXd::Constant(2, -1.0);
  const qp::Solution sol = qp::solve(p);
  const bool ok = sol.status == qp::Status::Infeasible && sol.certificate_h_dot_y < 0.0;
  return {"qp_infeasible", ok, "status " + qp::to_string(sol.status) + ", h'y " + fmt(sol.certificate_h_dot_y)};
}

Model small_model(std::mt19937_64& rng, BackboneKind kind) {
  ArchSpec a;
  a.kind = kind;
  a.input_dim = 16;
  a.image_height = 4;
  a.image_width = 4;
  a.hidden = {12};
  a.feature_dim = 8;
  a.num_classes = 6;
  return Model::initialize(a, rng);
}

CheckResult backbone_gradients(Suite& s) {
  double worst = 0.0;
  for (BackboneKind kind : {BackboneKind::Mlp, BackboneKind::Conv}) {
    for (int i = 0; i < 10; ++i) {
      const Model m = small_model(s.rng, kind);
      const Eigen::VectorXd x = gaussian(s.rng, 16);
      for (const LossFn& f : {LossFn(feature_energy_loss), LossFn(logit_sum_loss)}) {
        LossFn loss = f;
        if (s.faulty("grad-sign")) {
          loss = [f](const Eigen::VectorXd& in, const Eigen::VectorXd& z, const Eigen::VectorXd& l) {
            LossEval e = f(in, z, l);
            e.grad_logits = -e.grad_logits;
            e.grad_features = -e.grad_features;
            return e;
          };
        }
        worst = std::max(worst, grad_check(m, x, loss, 1e-6));
      }
    }
  }
  return {"backbone_gradients", worst <= 1e-5, "max relative error " + fmt(worst)};
}

CheckResult attack_loss_gradients(Suite& s) {
  double worst = 0.0;
  for (Method method : {Method::QuadAttack, Method::CWK, Method::AD}) {
    for (int i = 0; i < 10; ++i) {
      const Model m = small_model(s.rng, BackboneKind::Mlp);
      const Eigen::VectorXd x = (gaussian(s.rng, 16, 0.2).array() + 0.5).matrix();
      const Eigen::VectorXd delta = gaussian(s.rng, 16, 0.05);
      TargetList t = random_targets(s.rng, 6, 3);
      AttackConfig cfg = AttackConfig::defaults(method, 3);
      const AttackContext ctx = AttackContext::make(t, cfg);
      std::optional<Eigen::VectorXd> zhat;
      if (method == Method::QuadAttack) zhat = gaussian(s.rng, 8);
      const LossFn loss = attack_loss_fn(method, ctx, cfg.lambda, cfg.p_norm, x, zhat);
      worst = std::max(worst, grad_check(m, x + delta, loss, 1e-6));
    }
  }
  return {"attack_loss_gradients", worst <= 1e-4, "max relative error " + fmt(worst)};
}

bool nonstrict_order(const Eigen::VectorXd& l, const TargetList& t) {
  for (std::size_t i = 0; i + 1 < t.k(); ++i)
    if (l(static_cast<Eigen::Index>(t.targets[i])) < l(static_cast<Eigen::Index>(t.targets[i + 1]))) return false;
  const double last = l(static_cast<Eigen::Index>(t.targets.back()));
  for (std::size_t j : t.complement())
    if (l(static_cast<Eigen::Index>(j)) > last) return false;
  return true;
}

CheckResult cw_zero_loss(Suite& s) {
  std::size_t mismatches = 0;
  for (std::size_t c = 2; c <= 5; ++c) {
    for (std::size_t k = 1; k < c; ++k) {
      for (int i = 0; i < 200; ++i) {
        const TargetList t = random_targets(s.rng, c, k);
        // Rounded logits make ties common.
        Eigen::VectorXd l = gaussian(s.rng, static_cast<Eigen::Index>(c)).array().round().matrix();
        if ((cw_topk_loss(l, t).value == 0.0) != nonstrict_order(l, t)) ++mismatches;
      }
    }
  }
  return {"cw_zero_loss", mismatches == 0, std::to_string(mismatches) + " mismatches"};
}

CheckResult ad_kl(Suite& s) {
  double worst_identity = 0.0, most_negative = 0.0;
  for (int i = 0; i < 200; ++i) {
    const TargetList t = random_targets(s.rng, 6, 2);
    const AdTargetDistribution d = ad_target_distribution(t, 0.5, 0.1);
    worst_identity = std::max(worst_identity, std::abs(ad_loss(d.probs.array().log().matrix(), d).value));
    most_negative = std::min(most_negative, ad_loss(gaussian(s.rng, 6, 3.0), d).value);
  }
  const bool ok = worst_identity <= 1e-12 && most_negative >= -1e-12;
  return {"ad_kl", ok, "identity " + fmt(worst_identity) + ", min " + fmt(most_negative)};
}

using Check = CheckResult (*)(Suite&);

const std::vector<std::pair<std::string, Check>>& checks() {
  static const std::vector<std::pair<std::string, Check>> list{
      {"order_matrix_golden", order_matrix_golden},
      {"order_matrix_equivalence", order_matrix_equivalence},
      {"qp_kkt", qp_kkt},
      {"qp_projection", qp_projection},
      {"qp_infeasible", qp_infeasible},
      {"backbone_gradients", backbone_gradients},
      {"attack_loss_gradients", attack_loss_gradients},
      {"cw_zero_loss", cw_zero_loss},
      {"ad_kl", ad_kl},
  };
  return list;
}

}  // namespace

const std::vector<std::string>& selftest_check_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& c : checks()) n.push_back(c.first);
    return n;
  }();
  return names;
}

const std::vector<std::string>& selftest_faults() {
  static const std::vector<std::string> faults{"dt-sign", "qp-dual", "grad-sign"};
  return faults;
}

std::vector<CheckResult> run_selftest(const SelftestOptions& options) {
  if (options.inject_fault) {
    const auto& f = selftest_faults();
    if (std::find(f.begin(), f.end(), *options.inject_fault) == f.end())
      throw ConfigError("unknown fault '" + *options.inject_fault + "'");
  }
  std::vector<CheckResult> results;
  for (const auto& [name, check] : checks()) {
    Suite suite{std::mt19937_64(options.seed ^ std::hash<std::string>{}(name)), options.inject_fault};
    try {
      results.push_back(check(suite));
    } catch (const std::exception& e) {
      results.push_back({name, false, std::string("threw: ") + e.what()});
    }
  }
  return results;
}

qp::Problem random_feasible_qp(std::mt19937_64& rng, int max_dim, int max_ineq, int max_eq, double ridge) {
  const int d = std::uniform_int_distribution<int>(1, max_dim)(rng);
  const int m = std::uniform_int_distribution<int>(1, max_ineq)(rng);
  const int e = std::min(std::uniform_int_distribution<int>(0, std::max(0, max_eq))(rng), d - 1);
  const int r = std::uniform_int_distribution<int>(1, d)(rng);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto mat = [&](int rows, int cols) {
    Eigen::MatrixXd x(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) x(i, j) = nd(rng);
    return x;
  };
  const Eigen::MatrixXd M = mat(d, r);
  qp::Problem p;
  p.Q = M * M.transpose() + ridge * Eigen::MatrixXd::Identity(d, d);
  p.Q = 0.5 * (p.Q + p.Q.transpose()).eval();
  p.G = mat(m, d);
  // p = -(Q w + G' l0) with l0 >= 0 makes the dual feasible, so the problem is bounded.
  Eigen::VectorXd l0(m);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < m; ++i) l0(i) = unit(rng);
  p.p = -(p.Q * mat(d, 1) + p.G.transpose() * l0);
  const Eigen::VectorXd z0 = mat(d, 1);
  p.h = p.G * z0;
  for (int i = 0; i < m; ++i) p.h(i) += unit(rng);
  if (e > 0) {
    p.W = mat(e, d);
    p.b = p.W * z0;
  } else {
    p.W.resize(0, d);
    p.b.resize(0);
  }
  return p;
}

}  // namespace quadattack
