#include <doctest.h>

#include <cmath>
#include <random>

#include "quadattack/constraints.hpp"
#include "quadattack/error.hpp"
#include "quadattack/losses.hpp"
#include "quadattack/qp.hpp"
#include "support.hpp"

using namespace quadattack;

namespace {

TargetList one_based(std::vector<std::size_t> t, std::size_t c) { return {to_zero_based(t), std::nullopt, c}; }

/// Hinge sum written out term by term.
double hinge_oracle(const Eigen::VectorXd& l, const TargetList& t) {
  double total = 0.0;
  for (std::size_t i = 1; i <= t.k(); ++i) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t c = 0; c < t.num_classes; ++c) {
      const bool in_prefix = std::find(t.targets.begin(), t.targets.begin() + static_cast<long>(i), c) !=
                             t.targets.begin() + static_cast<long>(i);
      if (in_prefix) {
        lo = std::min(lo, l(static_cast<Eigen::Index>(c)));
      } else {
        hi = std::max(hi, l(static_cast<Eigen::Index>(c)));
      }
    }
    total += std::max(0.0, hi - lo);
  }
  return total;
}

bool nonstrict_order(const Eigen::VectorXd& l, const TargetList& t) {
  for (std::size_t i = 0; i + 1 < t.k(); ++i)
    if (l(static_cast<Eigen::Index>(t.targets[i])) < l(static_cast<Eigen::Index>(t.targets[i + 1]))) return false;
  for (std::size_t j : t.complement())
    if (l(static_cast<Eigen::Index>(j)) > l(static_cast<Eigen::Index>(t.targets.back()))) return false;
  return true;
}

double kl_oracle(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) s += p(i) * std::log(p(i) / q(i));
  return s;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& l) {
  const Eigen::ArrayXd e = (l.array() - l.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

template <typename F>
Eigen::VectorXd numeric_grad(F f, const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("hinge loss worked example") {
  Eigen::VectorXd l(5);
  l << 0.3, 0.7, 0.5, 0.9, 0.1;
  const TargetList t = one_based({2, 3, 1}, 5);
  const ScalarGrad r = cw_topk_loss(l, t);
  CHECK(r.value == doctest::Approx(1.2).epsilon(1e-14));
  CHECK(r.value == doctest::Approx(hinge_oracle(l, t)).epsilon(1e-14));
}

TEST_CASE("hinge loss matches the oracle and its gradient on random logits") {
  std::mt19937_64 rng(51);
  for (int i = 0; i < 2000; ++i) {
    const TargetList t = qa_test::random_targets(rng, 7, 1 + static_cast<std::size_t>(i % 6));
    const Eigen::VectorXd l = qa_test::gaussian(rng, 7);
    const ScalarGrad r = cw_topk_loss(l, t);
    CHECK(r.value == doctest::Approx(hinge_oracle(l, t)).epsilon(1e-13));
    const Eigen::VectorXd n = numeric_grad([&](const Eigen::VectorXd& v) { return hinge_oracle(v, t); }, l);
    CHECK((r.grad - n).lpNorm<Eigen::Infinity>() <= 1e-6);
  }
}

TEST_CASE("hinge loss vanishes with positive margins") {
  Eigen::VectorXd l(5);
  l << 0.5, 0.9, 0.7, 0.2, 0.0;
  const ScalarGrad r = cw_topk_loss(l, one_based({2, 3, 1}, 5));
  CHECK(r.value == 0.0);
  CHECK(r.grad.isZero(0));
}

TEST_CASE("hinge loss is zero exactly on the non-strict order") {
  std::mt19937_64 rng(52);
  for (std::size_t c = 2; c <= 5; ++c) {
    for (std::size_t k = 1; k < c; ++k) {
      for (int i = 0; i < 1000; ++i) {
        const TargetList t = qa_test::random_targets(rng, c, k);
        Eigen::VectorXd l = qa_test::gaussian(rng, static_cast<Eigen::Index>(c));
        if (i % 2) l = l.array().round().matrix();
        CHECK((cw_topk_loss(l, t).value == 0.0) == nonstrict_order(l, t));
      }
    }
  }
}

TEST_CASE("failure mode: hinge gradient ignores satisfied internal margins") {
  // Predicted order 4 > 2 > 3 > 5 > 1 against targets [2, 3, 1].
  Eigen::VectorXd l(5);
  l << 0.1, 0.8, 0.6, 0.9, 0.3;
  const TargetList t = one_based({2, 3, 1}, 5);
  const ScalarGrad r = cw_topk_loss(l, t);
  Eigen::VectorXd expected(5);
  expected << -1, -1, -1, 3, 0;
  CHECK(r.grad == expected);
  CHECK(r.grad(1) - r.grad(2) == 0.0);  // along l2 - l3
  CHECK(r.grad(2) - r.grad(0) == 0.0);  // along l3 - l1

  // The latent projection keeps those pairs satisfied.
  const OrderMatrix d = build_order_matrix(t);
  const qp::Solution s = qp::solve(build_qp(d, Eigen::MatrixXd::Identity(5, 5), Eigen::VectorXd::Zero(5), l, 0.2));
  REQUIRE(s.status == qp::Status::Optimal);
  CHECK(s.z(1) - s.z(2) >= 0.2 - 1e-9);
  CHECK(s.z(2) - s.z(0) >= 0.2 - 1e-9);
  CHECK(check_order(s.z, t));
}

TEST_CASE("distillation target distribution examples") {
  const auto a = ad_target_distribution(one_based({2}, 3), 0.5, 0.1);
  CHECK((a.probs - Eigen::Vector3d(0.05, 0.9, 0.05)).lpNorm<Eigen::Infinity>() <= 1e-15);
  const auto b = ad_target_distribution(one_based({1, 2}, 4), 0.5, 0.1);
  CHECK((b.probs - Eigen::Vector4d(0.6, 0.3, 0.05, 0.05)).lpNorm<Eigen::Infinity>() <= 1e-15);
}

TEST_CASE("distillation target distribution invariants") {
  std::mt19937_64 rng(53);
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  int built = 0;
  for (int i = 0; i < 2000; ++i) {
    const std::size_t c = std::uniform_int_distribution<std::size_t>(2, 10)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, c - 1)(rng);
    const TargetList t = qa_test::random_targets(rng, c, k);
    const double rho = unit(rng), eps = unit(rng);
    AdTargetDistribution d;
    try {
      d = ad_target_distribution(t, rho, eps);
    } catch (const ValidationError&) {
      // Only parameter combinations that cannot keep t_K above the complement are rejected.
      const double total = (1.0 - std::pow(rho, static_cast<double>(k))) / (1.0 - rho);
      const double last = (1.0 - eps) * std::pow(rho, static_cast<double>(k - 1)) / total;
      CHECK(last <= eps / static_cast<double>(c - k) * (1.0 + 1e-12));
      continue;
    }
    ++built;
    CHECK(std::abs(d.probs.sum() - 1.0) <= 1e-12);
    for (std::size_t j = 0; j + 1 < k; ++j) CHECK(d.probs(t.targets[j]) > d.probs(t.targets[j + 1]));
    for (std::size_t j : t.complement()) {
      CHECK(d.probs(t.targets.back()) > d.probs(j));
      CHECK(d.probs(j) == doctest::Approx(eps / static_cast<double>(c - k)).epsilon(1e-14));
    }
  }
  CHECK(built > 500);
  CHECK_THROWS_AS(ad_target_distribution(one_based({1}, 3), 1.0, 0.1), ValidationError);
  CHECK_THROWS_AS(ad_target_distribution(one_based({1}, 3), 0.5, 0.0), ValidationError);
}

TEST_CASE("KL of uniform logits against a peaked distribution") {
  AdTargetDistribution d;
  d.probs = Eigen::Vector3d(0.9, 0.05, 0.05);
  const Eigen::VectorXd u = Eigen::Vector3d::Constant(1.0 / 3.0);
  const double oracle = kl_oracle(u, d.probs);
  CHECK(oracle == doctest::Approx(0.933661).epsilon(1e-6));
  CHECK(ad_loss(Eigen::Vector3d::Zero(), d).value == doctest::Approx(oracle).epsilon(1e-14));
}

TEST_CASE("KL identity, Gibbs inequality and gradients") {
  std::mt19937_64 rng(54);
  for (int i = 0; i < 10000; ++i) {
    const TargetList t = qa_test::random_targets(rng, 6, 1 + static_cast<std::size_t>(i % 3));
    for (KlDirection dir : {KlDirection::ModelToTarget, KlDirection::TargetToModel}) {
      AdTargetDistribution d = ad_target_distribution(t, 0.5, 0.1);
      d.direction = dir;
      const Eigen::VectorXd l = qa_test::gaussian(rng, 6, 2.0);
      const ScalarGrad r = ad_loss(l, d);
      CHECK(r.value >= -1e-14);
      const Eigen::VectorXd p = softmax(l);
      const double oracle = dir == KlDirection::ModelToTarget ? kl_oracle(p, d.probs) : kl_oracle(d.probs, p);
      CHECK(r.value == doctest::Approx(oracle).epsilon(1e-9));
      if (i % 50 == 0) {
        const Eigen::VectorXd n = numeric_grad([&](const Eigen::VectorXd& v) { return ad_loss(v, d).value; }, l);
        CHECK((r.grad - n).lpNorm<Eigen::Infinity>() <= 1e-7);
        CHECK(std::abs(ad_loss(d.probs.array().log().matrix(), d).value) <= 1e-14);
      }
    }
  }
}

TEST_CASE("latent residual") {
  const ScalarGrad zero = latent_residual(Eigen::Vector2d(1, 2), Eigen::Vector2d(1, 2));
  CHECK(zero.value == 0.0);
  CHECK(zero.grad.isZero(0));
  const ScalarGrad r = latent_residual(Eigen::Vector2d(3, 4), Eigen::Vector2d::Zero());
  CHECK(r.value == 5.0);
  CHECK(r.grad == Eigen::Vector2d(0.6, 0.8));
  CHECK_THROWS_AS(latent_residual(Eigen::Vector2d(1, 2), Eigen::Vector3d::Zero()), DimensionError);
}

TEST_CASE("norm penalties and subgradients") {
  const Eigen::Vector3d d(3, 0, -4);
  CHECK(norm_penalty(d, PNorm::L1).value == 7.0);
  CHECK(norm_penalty(d, PNorm::L1).grad == Eigen::Vector3d(1, 0, -1));
  CHECK(norm_penalty(d, PNorm::L2).value == 5.0);
  CHECK(norm_penalty(d, PNorm::L2).grad == Eigen::Vector3d(0.6, 0, -0.8));
  CHECK(norm_penalty(d, PNorm::Linf).value == 4.0);
  CHECK(norm_penalty(d, PNorm::Linf).grad == Eigen::Vector3d(0, 0, -1));
  for (PNorm p : {PNorm::L1, PNorm::L2, PNorm::Linf}) {
    const ScalarGrad z = norm_penalty(Eigen::Vector3d::Zero(), p);
    CHECK(z.value == 0.0);
    CHECK(z.grad.isZero(0));
  }
}
