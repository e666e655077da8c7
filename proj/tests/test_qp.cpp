#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "quadattack/error.hpp"
#include "quadattack/qp.hpp"
#include "quadattack/selftest.hpp"
#include "support.hpp"

using namespace quadattack;
using namespace quadattack::qp;

namespace {

Problem projection(const Eigen::VectorXd& zbar, const Eigen::MatrixXd& G, const Eigen::VectorXd& h) {
  const Eigen::Index d = zbar.size();
  Problem p;
  p.Q = 2.0 * Eigen::MatrixXd::Identity(d, d);
  p.p = -2.0 * zbar;
  p.G = G;
  p.h = h;
  return p;
}

Problem halfspace(double bound) {
  Eigen::MatrixXd G(1, 2);
  G << 1, 0;
  return projection(Eigen::Vector2d::Zero(), G, Eigen::VectorXd::Constant(1, bound));
}

/// Random Q = 2I projection with a guaranteed-feasible polyhedron.
Problem random_projection(std::mt19937_64& rng, int max_dim, int max_ineq, int max_eq, bool with_eq) {
  const int d = std::uniform_int_distribution<int>(1, max_dim)(rng);
  const int m = std::uniform_int_distribution<int>(1, max_ineq)(rng);
  const Eigen::VectorXd z0 = qa_test::gaussian(rng, d);
  Eigen::MatrixXd G(m, d);
  for (int i = 0; i < m; ++i) G.row(i) = qa_test::gaussian(rng, d).transpose();
  Eigen::VectorXd h = G * z0;
  std::uniform_real_distribution<double> slack(0.0, 1.0);
  for (int i = 0; i < m; ++i) h(i) += slack(rng);
  Problem p = projection(qa_test::gaussian(rng, d, 2.0), G, h);
  const int e = with_eq ? std::min(std::uniform_int_distribution<int>(0, max_eq)(rng), d - 1) : 0;
  p.W.resize(e, d);
  for (int i = 0; i < e; ++i) p.W.row(i) = qa_test::gaussian(rng, d).transpose();
  p.b = p.W * z0;
  return p;
}

}  // namespace

TEST_CASE("inactive constraint leaves the unconstrained minimizer") {
  const Solution s = solve(halfspace(5.0));
  REQUIRE(s.status == Status::Optimal);
  CHECK(s.z.lpNorm<Eigen::Infinity>() <= 1e-9);
}

TEST_CASE("half-space projection") {
  const Solution s = solve(halfspace(-1.0));
  REQUIRE(s.status == Status::Optimal);
  CHECK(s.z(0) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(std::abs(s.z(1)) <= 1e-12);
  CHECK(s.ineq_duals(0) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("kkt residuals on hand-solved systems") {
  const Problem p = halfspace(-1.0);
  const Eigen::VectorXd nu(0);
  const KktResiduals r = kkt_residuals(p, Eigen::Vector2d(-1, 0), Eigen::VectorXd::Constant(1, 2.0), nu);
  CHECK(r.stationarity == 0.0);
  CHECK(r.primal() == 0.0);
  CHECK(r.dual == 0.0);
  CHECK(r.complementarity == 0.0);

  const Problem free = halfspace(5.0);
  CHECK(kkt_residuals(free, Eigen::Vector2d::Zero(), Eigen::VectorXd::Zero(1), nu).max() == 0.0);
  const double base = kkt_residuals(free, Eigen::Vector2d::Zero(), Eigen::VectorXd::Zero(1), nu).stationarity;
  CHECK(kkt_residuals(free, Eigen::Vector2d(0.1, 0), Eigen::VectorXd::Zero(1), nu).stationarity > base);
}

TEST_CASE("feasible reference point is returned unchanged") {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 200; ++i) {
    const int d = std::uniform_int_distribution<int>(1, 8)(rng);
    const int m = std::uniform_int_distribution<int>(1, 6)(rng);
    const Eigen::VectorXd zbar = qa_test::gaussian(rng, d);
    Eigen::MatrixXd G(m, d);
    for (int r = 0; r < m; ++r) G.row(r) = qa_test::gaussian(rng, d).transpose();
    Eigen::VectorXd h = G * zbar + Eigen::VectorXd::Constant(m, 0.5);
    const Solution s = solve(projection(zbar, G, h));
    REQUIRE(s.status == Status::Optimal);
    CHECK((s.z - zbar).lpNorm<Eigen::Infinity>() <= 1e-9);
  }
}

TEST_CASE("random D=4 m=3 problems match the enumeration oracle objective") {
  std::mt19937_64 rng(32);
  for (int i = 0; i < 200; ++i) {
    Problem p = random_projection(rng, 4, 3, 0, false);
    const Solution s = solve(p);
    REQUIRE(s.status == Status::Optimal);
    const Eigen::VectorXd oracle = qa_test::projection_oracle(-0.5 * p.p, p.G, p.h, p.W, p.b);
    CHECK(p.objective(s.z) == doctest::Approx(p.objective(oracle)).epsilon(1e-6));
  }
}

TEST_CASE("projection with equality rows matches the oracle") {
  std::mt19937_64 rng(33);
  for (int i = 0; i < 200; ++i) {
    const Problem p = random_projection(rng, 8, 6, 3, true);
    const Solution s = solve(p);
    REQUIRE(s.status == Status::Optimal);
    const Eigen::VectorXd oracle = qa_test::projection_oracle(-0.5 * p.p, p.G, p.h, p.W, p.b);
    CHECK((s.z - oracle).lpNorm<Eigen::Infinity>() <= 1e-6);
  }
}

TEST_CASE("general PSD problems satisfy KKT to tolerance") {
  std::mt19937_64 rng(34);
  for (int i = 0; i < 200; ++i) {
    const Problem p = random_feasible_qp(rng, 32, 16, i % 2 ? 4 : 0, i % 3 ? 1e-2 : 0.0);
    const Solution s = solve(p);
    REQUIRE(s.status == Status::Optimal);
    const KktResiduals r = kkt_residuals(p, s);
    CHECK(r.max() <= 1e-8);
    CHECK(s.kkt_residual == r.max());
    CHECK((s.slacks - (p.h - p.G * s.z)).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("duality gap is nonincreasing across iterations") {
  std::mt19937_64 rng(35);
  const double eps = std::numeric_limits<double>::epsilon();
  std::size_t relaxed_total = 0, steps_total = 0;
  for (int i = 0; i < 200; ++i) {
    const Problem p = random_feasible_qp(rng, 16, 12, 0, 1e-2);
    const Solution s = solve(p, SolverConfig{1e-8, 100, 1e-10, false});
    REQUIRE(s.gap_history.size() >= 2);
    const auto& relaxed = s.gap_relaxed_iterations;
    for (std::size_t k = 1; k < s.gap_history.size(); ++k) {
      if (std::find(relaxed.begin(), relaxed.end(), static_cast<int>(k - 1)) != relaxed.end()) continue;
      CHECK(s.gap_history[k] <= s.gap_history[k - 1] * (1.0 + 10.0 * eps));
    }
    relaxed_total += relaxed.size();
    steps_total += s.gap_history.size() - 1;
  }
  MESSAGE("relaxed steps: " << relaxed_total << " of " << steps_total);
}

TEST_CASE("infeasible constraints are reported with a certificate") {
  Problem p;
  p.Q = Eigen::MatrixXd::Identity(2, 2);
  p.p = Eigen::Vector2d(1, -1);
  p.G.resize(2, 2);
  p.G << 1, 1, -1, -1;
  p.h = Eigen::Vector2d(-1, -1);  // x+y <= -1 and x+y >= 1
  const Solution s = solve(p);
  CHECK(s.status == Status::Infeasible);
  CHECK(s.certificate_h_dot_y < 0.0);
  CHECK(s.certificate_residual <= 1e-6);
}

TEST_CASE("iteration cap yields MaxIter rather than an error") {
  std::mt19937_64 rng(36);
  const Problem p = random_feasible_qp(rng, 20, 16, 0, 1e-2);
  SolverConfig c;
  c.max_iter = 1;
  CHECK(solve(p, c).status == Status::MaxIter);
}

TEST_CASE("validation errors") {
  Problem p = halfspace(1.0);
  p.Q(0, 1) = 1e-6;
  CHECK_THROWS_AS(solve(p), ValidationError);
  Problem q = halfspace(1.0);
  q.h = Eigen::Vector2d(1, 1);
  CHECK_THROWS_AS(solve(q), DimensionError);
  SolverConfig c;
  c.tol = 0.0;
  CHECK_THROWS_AS(solve(halfspace(1.0), c), ValidationError);
}

TEST_CASE("solve is deterministic") {
  std::mt19937_64 rng(37);
  const Problem p = random_feasible_qp(rng, 16, 10, 2, 1e-2);
  const Solution a = solve(p), b = solve(p);
  CHECK(a.z == b.z);
  CHECK(a.ineq_duals == b.ineq_duals);
}

TEST_CASE("batch solve equals the sequential loop") {
  std::mt19937_64 rng(38);
  std::vector<Problem> problems;
  for (int i = 0; i < 64; ++i) problems.push_back(random_feasible_qp(rng, 12, 8, 2, 1e-2));
  problems.push_back(problems.front());
  Problem bad = halfspace(1.0);
  bad.h = Eigen::Vector2d(1, 1);
  problems.push_back(bad);
  for (unsigned jobs : {1u, 4u}) {
    const auto batch = solve_batch(problems, {}, jobs);
    REQUIRE(batch.size() == problems.size());
    for (std::size_t i = 0; i + 1 < problems.size(); ++i) {
      REQUIRE(batch[i].solution.has_value());
      const Solution s = solve(problems[i]);
      CHECK(batch[i].solution->z == s.z);
      CHECK(batch[i].solution->ineq_duals == s.ineq_duals);
    }
    CHECK(batch[64].solution->z == batch[0].solution->z);
    CHECK_FALSE(batch.back().solution.has_value());
    CHECK_FALSE(batch.back().error.empty());
  }
  const auto one = solve_batch({problems[3]});
  CHECK(one.at(0).solution->z == solve(problems[3]).z);
}

TEST_CASE("problem dump and load round-trip") {
  std::mt19937_64 rng(39);
  const Problem p = random_feasible_qp(rng, 6, 4, 2, 1e-2);
  const auto path = qa_test::scratch_dir("qp") / "p.json";
  save_problem(p, path);
  const Problem back = load_problem(path);
  CHECK(back.Q == p.Q);
  CHECK(back.p == p.p);
  CHECK(back.G == p.G);
  CHECK(back.h == p.h);
  CHECK(back.W == p.W);
  CHECK(back.b == p.b);
}
