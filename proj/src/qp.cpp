#include "quadattack/qp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "quadattack/error.hpp"

namespace quadattack::qp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(Status s) {
  switch (s) {
    case Status::Optimal:
      return "optimal";
    case Status::Infeasible:
      return "infeasible";
    case Status::MaxIter:
      return "max_iter";
  }
  return "unknown";
}

void Problem::validate() const {
  const Index n = p.size();
  if (Q.rows() != n || Q.cols() != n) throw DimensionError("qp: Q must be dim x dim");
  if (G.rows() != h.size() || (G.rows() > 0 && G.cols() != n)) throw DimensionError("qp: G must be m x dim with m = len(h)");
  if (W.rows() != b.size() || (W.rows() > 0 && W.cols() != n)) throw DimensionError("qp: W must be e x dim with e = len(b)");
  if (!Q.allFinite() || !p.allFinite() || !G.allFinite() || !h.allFinite() || !W.allFinite() || !b.allFinite()) {
    throw ValidationError("qp: non-finite problem data");
  }
  if (n > 0 && (Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw ValidationError("qp: Q is not symmetric");
}

double Problem::objective(const VectorXd& z) const { return 0.5 * z.dot(Q * z) + p.dot(z); }

void SolverConfig::validate() const {
  if (!(tol > 0.0)) throw ValidationError("qp: tol must be positive");
  if (max_iter < 1) throw ValidationError("qp: max_iter must be at least 1");
  if (!(static_regularization >= 0.0)) throw ValidationError("qp: static_regularization must be nonnegative");
}

double KktResiduals::max() const {
  return std::max({stationarity, primal_ineq, primal_eq, dual, complementarity});
}

namespace {

double inf_norm(const VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

VectorXd mul_t(const MatrixXd& M, const VectorXd& v, Index n) {
  return M.rows() ? VectorXd(M.transpose() * v) : VectorXd::Zero(n);
}

// Largest alpha in (0, 1] with v + alpha * dv >= 0.
double max_step(const VectorXd& v, const VectorXd& dv) {
  double alpha = 1.0;
  for (Index i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
  }
  return alpha;
}

// Factored reduced Newton matrix [[Q + reg I + G' diag(d) G, W'], [W, -reg I]].
class NewtonSystem {
 public:
  NewtonSystem(const Problem& prob, const VectorXd& d, double reg) : n_(prob.dim()), e_(prob.num_equalities()) {
    MatrixXd H = prob.Q;
    H.diagonal().array() += reg;
    if (prob.G.rows()) H.noalias() += prob.G.transpose() * d.asDiagonal() * prob.G;
    if (e_ == 0) {
      llt_.compute(H);
      use_llt_ = llt_.info() == Eigen::Success;
      if (!use_llt_) {
        ldlt_.compute(H);
        if (ldlt_.info() == Eigen::Success) return;
        // Near-singular Q: escalate the diagonal shift; the outer iteration
        // corrects the resulting inexact directions.
        const double scale = std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
        for (double shift = 1e-12 * scale; shift <= 1e-4 * scale; shift *= 100.0) {
          llt_.compute(H + shift * MatrixXd::Identity(n_, n_));
          if (llt_.info() == Eigen::Success) {
            use_llt_ = true;
            return;
          }
        }
        throw NumericError("qp: Newton system factorization failed");
      }
    } else {
      MatrixXd K = MatrixXd::Zero(n_ + e_, n_ + e_);
      K.topLeftCorner(n_, n_) = H;
      K.topRightCorner(n_, e_) = prob.W.transpose();
      K.bottomLeftCorner(e_, n_) = prob.W;
      K.bottomRightCorner(e_, e_).diagonal().setConstant(-std::max(reg, 1e-14));
      lu_.compute(K);
    }
  }

  // Returns (dz, dnu) for right-hand side (rz, re).
  std::pair<VectorXd, VectorXd> solve(const VectorXd& rz, const VectorXd& re) const {
    VectorXd dz, dnu;
    if (e_ == 0) {
      dz = use_llt_ ? VectorXd(llt_.solve(rz)) : VectorXd(ldlt_.solve(rz));
      dnu = VectorXd(0);
    } else {
      VectorXd rhs(n_ + e_);
      rhs << rz, re;
      const VectorXd sol = lu_.solve(rhs);
      dz = sol.head(n_);
      dnu = sol.tail(e_);
    }
    if (!dz.allFinite() || !dnu.allFinite()) throw NumericError("qp: Newton solve produced non-finite values");
    return {dz, dnu};
  }

 private:
  Index n_, e_;
  bool use_llt_ = false;
  Eigen::LLT<MatrixXd> llt_;
  Eigen::LDLT<MatrixXd> ldlt_;
  Eigen::PartialPivLU<MatrixXd> lu_;
};

struct Direction {
  VectorXd dz, ds, dlambda, dnu;
};

// Linearized KKT:  Q dz + G'dl + W'dnu = -rd;  G dz + ds = -rp;  W dz = -re;
// lambda.*ds + s.*dl = -rc.
Direction newton_direction(const Problem& prob, const NewtonSystem& sys, const VectorXd& s, const VectorXd& lambda,
                           const VectorXd& d, const VectorXd& rd, const VectorXd& rp, const VectorXd& re,
                           const VectorXd& rc) {
  VectorXd rz = -rd;
  VectorXd w;  // dl = d.*(G dz) + w
  if (prob.G.rows()) {
    w = d.cwiseProduct(rp) - rc.cwiseQuotient(s);
    rz -= prob.G.transpose() * w;
  }
  auto [dz, dnu] = sys.solve(rz, -re);
  Direction dir;
  dir.dz = std::move(dz);
  dir.dnu = std::move(dnu);
  if (prob.G.rows()) {
    dir.dlambda = d.cwiseProduct(prob.G * dir.dz) + w;
    dir.ds = -(rc + s.cwiseProduct(dir.dlambda)).cwiseQuotient(lambda);
  } else {
    dir.dlambda = VectorXd(0);
    dir.ds = VectorXd(0);
  }
  return dir;
}

// Equality-constrained re-solve on the active set {i : lambda_i > s_i}.
bool polish(const Problem& prob, const SolverConfig& config, Solution& sol) {
  const Index n = prob.dim(), m = prob.num_inequalities(), e = prob.num_equalities();
  std::vector<Index> active;
  for (Index i = 0; i < m; ++i)
    if (sol.ineq_duals[i] > sol.slacks[i]) active.push_back(i);
  const Index a = static_cast<Index>(active.size());
  MatrixXd K = MatrixXd::Zero(n + a + e, n + a + e);
  VectorXd rhs = VectorXd::Zero(n + a + e);
  K.topLeftCorner(n, n) = prob.Q;
  rhs.head(n) = -prob.p;
  for (Index k = 0; k < a; ++k) {
    K.block(n + k, 0, 1, n) = prob.G.row(active[static_cast<std::size_t>(k)]);
    K.block(0, n + k, n, 1) = prob.G.row(active[static_cast<std::size_t>(k)]).transpose();
    rhs[n + k] = prob.h[active[static_cast<std::size_t>(k)]];
  }
  if (e) {
    K.block(n + a, 0, e, n) = prob.W;
    K.block(0, n + a, n, e) = prob.W.transpose();
    rhs.tail(e) = prob.b;
  }
  Eigen::FullPivLU<MatrixXd> lu(K);
  if (!lu.isInvertible()) return false;
  const VectorXd x = lu.solve(rhs);
  if (!x.allFinite()) return false;

  VectorXd z = x.head(n);
  VectorXd lambda = VectorXd::Zero(m);
  for (Index k = 0; k < a; ++k) lambda[active[static_cast<std::size_t>(k)]] = x[n + k];
  VectorXd nu = x.tail(e);
  const KktResiduals r = kkt_residuals(prob, z, lambda, nu);
  if (r.max() > config.tol) return false;
  sol.z = std::move(z);
  sol.ineq_duals = std::move(lambda);
  sol.eq_duals = std::move(nu);
  sol.slacks = m ? VectorXd(prob.h - prob.G * sol.z) : VectorXd(0);
  sol.kkt_residual = r.max();
  sol.polished = true;
  return true;
}

}  // namespace

KktResiduals kkt_residuals(const Problem& prob, const VectorXd& z, const VectorXd& lambda, const VectorXd& nu) {
  const Index n = prob.dim();
  if (z.size() != n || lambda.size() != prob.num_inequalities() || nu.size() != prob.num_equalities()) {
    throw DimensionError("kkt_residuals: solution shape does not match problem");
  }
  KktResiduals r;
  VectorXd station = prob.Q * z + prob.p + mul_t(prob.G, lambda, n) + mul_t(prob.W, nu, n);
  r.stationarity = inf_norm(station);
  if (prob.G.rows()) {
    const VectorXd gap = prob.h - prob.G * z;
    r.primal_ineq = inf_norm((-gap).cwiseMax(0.0));
    r.dual = inf_norm(lambda.cwiseMin(0.0));
    r.complementarity = inf_norm(lambda.cwiseProduct(gap));
  }
  if (prob.W.rows()) r.primal_eq = inf_norm(prob.W * z - prob.b);
  return r;
}

KktResiduals kkt_residuals(const Problem& problem, const Solution& solution) {
  return kkt_residuals(problem, solution.z, solution.ineq_duals, solution.eq_duals);
}

Solution solve(const Problem& prob, const SolverConfig& config) {
  prob.validate();
  config.validate();
  const Index n = prob.dim(), m = prob.num_inequalities(), e = prob.num_equalities();

  VectorXd z = VectorXd::Zero(n);
  VectorXd s = VectorXd::Ones(m);
  VectorXd lambda = VectorXd::Ones(m);
  VectorXd nu = VectorXd::Zero(e);
  const double h_scale = 1.0 + inf_norm(prob.h) + inf_norm(prob.b);

  Solution sol;
  sol.status = Status::MaxIter;
  for (int iter = 0; iter <= config.max_iter; ++iter) {
    const VectorXd rd = prob.Q * z + prob.p + mul_t(prob.G, lambda, n) + mul_t(prob.W, nu, n);
    const VectorXd rp = m ? VectorXd(prob.G * z + s - prob.h) : VectorXd(0);
    const VectorXd re = e ? VectorXd(prob.W * z - prob.b) : VectorXd(0);
    const double mu = m ? s.dot(lambda) / static_cast<double>(m) : 0.0;
    sol.gap_history.push_back(mu);
    sol.iterations = iter;

    const KktResiduals res = kkt_residuals(prob, z, lambda, nu);
    if (res.max() <= config.tol) {
      sol.status = Status::Optimal;
      sol.kkt_residual = res.max();
      break;
    }
    const double dual_objective = -0.5 * z.dot(prob.Q * z) - (m ? prob.h.dot(lambda) : 0.0) - (e ? prob.b.dot(nu) : 0.0);
    const double scaled_primal = std::max(inf_norm(rp), inf_norm(re)) / h_scale;
    if (dual_objective > config.infeasibility_threshold && scaled_primal > config.tol) {
      sol.status = Status::Infeasible;
      sol.kkt_residual = res.max();
      const VectorXd y = lambda / lambda.lpNorm<1>();
      sol.certificate_h_dot_y = prob.h.dot(y);
      sol.certificate_residual = inf_norm(prob.G.transpose() * y);
      break;
    }
    if (iter == config.max_iter) {
      sol.kkt_residual = res.max();
      break;
    }

    const VectorXd d = m ? VectorXd(lambda.cwiseQuotient(s)) : VectorXd(0);
    const NewtonSystem sys(prob, d, config.static_regularization);

    // Predictor (affine scaling).
    const VectorXd rc_aff = s.cwiseProduct(lambda);
    const Direction aff = newton_direction(prob, sys, s, lambda, d, rd, rp, re, rc_aff);
    double sigma = 0.0;
    VectorXd rc = rc_aff;
    if (m) {
      const double alpha_aff = std::min(max_step(s, aff.ds), max_step(lambda, aff.dlambda));
      const double mu_aff =
          (s + alpha_aff * aff.ds).dot(lambda + alpha_aff * aff.dlambda) / static_cast<double>(m);
      sigma = std::pow(mu_aff / mu, 3);
      rc += aff.ds.cwiseProduct(aff.dlambda) - VectorXd::Constant(m, sigma * mu);
    }
    // Corrector.
    const Direction dir = m ? newton_direction(prob, sys, s, lambda, d, rd, rp, re, rc) : aff;
    double alpha = 1.0;
    if (m) {
      alpha = std::min(1.0, 0.99 * std::min(max_step(s, dir.ds), max_step(lambda, dir.dlambda)));
      // Gap along the step is s'l + a*b + a^2*c; keep it from growing when b < 0.
      const double b = s.dot(dir.dlambda) + lambda.dot(dir.ds);
      const double c = dir.ds.dot(dir.dlambda);
      if (b >= 0.0) {
        sol.gap_relaxed_iterations.push_back(iter);
      } else if (c > 0.0) {
        alpha = std::min(alpha, -b / c);
      }
    }

    z += alpha * dir.dz;
    if (e) nu += alpha * dir.dnu;
    if (m) {
      s += alpha * dir.ds;
      lambda += alpha * dir.dlambda;
    }
    if (!z.allFinite() || !s.allFinite() || !lambda.allFinite()) throw NumericError("qp: iterate became non-finite");
  }

  sol.z = z;
  sol.ineq_duals = lambda;
  sol.eq_duals = nu;
  sol.slacks = m ? VectorXd(prob.h - prob.G * z) : VectorXd(0);
  if (sol.status == Status::Optimal && config.polish) polish(prob, config, sol);
  return sol;
}

std::vector<BatchEntry> solve_batch(const std::vector<Problem>& problems, const SolverConfig& config, unsigned jobs) {
  std::vector<BatchEntry> out(problems.size());
  auto run = [&](std::size_t i) {
    try {
      out[i].solution = solve(problems[i], config);
    } catch (const std::exception& ex) {
      out[i].error = ex.what();
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(problems.size())));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < problems.size(); ++i) run(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (unsigned w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < problems.size(); i = next++) run(i);
    });
  }
  for (auto& t : workers) t.join();
  return out;
}

namespace {

nlohmann::json mat_json(const MatrixXd& M) {
  std::vector<double> v;
  for (Index r = 0; r < M.rows(); ++r)
    for (Index c = 0; c < M.cols(); ++c) v.push_back(M(r, c));
  return {{"shape", {M.rows(), M.cols()}}, {"values", v}};
}

nlohmann::json vec_json(const VectorXd& v) {
  return {{"shape", {v.size()}}, {"values", std::vector<double>(v.data(), v.data() + v.size())}};
}

MatrixXd mat_from(const nlohmann::json& j) {
  const auto shape = j.at("shape").get<std::vector<Index>>();
  const auto v = j.at("values").get<std::vector<double>>();
  if (shape.size() != 2 || static_cast<std::size_t>(shape[0] * shape[1]) != v.size()) {
    throw DimensionError("qp dump: matrix shape does not match values");
  }
  MatrixXd M(shape[0], shape[1]);
  for (Index r = 0; r < shape[0]; ++r)
    for (Index c = 0; c < shape[1]; ++c) M(r, c) = v[static_cast<std::size_t>(r * shape[1] + c)];
  return M;
}

VectorXd vec_from(const nlohmann::json& j) {
  const auto shape = j.at("shape").get<std::vector<Index>>();
  const auto v = j.at("values").get<std::vector<double>>();
  if (shape.size() != 1 || static_cast<std::size_t>(shape[0]) != v.size()) {
    throw DimensionError("qp dump: vector shape does not match values");
  }
  return Eigen::Map<const VectorXd>(v.data(), shape[0]);
}

}  // namespace

nlohmann::json problem_to_json(const Problem& p) {
  return {{"format", "quadattack-qp"}, {"version", 1},        {"Q", mat_json(p.Q)}, {"p", vec_json(p.p)},
          {"G", mat_json(p.G)},        {"h", vec_json(p.h)}, {"W", mat_json(p.W)}, {"b", vec_json(p.b)}};
}

Problem problem_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "quadattack-qp") throw IoError("not a QP dump");
  Problem p{mat_from(j.at("Q")), vec_from(j.at("p")), mat_from(j.at("G")),
            vec_from(j.at("h")), mat_from(j.at("W")), vec_from(j.at("b"))};
  // An empty W is stored as 0 x 0; give it the right column count.
  if (p.W.rows() == 0) p.W.resize(0, p.dim());
  if (p.G.rows() == 0) p.G.resize(0, p.dim());
  p.validate();
  return p;
}

void save_problem(const Problem& problem, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << problem_to_json(problem).dump() << '\n';
}

Problem load_problem(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw IoError("malformed QP dump " + path.string() + ": " + ex.what());
  }
  return problem_from_json(j);
}

}  // namespace quadattack::qp
