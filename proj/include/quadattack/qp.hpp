#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace quadattack::qp {

/// minimize 0.5 z'Qz + p'z  subject to  Gz <= h,  Wz = b.
/// W and b are empty when there is no equality block.
struct Problem {
  Eigen::MatrixXd Q;
  Eigen::VectorXd p;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  Eigen::MatrixXd W;
  Eigen::VectorXd b;

  Eigen::Index dim() const { return p.size(); }
  Eigen::Index num_inequalities() const { return h.size(); }
  Eigen::Index num_equalities() const { return b.size(); }

  /// Shape and symmetry checks (Q symmetric within 1e-12). Throws
  /// DimensionError or ValidationError.
  void validate() const;
  double objective(const Eigen::VectorXd& z) const;
};

enum class Status { Optimal, Infeasible, MaxIter };
std::string to_string(Status s);

struct SolverConfig {
  double tol = 1e-8;
  int max_iter = 100;
  double static_regularization = 1e-10;
  /// Re-solve the equality system on the detected active set after
  /// convergence; kept only if it also satisfies every KKT residual.
  bool polish = true;
  /// Dual objective magnitude past which a stalled primal residual is
  /// reported as infeasibility.
  double infeasibility_threshold = 1e8;

  void validate() const;
};

struct Solution {
  Eigen::VectorXd z;
  Eigen::VectorXd ineq_duals;  // lambda >= 0
  Eigen::VectorXd eq_duals;    // nu
  Eigen::VectorXd slacks;      // h - Gz at the returned point
  Status status = Status::MaxIter;
  int iterations = 0;
  double kkt_residual = 0.0;  // max of the four residuals below
  bool polished = false;
  /// Average complementarity s'lambda/m at the start of every iteration.
  std::vector<double> gap_history;
  /// Iterations whose corrected direction could not decrease the gap; the
  /// step there is not gap-limited.
  std::vector<int> gap_relaxed_iterations;
  /// For Infeasible: h'y for the normalized dual ray y = lambda/||lambda||_1
  /// (negative when it certifies {Gz <= h} is empty) and ||G'y||_inf.
  double certificate_h_dot_y = 0.0;
  double certificate_residual = 0.0;
};

struct KktResiduals {
  double stationarity = 0.0;   // ||Qz + p + G'lambda + W'nu||_inf
  double primal_ineq = 0.0;    // ||max(0, Gz - h)||_inf
  double primal_eq = 0.0;      // ||Wz - b||_inf
  double dual = 0.0;           // ||min(0, lambda)||_inf
  double complementarity = 0.0;  // ||lambda .* (h - Gz)||_inf

  double primal() const { return std::max(primal_ineq, primal_eq); }
  double max() const;
};

KktResiduals kkt_residuals(const Problem& problem, const Eigen::VectorXd& z, const Eigen::VectorXd& lambda,
                           const Eigen::VectorXd& nu);
KktResiduals kkt_residuals(const Problem& problem, const Solution& solution);

/// Primal-dual interior point with Mehrotra predictor-corrector on the
/// reduced (z, nu) system. Starts from z = 0, s = lambda = 1, nu = 0.
/// Throws NumericError if the Newton system cannot be factored.
Solution solve(const Problem& problem, const SolverConfig& config = {});

struct BatchEntry {
  std::optional<Solution> solution;
  std::string error;  // set when solve threw
  bool ok() const { return solution.has_value(); }
};

/// Solves every problem independently; result i belongs to problem i. A
/// failing entry records its error and does not abort the others. `jobs`
/// bounds the worker threads; the output does not depend on it.
std::vector<BatchEntry> solve_batch(const std::vector<Problem>& problems, const SolverConfig& config = {},
                                    unsigned jobs = 1);

nlohmann::json problem_to_json(const Problem& problem);
Problem problem_from_json(const nlohmann::json& j);
void save_problem(const Problem& problem, const std::filesystem::path& path);
Problem load_problem(const std::filesystem::path& path);

}  // namespace quadattack::qp
