#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "quadattack/qp.hpp"

namespace quadattack {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelftestOptions {
  std::uint64_t seed = 0;
  /// Deliberate defect for exercising the suite; see selftest_faults().
  std::optional<std::string> inject_fault;
};

/// Names of the built-in checks, in execution order.
const std::vector<std::string>& selftest_check_names();
/// Accepted values for SelftestOptions::inject_fault.
const std::vector<std::string>& selftest_faults();

/// Runs every built-in check. Throws ConfigError on an unknown fault name.
std::vector<CheckResult> run_selftest(const SelftestOptions& options = {});

/// Random convex QP with a known feasible point: Q = M M' + ridge * I (PSD),
/// h = G z0 + positive slack, b = W z0, and p chosen so a dual-feasible
/// point exists (bounded even when ridge = 0). Dimensions are drawn uniformly in
/// [1, max_dim] and [1, max_ineq]; up to max_eq (< dim) equality rows.
qp::Problem random_feasible_qp(std::mt19937_64& rng, int max_dim, int max_ineq, int max_eq, double ridge);

}  // namespace quadattack
