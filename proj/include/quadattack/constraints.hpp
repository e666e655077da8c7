#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "quadattack/qp.hpp"

namespace quadattack {

/// Ordered attack targets (0-based class indices), most-preferred first.
struct TargetList {
  std::vector<std::size_t> targets;
  std::optional<std::size_t> ground_truth;
  std::size_t num_classes = 0;

  std::size_t k() const { return targets.size(); }

  /// 1 <= K <= C-1, targets distinct and in range, ground truth (when set)
  /// in range and not targeted. Throws ValidationError.
  void validate() const;

  /// Classes not in `targets`, ascending.
  std::vector<std::size_t> complement() const;

  bool operator==(const TargetList&) const = default;
};

/// 1-based (CLI/report) <-> 0-based (internal) class indices.
std::vector<std::size_t> to_zero_based(const std::vector<std::size_t>& one_based);
std::vector<std::size_t> to_one_based(const std::vector<std::size_t>& zero_based);

/// (C-1) x C signed incidence matrix: D * l > 0 elementwise iff the top-K
/// logits are exactly `targets` in order. Rows 0..K-2 encode t_i > t_{i+1};
/// the remaining rows encode t_K > j for each non-target j in ascending order.
struct OrderMatrix {
  Eigen::MatrixXd rows;
  TargetList source;
};

OrderMatrix build_order_matrix(const TargetList& targets);

/// Latent projection problem for the current features `z_bar`:
/// Q = 2I, p = -2 z_bar, G = -D A, h = D B - margin * 1, no equality block.
qp::Problem build_qp(const OrderMatrix& order, const Eigen::MatrixXd& head_A, const Eigen::VectorXd& head_B,
                     const Eigen::VectorXd& z_bar, double margin);

/// True iff the K largest logits, by descending value, are exactly the
/// targets in order. Ties anywhere in the comparison give false.
bool check_order(const Eigen::VectorXd& logits, const TargetList& targets);

}  // namespace quadattack
