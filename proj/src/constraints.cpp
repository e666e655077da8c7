#include "quadattack/constraints.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "quadattack/error.hpp"

namespace quadattack {

void TargetList::validate() const {
  if (num_classes < 2) throw ValidationError("targets: need at least 2 classes");
  if (targets.empty() || targets.size() > num_classes - 1) {
    throw ValidationError("targets: K must satisfy 1 <= K <= C-1 (K=" + std::to_string(targets.size()) +
                          ", C=" + std::to_string(num_classes) + ")");
  }
  std::set<std::size_t> seen;
  for (std::size_t t : targets) {
    if (t >= num_classes) throw ValidationError("targets: class index out of range");
    if (!seen.insert(t).second) throw ValidationError("targets: duplicate target " + std::to_string(t));
  }
  if (ground_truth) {
    if (*ground_truth >= num_classes) throw ValidationError("targets: ground truth out of range");
    if (seen.count(*ground_truth)) throw ValidationError("targets: ground truth must not be a target");
  }
}

std::vector<std::size_t> TargetList::complement() const {
  std::vector<bool> is_target(num_classes, false);
  for (std::size_t t : targets) is_target[t] = true;
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < num_classes; ++c)
    if (!is_target[c]) out.push_back(c);
  return out;
}

std::vector<std::size_t> to_zero_based(const std::vector<std::size_t>& one_based) {
  std::vector<std::size_t> out;
  out.reserve(one_based.size());
  for (std::size_t v : one_based) {
    if (v == 0) throw ValidationError("1-based class index must be >= 1");
    out.push_back(v - 1);
  }
  return out;
}

std::vector<std::size_t> to_one_based(const std::vector<std::size_t>& zero_based) {
  std::vector<std::size_t> out;
  out.reserve(zero_based.size());
  for (std::size_t v : zero_based) out.push_back(v + 1);
  return out;
}

OrderMatrix build_order_matrix(const TargetList& targets) {
  targets.validate();
  const auto C = static_cast<Eigen::Index>(targets.num_classes);
  OrderMatrix out{Eigen::MatrixXd::Zero(C - 1, C), targets};
  Eigen::Index row = 0;
  for (std::size_t i = 0; i + 1 < targets.k(); ++i, ++row) {
    out.rows(row, static_cast<Eigen::Index>(targets.targets[i])) = 1.0;
    out.rows(row, static_cast<Eigen::Index>(targets.targets[i + 1])) = -1.0;
  }
  const auto last = static_cast<Eigen::Index>(targets.targets.back());
  for (std::size_t j : targets.complement()) {
    out.rows(row, last) = 1.0;
    out.rows(row, static_cast<Eigen::Index>(j)) = -1.0;
    ++row;
  }
  return out;
}

qp::Problem build_qp(const OrderMatrix& order, const Eigen::MatrixXd& head_A, const Eigen::VectorXd& head_B,
                     const Eigen::VectorXd& z_bar, double margin) {
  const Eigen::Index C = order.rows.cols();
  const Eigen::Index D = z_bar.size();
  if (head_A.rows() != C || head_B.size() != C || head_A.cols() != D) {
    throw DimensionError("build_qp: head shapes do not match order matrix / features");
  }
  if (!(margin >= 0.0)) throw ValidationError("build_qp: margin must be nonnegative");
  qp::Problem prob;
  prob.Q = 2.0 * Eigen::MatrixXd::Identity(D, D);
  prob.p = -2.0 * z_bar;
  prob.G = -order.rows * head_A;
  prob.h = (order.rows * head_B).array() - margin;
  prob.W.resize(0, D);
  prob.b.resize(0);
  return prob;
}

bool check_order(const Eigen::VectorXd& logits, const TargetList& targets) {
  if (static_cast<std::size_t>(logits.size()) != targets.num_classes) {
    throw DimensionError("check_order: logit length does not match num_classes");
  }
  const std::size_t k = targets.k();
  if (k == 0 || k >= targets.num_classes) return false;
  std::vector<std::size_t> order(targets.num_classes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Only the first K+1 ranks matter: the top K and the runner-up.
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k + 1), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double la = logits[static_cast<Eigen::Index>(a)];
                      const double lb = logits[static_cast<Eigen::Index>(b)];
                      return la > lb || (la == lb && a < b);
                    });
  for (std::size_t i = 0; i < k; ++i) {
    if (order[i] != targets.targets[i]) return false;
    if (!(logits[static_cast<Eigen::Index>(order[i])] > logits[static_cast<Eigen::Index>(order[i + 1])])) return false;
  }
  return true;
}

}  // namespace quadattack
