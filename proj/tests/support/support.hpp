#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Core>

#include "quadattack/constraints.hpp"
#include "quadattack/dataset.hpp"
#include "quadattack/model.hpp"
#include "quadattack/qp.hpp"

namespace qa_test {

/// Straight-line re-evaluation of the logits straight from the parameters.
Eigen::VectorXd hand_logits(const quadattack::Model& m, const Eigen::VectorXd& x);

/// Projection of z_bar onto {Gz <= h, Wz = b} by enumerating every candidate
/// active set and keeping the closest feasible point.
Eigen::VectorXd projection_oracle(const Eigen::VectorXd& z_bar, const Eigen::MatrixXd& G, const Eigen::VectorXd& h,
                                  const Eigen::MatrixXd& W, const Eigen::VectorXd& b);

Eigen::VectorXd gaussian(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0);
quadattack::TargetList random_targets(std::mt19937_64& rng, std::size_t c, std::size_t k);

/// Toy classifier and data used by the attack-level tests: default blobs
/// (seed 1) and default architecture trained for 200 epochs (seed 2).
struct Toy {
  quadattack::Dataset data;
  quadattack::Model model;
  double accuracy = 0.0;
};
const Toy& toy();

std::filesystem::path golden_dir();
/// True when golden files should be rewritten rather than compared.
bool regenerate_golden();
/// Compares `text` with the named golden file, or rewrites it in regen mode.
/// Returns an empty string on match, otherwise a short description.
std::string check_golden(const std::string& name, const std::string& text);

std::string read_file(const std::filesystem::path& p);
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace qa_test
