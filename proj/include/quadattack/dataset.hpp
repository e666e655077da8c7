#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace quadattack {

/// N x input_dim inputs in [0,1] with class labels in [0, num_classes).
struct Dataset {
  Eigen::MatrixXd inputs;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(inputs.cols()); }
  Eigen::VectorXd input(std::size_t i) const { return inputs.row(static_cast<Eigen::Index>(i)).transpose(); }

  /// Throws ValidationError on out-of-range values or inconsistent sizes.
  void validate() const;
};

/// Isotropic Gaussian blobs, one per class, clipped to [0,1]. Centers are drawn
/// uniformly from [center_lo, center_hi]^input_dim. Labels cycle 0..C-1.
struct BlobSpec {
  std::size_t num_classes = 10;
  std::size_t samples = 2000;
  std::size_t input_dim = 64;
  double sigma = 0.15;
  double center_lo = 0.2;
  double center_hi = 0.8;
  std::uint64_t seed = 0;
};

Dataset make_blobs(const BlobSpec& spec);

/// `meta`, when an object, is stored verbatim under "meta" and ignored on load.
void save_dataset(const Dataset& data, const std::filesystem::path& path, const nlohmann::json& meta = {});
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace quadattack
