#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace quadattack {

/// Row-major array of doubles tagged with its shape, with an optional
/// gradient buffer of identical shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor from_vector(const Eigen::VectorXd& v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  Eigen::Map<Eigen::VectorXd> vec() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
  Eigen::Map<const Eigen::VectorXd> vec() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  bool has_grad() const { return grad_.has_value(); }
  /// Zero-initialized on first access.
  std::vector<double>& grad();
  const std::optional<std::vector<double>>& grad_opt() const { return grad_; }
  void zero_grad();
  void clear_grad() { grad_.reset(); }
  /// Adds `g` into the gradient slot (allocating it if needed).
  void accumulate_grad(const Eigen::VectorXd& g);

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

}  // namespace quadattack
