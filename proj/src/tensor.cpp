#include "quadattack/tensor.hpp"

#include <functional>
#include <numeric>

#include "quadattack/error.hpp"

namespace quadattack {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape product " + std::to_string(shape_product(shape_)));
  }
}

Tensor Tensor::from_vector(const Eigen::VectorXd& v) {
  return Tensor({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

std::vector<double>& Tensor::grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  return *grad_;
}

void Tensor::zero_grad() { grad_.emplace(data_.size(), 0.0); }

void Tensor::accumulate_grad(const Eigen::VectorXd& g) {
  if (static_cast<std::size_t>(g.size()) != data_.size()) {
    throw DimensionError("gradient length does not match tensor size");
  }
  auto& buf = grad();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[static_cast<Eigen::Index>(i)];
}

}  // namespace quadattack
