#include "quadattack/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "quadattack/adam.hpp"
#include "quadattack/error.hpp"

namespace quadattack {

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

double accuracy(const Model& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += predict(model, data.input(i)) == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train_toy(const Dataset& data, const ArchSpec& arch_in, const TrainConfig& config) {
  data.validate();
  if (config.batch_size == 0) throw ValidationError("train: batch_size must be positive");
  ArchSpec arch = arch_in;
  if (arch.input_dim != data.input_dim()) throw DimensionError("train: arch input_dim differs from dataset");
  if (arch.num_classes != data.num_classes) throw DimensionError("train: arch num_classes differs from dataset");

  std::mt19937_64 rng(config.seed);
  Model model = Model::initialize(arch, rng);
  Eigen::VectorXd params = model.flat_parameters();
  AdamState adam(params.size(), AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8});

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double epoch_loss = 0.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      Gradients grads = Gradients::zeros_like(model);
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        const ForwardResult fr = forward(model, Tensor::from_vector(data.input(i)));
        const Eigen::VectorXd logp = log_softmax(fr.logits.vec());
        const double loss = -logp[static_cast<Eigen::Index>(data.labels[i])];
        if (!std::isfinite(loss)) throw TrainingError("non-finite training loss", static_cast<int>(epoch));
        epoch_loss += loss;
        Eigen::VectorXd g = logp.array().exp() * scale;
        g[static_cast<Eigen::Index>(data.labels[i])] -= scale;
        backward(model, fr.trace, Tensor::from_vector(g), nullptr, grads, BackwardScope::All);
      }
      adam.step(params, grads.flat_parameters());
      model.set_flat_parameters(params);
    }
    epoch_loss /= static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss) || !params.allFinite()) {
      throw TrainingError("training diverged", static_cast<int>(epoch));
    }
  }
  TrainResult result{std::move(model), 0.0, epoch_loss};
  result.train_accuracy = accuracy(result.model, data);
  return result;
}

}  // namespace quadattack
