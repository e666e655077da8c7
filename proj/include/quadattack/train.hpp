#pragma once

#include <cstddef>
#include <cstdint>

#include <Eigen/Core>

#include "quadattack/dataset.hpp"
#include "quadattack/model.hpp"

namespace quadattack {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 50;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Model model;
  double train_accuracy = 0.0;
  double final_loss = 0.0;
};

/// Mean softmax cross-entropy minimized with Adam over shuffled minibatches.
/// Deterministic for a fixed seed. Throws TrainingError on a non-finite loss.
TrainResult train_toy(const Dataset& data, const ArchSpec& arch, const TrainConfig& config);

double accuracy(const Model& model, const Dataset& data);

/// log-sum-exp stabilized log-softmax.
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);

}  // namespace quadattack
