#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "quadattack/dataset.hpp"
#include "quadattack/harness.hpp"
#include "quadattack/model.hpp"
#include "quadattack/qp.hpp"
#include "quadattack/train.hpp"

namespace quadattack {

struct DataSection {
  std::optional<std::string> path;  // load from file; otherwise generate from the blob fields
  BlobSpec blobs;
  std::optional<std::uint64_t> seed;  // blob seed; defaults to the run seed
};

struct SweepSection {
  std::vector<Method> methods{Method::QuadAttack, Method::AD};
  std::size_t k = 3;
  Budget budget{1, 60};
  GridKind grid = GridKind::StepSize;
  std::vector<double> values{0.002, 0.003, 0.005, 0.0075, 0.01, 0.02};
};

/// Everything a CLI run needs. Serialized as JSON; unknown keys are rejected
/// at every level.
struct RunConfig {
  /// Toy-scale step size; "schedule" in JSON selects the K/family schedule.
  static constexpr double kToyStepSize = 0.01;

  RunConfig() { experiment.step_size = kToyStepSize; }

  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string out = "out";
  DataSection data;
  std::optional<std::string> model_path;
  ArchSpec arch;
  TrainConfig train;
  ExperimentConfig experiment;
  bool trace = false;  // write per-iteration attack traces
  SweepSection sweep;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  /// With `runtime` false, omits jobs and out (they do not affect results).
  nlohmann::json to_json(bool runtime = false) const;
  /// FNV-1a of to_json(false).dump().
  std::string hash() const;

  BlobSpec blob_spec() const;
  ExperimentConfig experiment_config() const;
};

}  // namespace quadattack
