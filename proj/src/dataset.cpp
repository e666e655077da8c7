#include "quadattack/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include <json.hpp>

#include "quadattack/error.hpp"

namespace quadattack {

void Dataset::validate() const {
  if (static_cast<std::size_t>(inputs.rows()) != labels.size()) {
    throw ValidationError("dataset: input rows and label count differ");
  }
  if (num_classes < 2) throw ValidationError("dataset: need at least 2 classes");
  for (std::size_t y : labels) {
    if (y >= num_classes) throw ValidationError("dataset: label out of range");
  }
  if (inputs.size() > 0 && (inputs.minCoeff() < 0.0 || inputs.maxCoeff() > 1.0 || !inputs.allFinite())) {
    throw ValidationError("dataset: inputs must lie in [0,1]");
  }
}

Dataset make_blobs(const BlobSpec& spec) {
  if (spec.num_classes < 2) throw ValidationError("blobs: num_classes must be at least 2");
  if (spec.samples == 0 || spec.input_dim == 0) throw ValidationError("blobs: samples and input_dim must be positive");
  if (!(spec.sigma >= 0.0) || !(spec.center_lo <= spec.center_hi) || spec.center_lo < 0.0 || spec.center_hi > 1.0) {
    throw ValidationError("blobs: invalid sigma or center range");
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> center_dist(spec.center_lo, spec.center_hi);
  std::normal_distribution<double> noise(0.0, spec.sigma);

  const auto C = static_cast<Eigen::Index>(spec.num_classes);
  const auto dim = static_cast<Eigen::Index>(spec.input_dim);
  Eigen::MatrixXd centers(C, dim);
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index j = 0; j < dim; ++j) centers(c, j) = center_dist(rng);

  Dataset data;
  data.num_classes = spec.num_classes;
  data.seed = spec.seed;
  data.inputs.resize(static_cast<Eigen::Index>(spec.samples), dim);
  data.labels.resize(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const std::size_t y = i % spec.num_classes;
    data.labels[i] = y;
    for (Eigen::Index j = 0; j < dim; ++j) {
      const double v = centers(static_cast<Eigen::Index>(y), j) + noise(rng);
      data.inputs(static_cast<Eigen::Index>(i), j) = std::clamp(v, 0.0, 1.0);
    }
  }
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path, const nlohmann::json& meta) {
  nlohmann::json j;
  j["format"] = "quadattack-dataset";
  j["version"] = 1;
  j["num_classes"] = data.num_classes;
  j["input_dim"] = data.input_dim();
  j["samples"] = data.size();
  j["seed"] = data.seed;
  j["labels"] = data.labels;
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(data.inputs.size()));
  for (Eigen::Index r = 0; r < data.inputs.rows(); ++r)
    for (Eigen::Index c = 0; c < data.inputs.cols(); ++c) flat.push_back(data.inputs(r, c));
  j["inputs"] = flat;
  if (meta.is_object()) j["meta"] = meta;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset to " + path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("failed writing dataset to " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "quadattack-dataset") throw IoError("not a dataset file: " + path.string());
  Dataset data;
  const auto n = j.at("samples").get<std::size_t>();
  const auto dim = j.at("input_dim").get<std::size_t>();
  data.num_classes = j.at("num_classes").get<std::size_t>();
  data.seed = j.at("seed").get<std::uint64_t>();
  data.labels = j.at("labels").get<std::vector<std::size_t>>();
  const auto flat = j.at("inputs").get<std::vector<double>>();
  if (flat.size() != n * dim || data.labels.size() != n) throw IoError("dataset size fields disagree with payload");
  data.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < dim; ++c)
      data.inputs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = flat[r * dim + c];
  data.validate();
  return data;
}

}  // namespace quadattack
