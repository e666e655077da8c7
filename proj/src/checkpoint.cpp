#include "quadattack/checkpoint.hpp"

#include <fstream>
#include <set>

#include "quadattack/error.hpp"

namespace quadattack {

using nlohmann::json;

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) values.push_back(m(r, c));
  return {{"shape", {m.rows(), m.cols()}}, {"values", values}};
}

json vector_json(const Eigen::VectorXd& v) {
  return {{"shape", {v.size()}}, {"values", std::vector<double>(v.data(), v.data() + v.size())}};
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
  const auto values = j.at("values").get<std::vector<double>>();
  if (shape.size() != 2 || static_cast<std::size_t>(shape[0] * shape[1]) != values.size()) {
    throw DimensionError("checkpoint: matrix shape does not match value count");
  }
  Eigen::MatrixXd m(shape[0], shape[1]);
  for (Eigen::Index r = 0; r < shape[0]; ++r)
    for (Eigen::Index c = 0; c < shape[1]; ++c) m(r, c) = values[static_cast<std::size_t>(r * shape[1] + c)];
  return m;
}

Eigen::VectorXd vector_from(const json& j) {
  const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
  const auto values = j.at("values").get<std::vector<double>>();
  if (shape.size() != 1 || static_cast<std::size_t>(shape[0]) != values.size()) {
    throw DimensionError("checkpoint: vector shape does not match value count");
  }
  return Eigen::Map<const Eigen::VectorXd>(values.data(), shape[0]);
}

}  // namespace

json arch_to_json(const ArchSpec& a) {
  return {{"kind", to_string(a.kind)},
          {"input_dim", a.input_dim},
          {"hidden", a.hidden},
          {"feature_dim", a.feature_dim},
          {"num_classes", a.num_classes},
          {"hidden_activation", to_string(a.hidden_activation)},
          {"feature_activation", to_string(a.feature_activation)},
          {"image_height", a.image_height},
          {"image_width", a.image_width},
          {"kernel", a.kernel}};
}

ArchSpec arch_from_json(const json& j) {
  static const std::set<std::string> known{"kind",          "input_dim",          "hidden",       "feature_dim",
                                           "num_classes",   "hidden_activation",  "feature_activation",
                                           "image_height",  "image_width",        "kernel"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown arch key '" + key + "'");
  }
  ArchSpec a;
  if (j.contains("kind")) a.kind = backbone_from_string(j.at("kind").get<std::string>());
  a.input_dim = j.value("input_dim", a.input_dim);
  a.hidden = j.value("hidden", a.hidden);
  a.feature_dim = j.value("feature_dim", a.feature_dim);
  a.num_classes = j.value("num_classes", a.num_classes);
  if (j.contains("hidden_activation")) a.hidden_activation = activation_from_string(j.at("hidden_activation"));
  if (j.contains("feature_activation")) a.feature_activation = activation_from_string(j.at("feature_activation"));
  a.image_height = j.value("image_height", a.image_height);
  a.image_width = j.value("image_width", a.image_width);
  a.kernel = j.value("kernel", a.kernel);
  return a;
}

json model_to_json(const Model& model) {
  json j;
  j["format"] = "quadattack-model";
  j["version"] = 1;
  j["arch"] = arch_to_json(model.arch);
  j["layers"] = json::array();
  for (const auto& l : model.layers) {
    j["layers"].push_back(
        {{"weight", matrix_json(l.weight)}, {"bias", vector_json(l.bias)}, {"activation", to_string(l.activation)}});
  }
  if (model.conv) {
    const auto& c = *model.conv;
    j["conv"] = {{"height", c.height},
                 {"width", c.width},
                 {"kernel", c.kernel},
                 {"filters", matrix_json(c.filters)},
                 {"bias", vector_json(c.bias)},
                 {"activation", to_string(c.activation)}};
  } else {
    j["conv"] = nullptr;
  }
  j["head_A"] = matrix_json(model.head_A);
  j["head_B"] = vector_json(model.head_B);
  return j;
}

Model model_from_json(const json& j) {
  if (j.value("format", "") != "quadattack-model") throw IoError("not a model checkpoint");
  Model m;
  m.arch = arch_from_json(j.at("arch"));
  for (const auto& lj : j.at("layers")) {
    m.layers.push_back({matrix_from(lj.at("weight")), vector_from(lj.at("bias")),
                        activation_from_string(lj.at("activation").get<std::string>())});
  }
  if (!j.at("conv").is_null()) {
    const auto& cj = j.at("conv");
    ConvLayer c;
    c.height = cj.at("height").get<std::size_t>();
    c.width = cj.at("width").get<std::size_t>();
    c.kernel = cj.at("kernel").get<std::size_t>();
    c.filters = matrix_from(cj.at("filters"));
    c.bias = vector_from(cj.at("bias"));
    c.activation = activation_from_string(cj.at("activation").get<std::string>());
    m.conv = std::move(c);
  }
  m.head_A = matrix_from(j.at("head_A"));
  m.head_B = vector_from(j.at("head_B"));
  m.validate();
  return m;
}

void save_model(const Model& model, const std::filesystem::path& path, const json& meta) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint to " + path.string());
  json j = model_to_json(model);
  if (meta.is_object()) j["meta"] = meta;
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed writing checkpoint to " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace quadattack
