#include "quadattack/config.hpp"

#include <fstream>
#include <set>

#include "quadattack/checkpoint.hpp"
#include "quadattack/error.hpp"

namespace quadattack {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& target) {
  if (j.contains(key) && !j.at(key).is_null()) {
    try {
      target = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

std::string family_name(ArchFamily f) { return f == ArchFamily::Transformer ? "transformer" : "convolutional"; }

ArchFamily family_from(const std::string& s) {
  if (s == "transformer") return ArchFamily::Transformer;
  if (s == "convolutional") return ArchFamily::Convolutional;
  throw ConfigError("family must be convolutional or transformer");
}

std::string grid_name(GridKind g) { return g == GridKind::StepSize ? "step_size" : "lambda"; }

GridKind grid_from(const std::string& s) {
  if (s == "lambda") return GridKind::Lambda;
  if (s == "step_size") return GridKind::StepSize;
  throw ConfigError("sweep grid must be lambda or step_size");
}

std::vector<Method> methods_from(const json& j) {
  std::vector<Method> out;
  for (const auto& m : j) out.push_back(method_from_string(m.get<std::string>()));
  return out;
}

json methods_json(const std::vector<Method>& ms) {
  json arr = json::array();
  for (Method m : ms) arr.push_back(to_string(m));
  return arr;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j, {"seed", "jobs", "out", "data", "model", "arch", "train", "attack", "solver", "experiment", "sweep"},
                 "config");
  RunConfig c;
  try {
    read(j, "seed", c.seed);
    read(j, "jobs", c.jobs);
    read(j, "out", c.out);
    if (j.contains("data")) {
      const json& d = j.at("data");
      reject_unknown(d, {"path", "classes", "samples", "dims", "sigma", "center_lo", "center_hi", "seed"}, "data");
      if (d.contains("path") && !d.at("path").is_null()) c.data.path = d.at("path").get<std::string>();
      read(d, "classes", c.data.blobs.num_classes);
      read(d, "samples", c.data.blobs.samples);
      read(d, "dims", c.data.blobs.input_dim);
      read(d, "sigma", c.data.blobs.sigma);
      read(d, "center_lo", c.data.blobs.center_lo);
      read(d, "center_hi", c.data.blobs.center_hi);
      if (d.contains("seed") && !d.at("seed").is_null()) c.data.seed = d.at("seed").get<std::uint64_t>();
    }
    if (j.contains("model")) {
      reject_unknown(j.at("model"), {"path"}, "model");
      if (j.at("model").contains("path") && !j.at("model").at("path").is_null()) {
        c.model_path = j.at("model").at("path").get<std::string>();
      }
    }
    if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"));
    if (j.contains("train")) {
      const json& t = j.at("train");
      reject_unknown(t, {"epochs", "batch_size", "learning_rate"}, "train");
      read(t, "epochs", c.train.epochs);
      read(t, "batch_size", c.train.batch_size);
      read(t, "learning_rate", c.train.learning_rate);
    }
    AttackConfig& a = c.experiment.attack;
    if (j.contains("attack")) {
      const json& aj = j.at("attack");
      reject_unknown(aj,
                     {"step_size", "lambda", "margin", "warmup_steps", "p_norm", "init_noise_sigma", "lambda_lo",
                      "lambda_hi", "ad_decay", "ad_complement_mass", "ad_direction", "family"},
                     "attack");
      if (aj.contains("step_size")) {
        const json& g = aj.at("step_size");
        if (g.is_string() && g.get<std::string>() == "schedule") {
          c.experiment.step_size.reset();
        } else if (g.is_number()) {
          c.experiment.step_size = g.get<double>();
        } else {
          throw ConfigError("attack.step_size must be a number or \"schedule\"");
        }
      }
      if (aj.contains("lambda") && !aj.at("lambda").is_null()) c.experiment.lambda = aj.at("lambda").get<double>();
      read(aj, "margin", a.margin);
      read(aj, "warmup_steps", a.warmup_steps);
      if (aj.contains("p_norm")) {
        const json& p = aj.at("p_norm");
        a.p_norm = pnorm_from_string(p.is_string() ? p.get<std::string>() : std::to_string(p.get<int>()));
      }
      read(aj, "init_noise_sigma", a.init_noise_sigma);
      read(aj, "lambda_lo", a.lambda_lo);
      read(aj, "lambda_hi", a.lambda_hi);
      read(aj, "ad_decay", a.ad_decay);
      read(aj, "ad_complement_mass", a.ad_complement_mass);
      if (aj.contains("ad_direction")) a.ad_direction = kl_direction_from_string(aj.at("ad_direction").get<std::string>());
      if (aj.contains("family")) c.experiment.family = family_from(aj.at("family").get<std::string>());
    }
    if (j.contains("solver")) {
      const json& s = j.at("solver");
      reject_unknown(s, {"tol", "max_iter", "static_regularization", "polish"}, "solver");
      read(s, "tol", a.solver.tol);
      read(s, "max_iter", a.solver.max_iter);
      read(s, "static_regularization", a.solver.static_regularization);
      read(s, "polish", a.solver.polish);
    }
    if (j.contains("experiment")) {
      const json& e = j.at("experiment");
      reject_unknown(e, {"k_values", "methods", "budgets", "groups_per_image", "num_images", "trace"}, "experiment");
      read(e, "k_values", c.experiment.k_values);
      if (e.contains("methods")) c.experiment.methods = methods_from(e.at("methods"));
      if (e.contains("budgets")) {
        c.experiment.budgets.clear();
        for (const auto& b : e.at("budgets")) c.experiment.budgets.push_back(Budget::parse(b.get<std::string>()));
      }
      read(e, "groups_per_image", c.experiment.groups_per_image);
      read(e, "num_images", c.experiment.num_images);
      read(e, "trace", c.trace);
    }
    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      reject_unknown(s, {"methods", "K", "budget", "grid", "values"}, "sweep");
      if (s.contains("methods")) c.sweep.methods = methods_from(s.at("methods"));
      read(s, "K", c.sweep.k);
      if (s.contains("budget")) c.sweep.budget = Budget::parse(s.at("budget").get<std::string>());
      if (s.contains("grid")) c.sweep.grid = grid_from(s.at("grid").get<std::string>());
      read(s, "values", c.sweep.values);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json(bool runtime) const {
  const AttackConfig& a = experiment.attack;
  json j;
  j["seed"] = seed;
  if (runtime) {
    j["jobs"] = jobs;
    j["out"] = out;
  }
  j["data"] = {{"path", data.path ? json(*data.path) : json(nullptr)},
               {"classes", data.blobs.num_classes},
               {"samples", data.blobs.samples},
               {"dims", data.blobs.input_dim},
               {"sigma", data.blobs.sigma},
               {"center_lo", data.blobs.center_lo},
               {"center_hi", data.blobs.center_hi},
               {"seed", data.seed ? json(*data.seed) : json(nullptr)}};
  j["model"] = {{"path", model_path ? json(*model_path) : json(nullptr)}};
  j["arch"] = arch_to_json(arch);
  j["train"] = {{"epochs", train.epochs}, {"batch_size", train.batch_size}, {"learning_rate", train.learning_rate}};
  j["attack"] = {{"step_size", experiment.step_size ? json(*experiment.step_size) : json("schedule")},
                 {"lambda", experiment.lambda ? json(*experiment.lambda) : json(nullptr)},
                 {"margin", a.margin},
                 {"warmup_steps", a.warmup_steps},
                 {"p_norm", to_string(a.p_norm)},
                 {"init_noise_sigma", a.init_noise_sigma},
                 {"lambda_lo", a.lambda_lo},
                 {"lambda_hi", a.lambda_hi},
                 {"ad_decay", a.ad_decay},
                 {"ad_complement_mass", a.ad_complement_mass},
                 {"ad_direction", to_string(a.ad_direction)},
                 {"family", family_name(experiment.family)}};
  j["solver"] = {{"tol", a.solver.tol},
                 {"max_iter", a.solver.max_iter},
                 {"static_regularization", a.solver.static_regularization},
                 {"polish", a.solver.polish}};
  json budgets = json::array();
  for (const auto& b : experiment.budgets) budgets.push_back(b.label());
  j["experiment"] = {{"k_values", experiment.k_values},
                     {"methods", methods_json(experiment.methods)},
                     {"budgets", budgets},
                     {"groups_per_image", experiment.groups_per_image},
                     {"num_images", experiment.num_images},
                     {"trace", trace}};
  j["sweep"] = {{"methods", methods_json(sweep.methods)},
                {"K", sweep.k},
                {"budget", sweep.budget.label()},
                {"grid", grid_name(sweep.grid)},
                {"values", sweep.values}};
  return j;
}

std::string RunConfig::hash() const { return fnv1a_hex(to_json(false).dump()); }

BlobSpec RunConfig::blob_spec() const {
  BlobSpec b = data.blobs;
  b.seed = data.seed.value_or(seed);
  return b;
}

ExperimentConfig RunConfig::experiment_config() const {
  ExperimentConfig e = experiment;
  e.seed = seed;
  e.jobs = jobs;
  return e;
}

}  // namespace quadattack
