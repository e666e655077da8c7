#include "quadattack/cli.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "quadattack/checkpoint.hpp"
#include "quadattack/config.hpp"
#include "quadattack/error.hpp"
#include "quadattack/harness.hpp"
#include "quadattack/selftest.hpp"
#include "quadattack/train.hpp"

namespace quadattack {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_jobs) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "Master seed (config: seed)");
  if (with_jobs) cmd->add_option("--jobs", f.jobs, "Worker threads (config: jobs)")->check(CLI::PositiveNumber);
}

RunConfig load_config(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : RunConfig::load(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.jobs) c.jobs = *f.jobs;
  return c;
}

void echo(std::ostream& out, const RunConfig& c) {
  out << "effective config (hash " << c.hash() << "):\n" << c.to_json(true).dump(2) << '\n';
}

json meta(const RunConfig& c) { return {{"config_hash", c.hash()}, {"seed", c.seed}}; }

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

Dataset obtain_dataset(const RunConfig& c, std::ostream& out) {
  if (c.data.path) {
    out << "dataset: " << *c.data.path << '\n';
    return load_dataset(*c.data.path);
  }
  out << "dataset: generated in-process\n";
  return make_blobs(c.blob_spec());
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t = c.train;
  t.seed = c.seed;
  return t;
}

/// Loads the configured checkpoint; otherwise trains and saves to `fallback`.
/// With `reuse`, an existing `fallback` is loaded instead of retraining.
Model obtain_model(const RunConfig& c, const Dataset& data, const std::optional<fs::path>& fallback, bool reuse,
                   std::ostream& out) {
  if (c.model_path) {
    out << "model: " << *c.model_path << '\n';
    return load_model(*c.model_path);
  }
  if (reuse && fallback && fs::exists(*fallback)) {
    out << "model: " << fallback->string() << '\n';
    return load_model(*fallback);
  }
  TrainResult r = train_toy(data, c.arch, train_config(c));
  out << "model: trained in-process, train accuracy " << format_number(r.train_accuracy) << '\n';
  if (fallback) save_model(r.model, *fallback, meta(c));
  return std::move(r.model);
}

void check_shapes(const RunConfig& c, const Dataset& data) {
  if (data.num_classes != c.arch.num_classes || data.input_dim() != c.arch.input_dim) {
    throw ConfigError("dataset (" + std::to_string(data.num_classes) + " classes, dim " +
                      std::to_string(data.input_dim()) + ") does not match arch (" +
                      std::to_string(c.arch.num_classes) + " classes, dim " + std::to_string(c.arch.input_dim) + ")");
  }
}

void print_rows(std::ostream& out, const std::vector<MetricsRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(kAbsent); };
  for (const auto& r : rows) {
    out << r.protocol() << ' ' << to_string(r.method) << ' ' << r.budget.label() << "  best "
        << format_number(r.best.asr) << "  mean " << format_number(r.mean.asr) << " (l2 " << opt(r.mean.l2)
        << ")  worst " << format_number(r.worst.asr) << '\n';
  }
}

void write_traces(const fs::path& dir, const Model& model, const Dataset& data, const ExperimentConfig& ecfg,
                  const ExperimentResults& res) {
  // Traces cover the instances of the first evaluated image only.
  if (res.images.empty()) return;
  ensure_dir(dir);
  for (const auto& o : res.outcomes) {
    if (o.instance.image != res.images.front()) continue;
    AttackConfig cfg = ecfg.attack_config(o.method, o.instance.targets.k(), o.budget);
    cfg.seed = o.instance.seed;
    std::vector<IterationRecord> records;
    run_assignment(model, data.input(o.instance.image), o.instance.targets, cfg, o.result.assignment_index, &records);
    std::ostringstream name;
    name << to_string(o.method) << "_top" << o.instance.targets.k() << '_' << o.budget.label() << "_img"
         << o.instance.image << "_g" << o.instance.group << ".jsonl";
    std::ostringstream body;
    write_trace(body, records);
    write_file(dir / name.str(), body.str());
  }
}

int cmd_gen_data(const CommonFlags& f, const std::map<std::string, double>& overrides,
                 const std::optional<std::string>& out_path, std::ostream& out) {
  RunConfig c = load_config(f);
  if (out_path) c.data.path = *out_path;
  if (overrides.count("classes")) c.data.blobs.num_classes = static_cast<std::size_t>(overrides.at("classes"));
  if (overrides.count("samples")) c.data.blobs.samples = static_cast<std::size_t>(overrides.at("samples"));
  if (overrides.count("dims")) c.data.blobs.input_dim = static_cast<std::size_t>(overrides.at("dims"));
  if (overrides.count("sigma")) c.data.blobs.sigma = overrides.at("sigma");
  const fs::path path = c.data.path.value_or("data.json");
  echo(out, c);
  const Dataset d = make_blobs(c.blob_spec());
  save_dataset(d, path, meta(c));
  std::vector<std::size_t> counts(d.num_classes, 0);
  for (std::size_t y : d.labels) ++counts[y];
  out << "wrote " << path.string() << ": samples " << d.size() << ", classes " << d.num_classes << ", dims "
      << d.input_dim() << ", per-class";
  for (std::size_t n : counts) out << ' ' << n;
  out << '\n';
  return 0;
}

int cmd_train(const CommonFlags& f, const std::optional<std::string>& data_path,
              const std::optional<std::string>& out_path, std::ostream& out) {
  RunConfig c = load_config(f);
  if (data_path) c.data.path = *data_path;
  if (out_path) c.model_path = *out_path;
  const fs::path path = c.model_path.value_or("model.json");
  echo(out, c);
  const Dataset d = obtain_dataset(c, out);
  check_shapes(c, d);
  const TrainResult r = train_toy(d, c.arch, train_config(c));
  save_model(r.model, path, meta(c));
  out << "wrote " << path.string() << "\ntrain accuracy " << format_number(r.train_accuracy) << "\nfinal loss "
      << format_number(r.final_loss) << '\n';
  return 0;
}

int cmd_attack(const CommonFlags& f, std::ostream& out) {
  RunConfig c = load_config(f);
  if (f.out) c.out = *f.out;
  echo(out, c);
  const ExperimentConfig ecfg = c.experiment_config();
  ecfg.validate(c.arch.num_classes);
  const fs::path dir = c.out;
  ensure_dir(dir);
  const Dataset d = obtain_dataset(c, out);
  check_shapes(c, d);
  const Model model = obtain_model(c, d, dir / "model.json", false, out);
  const ExperimentResults res = run_experiment(model, d, ecfg);

  const std::string hash = c.hash();
  std::ostringstream csv, instances;
  write_report_csv(csv, res.rows, hash, c.seed);
  write_instances(instances, res.outcomes, hash, c.seed);
  json summary{{"config_hash", hash},
               {"seed", c.seed},
               {"config", c.to_json(false)},
               {"images", res.images.size()},
               {"instances", res.outcomes.size()},
               {"rows", rows_to_json(res.rows)}};
  write_file(dir / "report.csv", csv.str());
  write_file(dir / "instances.jsonl", instances.str());
  write_file(dir / "summary.json", summary.dump(2) + '\n');
  if (c.trace) write_traces(dir / "traces", model, d, ecfg, res);
  print_rows(out, res.rows);
  out << "wrote " << (dir / "report.csv").string() << ", " << (dir / "summary.json").string() << ", "
      << (dir / "instances.jsonl").string() << '\n';
  return 0;
}

int cmd_sweep(const CommonFlags& f, std::ostream& out) {
  RunConfig c = load_config(f);
  if (f.out) c.out = *f.out;
  echo(out, c);
  const ExperimentConfig ecfg = c.experiment_config();
  ecfg.validate(c.arch.num_classes);
  if (c.sweep.k < 1 || c.sweep.k >= c.arch.num_classes) throw ValidationError("sweep K must be in [1, C-1]");
  const fs::path dir = c.out;
  ensure_dir(dir);
  const Dataset d = obtain_dataset(c, out);
  check_shapes(c, d);
  const Model model = obtain_model(c, d, dir / "model.json", false, out);
  std::vector<TradeoffPoint> points;
  for (Method m : c.sweep.methods) {
    auto p = tradeoff_curve(model, d, ecfg, m, c.sweep.k, c.sweep.budget, c.sweep.values, c.sweep.grid);
    points.insert(points.end(), p.begin(), p.end());
  }
  const std::string hash = c.hash();
  std::ostringstream csv;
  write_tradeoff_csv(csv, points, hash, c.seed);
  json summary{{"config_hash", hash}, {"seed", c.seed}, {"config", c.to_json(false)}, {"points", tradeoff_to_json(points)}};
  write_file(dir / "tradeoff.csv", csv.str());
  write_file(dir / "tradeoff.json", summary.dump(2) + '\n');
  for (const auto& p : points) {
    out << to_string(p.method) << " top-" << p.k << " lambda " << format_number(p.lambda) << " step "
        << format_number(p.step_size) << "  asr " << format_number(p.asr) << "  mean l2 "
        << (p.mean_l2 ? format_number(*p.mean_l2) : std::string(kAbsent)) << '\n';
  }
  out << "wrote " << (dir / "tradeoff.csv").string() << '\n';
  return 0;
}

int cmd_report(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  RunConfig c = load_config(f);
  if (f.out) c.out = *f.out;
  echo(out, c);
  const fs::path dir = c.out;
  std::ifstream in(dir / "instances.jsonl");
  if (!in) throw IoError("cannot open " + (dir / "instances.jsonl").string());
  std::string header;
  std::getline(in, header);
  in.seekg(0);
  const json head = json::parse(header, nullptr, false);
  if (head.is_discarded() || !head.contains("config_hash")) throw IoError("instances file lacks a header line");
  if (head.at("config_hash").get<std::string>() != c.hash()) {
    err << "warning: instances were produced under config " << head.at("config_hash").get<std::string>()
        << ", current config is " << c.hash() << '\n';
  }
  const Dataset d = obtain_dataset(c, out);
  check_shapes(c, d);
  const Model model = obtain_model(c, d, dir / "model.json", true, out);
  std::vector<InstanceOutcome> outcomes = read_instances(in, d.num_classes);
  std::size_t changed = 0;
  std::vector<bool> before;
  for (const auto& o : outcomes) before.push_back(o.verified);
  reverify(model, d, outcomes);
  for (std::size_t i = 0; i < outcomes.size(); ++i) changed += before[i] != outcomes[i].verified;
  const auto rows = rows_from_outcomes(outcomes, c.experiment.groups_per_image);
  std::ostringstream csv;
  write_report_csv(csv, rows, c.hash(), c.seed);
  write_file(dir / "report_verified.csv", csv.str());
  print_rows(out, rows);
  out << "re-verified " << outcomes.size() << " instances, " << changed << " disagree with the stored flags\n"
      << "wrote " << (dir / "report_verified.csv").string() << '\n';
  return changed == 0 ? 0 : 1;
}

int cmd_selftest(const CommonFlags& f, const std::optional<std::string>& fault, std::ostream& out) {
  RunConfig c = load_config(f);
  SelftestOptions opt;
  opt.seed = c.seed;
  opt.inject_fault = fault;
  const auto results = run_selftest(opt);
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    failed += !r.passed;
  }
  out << results.size() - failed << '/' << results.size() << " checks passed\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ordered top-K adversarial attacks on a toy classifier"};
  app.require_subcommand(1);

  CommonFlags f;
  std::optional<std::string> out_path, data_path, fault;
  std::map<std::string, double> gen_overrides;
  std::optional<std::size_t> classes, samples, dims;
  std::optional<double> sigma;

  auto* gen = app.add_subcommand("gen-data", "Write a Gaussian-blob dataset");
  add_common(gen, f, false);
  gen->add_option("--classes", classes, "Number of classes (config: data.classes)");
  gen->add_option("--samples", samples, "Number of samples (config: data.samples)");
  gen->add_option("--dims", dims, "Input dimension (config: data.dims)");
  gen->add_option("--sigma", sigma, "Blob standard deviation (config: data.sigma)");
  gen->add_option("--out", out_path, "Dataset file (config: data.path)");

  auto* train = app.add_subcommand("train", "Train the toy classifier");
  add_common(train, f, false);
  train->add_option("--data", data_path, "Dataset file (config: data.path)");
  train->add_option("--out", out_path, "Checkpoint file (config: model.path)");

  auto* attack = app.add_subcommand("attack", "Run the evaluation protocol and write reports");
  add_common(attack, f, true);
  attack->add_option("--out", f.out, "Output directory (config: out)");

  auto* sweep = app.add_subcommand("sweep", "Trade-off curve over a lambda or step-size grid");
  add_common(sweep, f, true);
  sweep->add_option("--out", f.out, "Output directory (config: out)");

  auto* report = app.add_subcommand("report", "Re-verify stored perturbations and rebuild the report");
  add_common(report, f, false);
  report->add_option("--out", f.out, "Directory holding instances.jsonl (config: out)");

  auto* selftest = app.add_subcommand("selftest", "Run the built-in correctness checks");
  add_common(selftest, f, false);
  selftest->add_option("--inject-fault", fault, "Deliberately break one component")
      ->check(CLI::IsMember(selftest_faults()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  if (classes) gen_overrides["classes"] = static_cast<double>(*classes);
  if (samples) gen_overrides["samples"] = static_cast<double>(*samples);
  if (dims) gen_overrides["dims"] = static_cast<double>(*dims);
  if (sigma) gen_overrides["sigma"] = *sigma;

  try {
    if (gen->parsed()) return cmd_gen_data(f, gen_overrides, out_path, out);
    if (train->parsed()) return cmd_train(f, data_path, out_path, out);
    if (attack->parsed()) return cmd_attack(f, out);
    if (sweep->parsed()) return cmd_sweep(f, out);
    if (report->parsed()) return cmd_report(f, out, err);
    if (selftest->parsed()) return cmd_selftest(f, fault, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << '\n';
    return 2;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace quadattack
