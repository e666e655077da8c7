#include "quadattack/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <numeric>
#include <thread>
#include <tuple>

#include "quadattack/error.hpp"

namespace quadattack {

using nlohmann::json;

std::string Budget::label() const { return std::to_string(assignments) + "x" + std::to_string(steps); }

Budget Budget::parse(const std::string& label) {
  const auto x = label.find('x');
  if (x == std::string::npos || x == 0 || x + 1 == label.size()) {
    throw ValidationError("budget must look like NxM, got '" + label + "'");
  }
  try {
    std::size_t used = 0;
    Budget b;
    b.assignments = std::stoul(label.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("n");
    const std::string tail = label.substr(x + 1);
    b.steps = std::stoul(tail, &used);
    if (used != tail.size()) throw std::invalid_argument("m");
    if (b.assignments < 1 || b.steps < 1) throw std::invalid_argument("zero");
    return b;
  } catch (const std::logic_error&) {
    throw ValidationError("budget must look like NxM with N, M >= 1, got '" + label + "'");
  }
}

void ExperimentConfig::validate(std::size_t num_classes) const {
  if (groups_per_image < 1) throw ValidationError("experiment: groups_per_image must be >= 1");
  if (num_images < 1) throw ValidationError("experiment: num_images must be >= 1");
  if (k_values.empty() || methods.empty() || budgets.empty()) {
    throw ValidationError("experiment: k_values, methods and budgets must be nonempty");
  }
  for (std::size_t k : k_values) {
    if (k < 1 || k + 1 > num_classes) {
      throw ValidationError("experiment: K=" + std::to_string(k) + " requires 1 <= K <= C-1 (C=" +
                            std::to_string(num_classes) + ")");
    }
  }
  for (const auto& b : budgets) {
    if (b.assignments < 1 || b.steps < 1) throw ValidationError("experiment: budgets need n, m >= 1");
  }
  for (std::size_t k : k_values)
    for (Method m : methods)
      for (const auto& b : budgets) attack_config(m, k, b).validate();
}

AttackConfig ExperimentConfig::attack_config(Method method, std::size_t k, const Budget& budget) const {
  AttackConfig cfg = attack;
  const AttackConfig d = AttackConfig::defaults(method, k, family);
  cfg.method = method;
  cfg.step_size = step_size.value_or(d.step_size);
  cfg.lambda = lambda.value_or(d.lambda);
  cfg.steps = budget.steps;
  cfg.num_assignments = budget.assignments;
  return cfg;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  h = mix(h ^ a);
  h = mix(h ^ b);
  h = mix(h ^ c);
  return h;
}

std::vector<std::size_t> select_correct(const Dataset& data, const Model& model) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (predict(model, data.input(i)) == data.labels[i]) out.push_back(i);
  if (out.empty()) throw ConfigError("no correctly classified samples to attack");
  return out;
}

std::vector<std::size_t> choose_images(const std::vector<std::size_t>& candidates, std::size_t count,
                                       std::mt19937_64& rng) {
  std::vector<std::size_t> pool = candidates;
  if (count < pool.size()) {
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(count);
  }
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<TargetList> sample_targets(std::size_t num_classes, std::size_t k, std::size_t ground_truth,
                                       std::size_t groups, std::mt19937_64& rng) {
  if (num_classes < 2 || k < 1 || k > num_classes - 1) {
    throw ValidationError("sample_targets: need 1 <= K <= C-1");
  }
  if (ground_truth >= num_classes) throw ValidationError("sample_targets: ground truth out of range");
  std::vector<TargetList> out;
  out.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<std::size_t> pool;
    for (std::size_t c = 0; c < num_classes; ++c)
      if (c != ground_truth) pool.push_back(c);
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    TargetList t{pool, ground_truth, num_classes};
    t.validate();
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Instance> build_instances(const Dataset& data, const std::vector<std::size_t>& images, std::size_t k,
                                      std::size_t groups, std::uint64_t seed) {
  std::vector<Instance> out;
  out.reserve(images.size() * groups);
  for (std::size_t image : images) {
    std::mt19937_64 rng(derive_seed(seed, image, k, 0x7a72));
    const auto lists = sample_targets(data.num_classes, k, data.labels[image], groups, rng);
    for (std::size_t g = 0; g < groups; ++g) out.push_back({image, g, lists[g], derive_seed(seed, image, g, k)});
  }
  return out;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> workers;
  for (unsigned w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = count;
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<InstanceOutcome> run_instances(const Model& model, const Dataset& data,
                                           const std::vector<Instance>& instances, const AttackConfig& cfg,
                                           const Budget& budget, unsigned jobs) {
  std::vector<InstanceOutcome> out(instances.size());
  parallel_for(instances.size(), jobs, [&](std::size_t i) {
    const Instance& inst = instances[i];
    AttackConfig c = cfg;
    c.seed = inst.seed;
    c.steps = budget.steps;
    c.num_assignments = budget.assignments;
    const Eigen::VectorXd x = data.input(inst.image);
    InstanceOutcome o;
    o.instance = inst;
    o.method = c.method;
    o.budget = budget;
    o.result = run_attack(model, x, inst.targets, c);
    o.verified = verify_success(model, x, o.result.delta, inst.targets);
    out[i] = std::move(o);
  });
  return out;
}

std::vector<AttackResult> budget_sweep(const Model& model, const Eigen::VectorXd& x, const TargetList& targets,
                                       AttackConfig cfg, std::size_t n, std::size_t m) {
  if (n < 1 || m < 1) throw ValidationError("budget_sweep: n and m must be >= 1");
  cfg.num_assignments = n;
  cfg.steps = m;
  return run_assignments(model, x, targets, cfg);
}

namespace {

GroupStats group_stats(const std::vector<Outcome>& group) {
  GroupStats s;
  std::size_t wins = 0;
  double l1 = 0, l2 = 0, linf = 0;
  for (const auto& o : group) {
    if (!o.success) continue;
    ++wins;
    l1 += o.l1;
    l2 += o.l2;
    linf += o.linf;
  }
  s.asr = group.empty() ? 0.0 : static_cast<double>(wins) / static_cast<double>(group.size());
  if (wins) {
    const double n = static_cast<double>(wins);
    s.l1 = l1 / n;
    s.l2 = l2 / n;
    s.linf = linf / n;
  }
  return s;
}

}  // namespace

MetricsRow aggregate(const std::vector<std::vector<Outcome>>& groups) {
  if (groups.empty()) throw ValidationError("aggregate: no groups");
  for (const auto& g : groups) {
    if (g.size() != groups.front().size()) throw DimensionError("aggregate: groups have unequal instance counts");
  }
  MetricsRow row;
  std::vector<GroupStats> stats;
  for (const auto& g : groups) stats.push_back(group_stats(g));
  std::size_t best = 0, worst = 0;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    row.group_asr.push_back(stats[i].asr);
    if (stats[i].asr > stats[best].asr) best = i;
    if (stats[i].asr < stats[worst].asr) worst = i;
  }
  row.best = stats[best];
  row.worst = stats[worst];
  row.mean.asr = std::accumulate(row.group_asr.begin(), row.group_asr.end(), 0.0) / static_cast<double>(stats.size());
  double l1 = 0, l2 = 0, linf = 0;
  std::size_t with = 0;
  for (const auto& s : stats) {
    if (!s.l2) continue;
    ++with;
    l1 += *s.l1;
    l2 += *s.l2;
    linf += *s.linf;
  }
  if (with) {
    row.mean.l1 = l1 / static_cast<double>(with);
    row.mean.l2 = l2 / static_cast<double>(with);
    row.mean.linf = linf / static_cast<double>(with);
  }
  std::vector<Outcome> pooled;
  for (const auto& g : groups) pooled.insert(pooled.end(), g.begin(), g.end());
  const GroupStats all = group_stats(pooled);
  row.l1_pooled = all.l1;
  row.l2_pooled = all.l2;
  row.linf_pooled = all.linf;
  return row;
}

MetricsRow aggregate_outcomes(const std::vector<InstanceOutcome>& outcomes, std::size_t groups) {
  std::vector<std::vector<Outcome>> by_group(groups);
  for (const auto& o : outcomes) {
    if (o.instance.group >= groups) throw DimensionError("aggregate: group index out of range");
    by_group[o.instance.group].push_back({o.verified, o.result.l1, o.result.l2, o.result.linf});
  }
  MetricsRow row = aggregate(by_group);
  if (!outcomes.empty()) {
    row.k = outcomes.front().instance.targets.k();
    row.method = outcomes.front().method;
    row.budget = outcomes.front().budget;
  }
  return row;
}

ExperimentResults run_experiment(const Model& model, const Dataset& data, const ExperimentConfig& cfg) {
  cfg.validate(data.num_classes);
  if (model.num_classes() != data.num_classes || model.input_dim() != data.input_dim()) {
    throw DimensionError("experiment: model and dataset disagree on shapes");
  }
  ExperimentResults res;
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x1a6e5));
  res.images = choose_images(select_correct(data, model), cfg.num_images, rng);
  for (std::size_t k : cfg.k_values) {
    const auto instances = build_instances(data, res.images, k, cfg.groups_per_image, cfg.seed);
    for (const auto& budget : cfg.budgets) {
      for (Method method : cfg.methods) {
        const AttackConfig acfg = cfg.attack_config(method, k, budget);
        auto outcomes = run_instances(model, data, instances, acfg, budget, cfg.jobs);
        res.rows.push_back(aggregate_outcomes(outcomes, cfg.groups_per_image));
        res.outcomes.insert(res.outcomes.end(), std::make_move_iterator(outcomes.begin()),
                            std::make_move_iterator(outcomes.end()));
      }
    }
  }
  return res;
}

std::vector<TradeoffPoint> tradeoff_curve(const Model& model, const Dataset& data, const ExperimentConfig& cfg,
                                          Method method, std::size_t k, const Budget& budget,
                                          const std::vector<double>& grid, GridKind kind) {
  if (grid.empty()) throw ValidationError("tradeoff_curve: empty grid");
  cfg.validate(data.num_classes);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x1a6e5));
  const auto images = choose_images(select_correct(data, model), cfg.num_images, rng);
  const auto instances = build_instances(data, images, k, cfg.groups_per_image, cfg.seed);
  std::vector<TradeoffPoint> out;
  for (double value : grid) {
    AttackConfig acfg = cfg.attack_config(method, k, budget);
    if (kind == GridKind::Lambda) {
      acfg.lambda = value;
    } else {
      acfg.step_size = value;
    }
    const auto outcomes = run_instances(model, data, instances, acfg, budget, cfg.jobs);
    TradeoffPoint p{method, k, budget, acfg.lambda, acfg.step_size, 0.0, std::nullopt};
    std::size_t wins = 0;
    double l2 = 0.0;
    for (const auto& o : outcomes) {
      if (!o.verified) continue;
      ++wins;
      l2 += o.result.l2;
    }
    p.asr = outcomes.empty() ? 0.0 : static_cast<double>(wins) / static_cast<double>(outcomes.size());
    if (wins) p.mean_l2 = l2 / static_cast<double>(wins);
    out.push_back(p);
  }
  return out;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

namespace {

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(kAbsent); }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(kAbsent); }

}  // namespace

void write_report_csv(std::ostream& out, const std::vector<MetricsRow>& rows, const std::string& config_hash,
                      std::uint64_t seed) {
  out << "# config_hash=" << config_hash << " seed=" << seed << '\n';
  out << "protocol,method,budget,asr_best,l1_best,l2_best,linf_best,asr_mean,l1_mean,l2_mean,linf_mean,"
         "asr_worst,l1_worst,l2_worst,linf_worst\n";
  for (const auto& r : rows) {
    out << r.protocol() << ',' << to_string(r.method) << ',' << r.budget.label();
    for (const GroupStats* s : {&r.best, &r.mean, &r.worst}) {
      out << ',' << format_number(s->asr) << ',' << opt_number(s->l1) << ',' << opt_number(s->l2) << ','
          << opt_number(s->linf);
    }
    out << '\n';
  }
}

void write_tradeoff_csv(std::ostream& out, const std::vector<TradeoffPoint>& points, const std::string& config_hash,
                        std::uint64_t seed) {
  out << "# config_hash=" << config_hash << " seed=" << seed << '\n';
  out << "method,K,budget,lambda,asr,mean_l2,gamma\n";
  for (const auto& p : points) {
    out << to_string(p.method) << ',' << p.k << ',' << p.budget.label() << ',' << format_number(p.lambda) << ','
        << format_number(p.asr) << ',' << opt_number(p.mean_l2) << ',' << format_number(p.step_size) << '\n';
  }
}

json rows_to_json(const std::vector<MetricsRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    json j{{"protocol", r.protocol()}, {"method", to_string(r.method)}, {"budget", r.budget.label()},
           {"group_asr", r.group_asr}};
    const std::pair<const char*, const GroupStats*> cols[] = {{"best", &r.best}, {"mean", &r.mean}, {"worst", &r.worst}};
    for (const auto& [name, s] : cols) {
      j[std::string("asr_") + name] = s->asr;
      j[std::string("l1_") + name] = opt_json(s->l1);
      j[std::string("l2_") + name] = opt_json(s->l2);
      j[std::string("linf_") + name] = opt_json(s->linf);
    }
    j["l1_mean_pooled"] = opt_json(r.l1_pooled);
    j["l2_mean_pooled"] = opt_json(r.l2_pooled);
    j["linf_mean_pooled"] = opt_json(r.linf_pooled);
    arr.push_back(std::move(j));
  }
  return arr;
}

json tradeoff_to_json(const std::vector<TradeoffPoint>& points) {
  json arr = json::array();
  for (const auto& p : points) {
    arr.push_back({{"method", to_string(p.method)},
                   {"K", p.k},
                   {"budget", p.budget.label()},
                   {"lambda", p.lambda},
                   {"gamma", p.step_size},
                   {"asr", p.asr},
                   {"mean_l2", opt_json(p.mean_l2)}});
  }
  return arr;
}

void write_instances(std::ostream& out, const std::vector<InstanceOutcome>& outcomes, const std::string& config_hash,
                     std::uint64_t seed) {
  out << json{{"config_hash", config_hash}, {"seed", seed}}.dump() << '\n';
  for (const auto& o : outcomes) {
    const auto& r = o.result;
    json j{{"K", o.instance.targets.k()},
           {"method", to_string(o.method)},
           {"budget", o.budget.label()},
           {"image", o.instance.image},
           {"group", o.instance.group},
           {"targets", to_one_based(o.instance.targets.targets)},
           {"ground_truth", *o.instance.targets.ground_truth + 1},
           {"seed", o.instance.seed},
           {"assignment", r.assignment_index},
           {"lambda", r.lambda},
           {"loop_success", r.success},
           {"verified", o.verified},
           {"l1", r.l1},
           {"l2", r.l2},
           {"linf", r.linf},
           {"delta", std::vector<double>(r.delta.data(), r.delta.data() + r.delta.size())}};
    j["first_success"] = r.iterations_to_first_success ? json(*r.iterations_to_first_success) : json(nullptr);
    out << j.dump() << '\n';
  }
}

std::vector<InstanceOutcome> read_instances(std::istream& in, std::size_t num_classes) {
  std::vector<InstanceOutcome> out;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(std::string("malformed instance record: ") + e.what());
    }
    if (header) {
      header = false;
      if (j.contains("config_hash")) continue;
    }
    InstanceOutcome o;
    o.method = method_from_string(j.at("method").get<std::string>());
    o.budget = Budget::parse(j.at("budget").get<std::string>());
    o.instance.image = j.at("image").get<std::size_t>();
    o.instance.group = j.at("group").get<std::size_t>();
    o.instance.seed = j.at("seed").get<std::uint64_t>();
    o.instance.targets.targets = to_zero_based(j.at("targets").get<std::vector<std::size_t>>());
    o.instance.targets.ground_truth = j.at("ground_truth").get<std::size_t>() - 1;
    o.instance.targets.num_classes = num_classes;
    o.instance.targets.validate();
    const auto delta = j.at("delta").get<std::vector<double>>();
    o.result.delta = Eigen::Map<const Eigen::VectorXd>(delta.data(), static_cast<Eigen::Index>(delta.size()));
    o.result.assignment_index = j.at("assignment").get<std::size_t>();
    o.result.lambda = j.at("lambda").get<double>();
    o.result.success = j.at("loop_success").get<bool>();
    o.result.l1 = o.result.delta.lpNorm<1>();
    o.result.l2 = o.result.delta.norm();
    o.result.linf = o.result.delta.size() ? o.result.delta.lpNorm<Eigen::Infinity>() : 0.0;
    if (!j.at("first_success").is_null()) o.result.iterations_to_first_success = j.at("first_success").get<std::size_t>();
    o.verified = j.at("verified").get<bool>();  // as stored; reverify() recomputes it
    out.push_back(std::move(o));
  }
  return out;
}

void reverify(const Model& model, const Dataset& data, std::vector<InstanceOutcome>& outcomes) {
  for (auto& o : outcomes) {
    if (o.instance.image >= data.size()) throw ValidationError("reverify: image index out of range");
    o.verified = verify_success(model, data.input(o.instance.image), o.result.delta, o.instance.targets);
  }
}

std::vector<MetricsRow> rows_from_outcomes(const std::vector<InstanceOutcome>& outcomes, std::size_t groups) {
  using Key = std::tuple<std::size_t, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<InstanceOutcome>> buckets;
  for (const auto& o : outcomes) {
    Key key{o.instance.targets.k(), o.budget.label(), to_string(o.method)};
    auto [it, inserted] = buckets.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(o);
  }
  std::vector<MetricsRow> rows;
  for (const auto& key : order) rows.push_back(aggregate_outcomes(buckets.at(key), groups));
  return rows;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace quadattack
