#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "quadattack/attack.hpp"
#include "quadattack/dataset.hpp"
#include "quadattack/model.hpp"

namespace quadattack {

/// n x m: n trade-off assignments of m steps each.
struct Budget {
  std::size_t assignments = 1;
  std::size_t steps = 60;

  std::string label() const;
  static Budget parse(const std::string& label);
  bool operator==(const Budget&) const = default;
};

struct ExperimentConfig {
  std::vector<std::size_t> k_values{1, 3, 5};
  std::vector<Method> methods{Method::QuadAttack, Method::CWK, Method::AD};
  std::vector<Budget> budgets{Budget{1, 60}};
  std::size_t groups_per_image = 5;
  std::size_t num_images = 200;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  ArchFamily family = ArchFamily::Convolutional;
  /// Override the published step-size schedule / lambda defaults.
  std::optional<double> step_size;
  std::optional<double> lambda;
  /// Shared attack knobs (margin, warmup, p_norm, noise, lambda range, AD
  /// surrogate, solver). Method, step size, lambda and budget are filled per run.
  AttackConfig attack;

  void validate(std::size_t num_classes) const;
  AttackConfig attack_config(Method method, std::size_t k, const Budget& budget) const;
};

/// splitmix64-based mix of a base seed with instance coordinates.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// Dataset indices whose clean prediction equals the label. Throws ConfigError when empty.
std::vector<std::size_t> select_correct(const Dataset& data, const Model& model);

/// Uniform subset of `count` indices (all of them when fewer), ascending.
std::vector<std::size_t> choose_images(const std::vector<std::size_t>& candidates, std::size_t count,
                                       std::mt19937_64& rng);

/// `groups` independent ordered target lists of K distinct classes drawn
/// uniformly without replacement from the non-ground-truth classes.
std::vector<TargetList> sample_targets(std::size_t num_classes, std::size_t k, std::size_t ground_truth,
                                       std::size_t groups, std::mt19937_64& rng);

struct Instance {
  std::size_t image = 0;  // dataset index
  std::size_t group = 0;
  TargetList targets;
  std::uint64_t seed = 0;
};

/// images x groups instances for one K, image-major. Target groups and
/// attack seeds depend only on (seed, image, group, K), so every method sees
/// identical instances.
std::vector<Instance> build_instances(const Dataset& data, const std::vector<std::size_t>& images, std::size_t k,
                                      std::size_t groups, std::uint64_t seed);

struct Outcome {
  bool success = false;  // re-verified from the stored perturbation
  double l1 = 0.0, l2 = 0.0, linf = 0.0;
};

struct InstanceOutcome {
  Instance instance;
  Method method = Method::QuadAttack;
  Budget budget;
  AttackResult result;
  bool verified = false;
};

/// Runs every instance with `cfg` (seed replaced per instance). Result i
/// belongs to instance i regardless of `jobs`.
std::vector<InstanceOutcome> run_instances(const Model& model, const Dataset& data,
                                           const std::vector<Instance>& instances, const AttackConfig& cfg,
                                           const Budget& budget, unsigned jobs);

/// Per-assignment results of an n x m budget for one instance.
std::vector<AttackResult> budget_sweep(const Model& model, const Eigen::VectorXd& x, const TargetList& targets,
                                       AttackConfig cfg, std::size_t n, std::size_t m);

struct GroupStats {
  double asr = 0.0;
  std::optional<double> l1, l2, linf;
};

struct MetricsRow {
  std::size_t k = 0;
  Method method = Method::QuadAttack;
  Budget budget;
  GroupStats best, mean, worst;
  /// Mean energies over all successes pooled across groups.
  std::optional<double> l1_pooled, l2_pooled, linf_pooled;
  std::vector<double> group_asr;

  std::string protocol() const { return "top-" + std::to_string(k); }
};

/// Best/Mean/Worst over groups. `groups[g]` holds the outcomes of group g;
/// every group must have the same number of instances. Energies are means
/// over the successes of the extremal group (Mean: average of per-group
/// means); a group without successes yields absent energies.
MetricsRow aggregate(const std::vector<std::vector<Outcome>>& groups);

/// Groups outcomes by group index and aggregates.
MetricsRow aggregate_outcomes(const std::vector<InstanceOutcome>& outcomes, std::size_t groups);

struct ExperimentResults {
  std::vector<std::size_t> images;
  std::vector<InstanceOutcome> outcomes;
  std::vector<MetricsRow> rows;
};

/// Full protocol: select correctly classified images, sample target groups,
/// run every (K, budget, method), re-verify and aggregate.
ExperimentResults run_experiment(const Model& model, const Dataset& data, const ExperimentConfig& cfg);

enum class GridKind { Lambda, StepSize };

struct TradeoffPoint {
  Method method = Method::QuadAttack;
  std::size_t k = 0;
  Budget budget;
  double lambda = 0.0;
  double step_size = 0.0;
  double asr = 0.0;
  std::optional<double> mean_l2;
};

/// One point per grid value: ASR over all instances and mean l2 of successes.
std::vector<TradeoffPoint> tradeoff_curve(const Model& model, const Dataset& data, const ExperimentConfig& cfg,
                                          Method method, std::size_t k, const Budget& budget,
                                          const std::vector<double>& grid, GridKind kind);

/// Marker written in place of an energy when no attack in the group succeeded.
inline constexpr const char* kAbsent = "NA";

std::string format_number(double v);

void write_report_csv(std::ostream& out, const std::vector<MetricsRow>& rows, const std::string& config_hash,
                      std::uint64_t seed);
void write_tradeoff_csv(std::ostream& out, const std::vector<TradeoffPoint>& points, const std::string& config_hash,
                        std::uint64_t seed);
nlohmann::json rows_to_json(const std::vector<MetricsRow>& rows);
nlohmann::json tradeoff_to_json(const std::vector<TradeoffPoint>& points);

/// One JSON object per instance, including the perturbation (so reports can
/// be recomputed without trusting attack-loop flags).
void write_instances(std::ostream& out, const std::vector<InstanceOutcome>& outcomes, const std::string& config_hash,
                     std::uint64_t seed);
std::vector<InstanceOutcome> read_instances(std::istream& in, std::size_t num_classes);

/// Recomputes `verified` from the stored perturbations.
void reverify(const Model& model, const Dataset& data, std::vector<InstanceOutcome>& outcomes);

/// Rebuilds metrics rows from instance outcomes, in (K, budget, method) order of first appearance.
std::vector<MetricsRow> rows_from_outcomes(const std::vector<InstanceOutcome>& outcomes, std::size_t groups);

/// 64-bit FNV-1a of `text`, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace quadattack
