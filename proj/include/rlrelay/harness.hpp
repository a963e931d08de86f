#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlrelay/env.hpp"
#include "rlrelay/policy.hpp"

namespace rlrelay {

enum class RelayLabel {
  correct,
  false_trip_no_fault,
  false_trip_remote,
  false_trip_other_phase,
  false_trip_premature_backup,
  missed_trip,
  backup_success,
  backup_failure,
};

inline constexpr std::size_t kRelayLabelCount = 8;

std::string_view label_name(RelayLabel label);
inline bool label_ok(RelayLabel l) {
  return l == RelayLabel::correct || l == RelayLabel::backup_success;
}

// Row sets of the failure tables.
enum class TableFormat { single_sequence, single_phase, multi };

TableFormat table_format_for(const FeederNetwork& net, InputMode mode);

struct RelayOutcome {
  RelayLabel label = RelayLabel::correct;
  std::optional<int> trip_step;  // action time of the first trip attempt
  // Steps from fault onset to the breaker reading open; set for in-region
  // trips only.
  std::optional<int> delay;
  bool backup = false;  // the fault sat in this relay's backup zone
};

struct EpisodeOutcome {
  std::uint64_t seed = 0;
  bool has_fault = false;
  std::vector<RelayOutcome> relays;
  bool success = true;
  std::string category;  // table row of the first failure, empty on success
};

// Labels every relay of a finished episode and picks the episode's row in
// the given table format.
EpisodeOutcome classify_episode(const FeederNetwork& net,
                                const std::vector<ProtectionZone>& zones,
                                const EpisodeScenario& scenario, const EpisodeTrace& trace,
                                InputMode mode, TableFormat format);

struct TableRow {
  std::string scenario;
  std::string action;
  int occurrences = 0;
  int total = 0;
  double probability() const { return total > 0 ? 100.0 * occurrences / total : 0.0; }
};

using DelayHistogram = std::map<int, int>;  // steps -> count

struct RelayHistograms {
  std::string relay;
  DelayHistogram primary;
  DelayHistogram backup;
  bool has_backup_zone = false;
};

struct EvaluationReport {
  std::string title;
  TableFormat format = TableFormat::single_sequence;
  int requested = 0;
  int evaluated = 0;
  int aborted = 0;
  int failures = 0;
  int fault_episodes = 0;
  std::vector<TableRow> rows;
  std::vector<RelayHistograms> histograms;  // indexed like network.relays()
  std::vector<std::array<int, kRelayLabelCount>> label_counts;
  std::vector<std::uint64_t> aborted_seeds;
  nlohmann::json metadata;

  double failure_rate() const { return evaluated > 0 ? double(failures) / evaluated : 0.0; }
};

using ScenarioSource = std::function<EpisodeScenario(std::uint64_t seed)>;

struct EvaluationOptions {
  int episodes = 500;
  std::uint64_t seed = 1;
  // Defaults to generate_scenario.
  ScenarioSource scenarios;
  std::string title = "Failure rate";
};

// Seed of test episode k.
std::uint64_t evaluation_seed(std::uint64_t base, int k);

// Plays one scenario to the horizon with the given policies (epsilon 0).
// Throws SimulationAbort on non-convergence.
EpisodeOutcome run_episode(Environment& env, const std::vector<PolicyPtr>& policies,
                           const EpisodeScenario& scenario, TableFormat format);

EvaluationReport evaluate(const FeederNetwork& net, const EnvConfig& cfg,
                          const std::vector<PolicyPtr>& policies,
                          const EvaluationOptions& opts);

// Same as evaluate over an explicit scenario list.
EvaluationReport evaluate_scenarios(const FeederNetwork& net, const EnvConfig& cfg,
                                    const std::vector<PolicyPtr>& policies,
                                    const std::vector<EpisodeScenario>& scenarios,
                                    const std::string& title);

// Global multiplier in (hi, hi * (1 + level/100)] where hi is the training
// peak; level 0 keeps the nominal sampler.
EpisodeScenario peak_scenario(std::uint64_t seed, const EnvConfig& cfg,
                              const FeederNetwork& net, double level_percent);

// Fault-free scenario with one disturbance of magnitude in [0.1, 0.4] at a
// step in the fault-onset window. Loss-of-DG scenarios carry at least one DG.
EpisodeScenario disturbance_scenario(std::uint64_t seed, const EnvConfig& cfg,
                                     const FeederNetwork& net, DisturbanceKind kind);

struct RobustnessRow {
  std::string label;
  int occurrences = 0;
  int total = 0;
  int aborted = 0;
  double probability() const { return total > 0 ? 100.0 * occurrences / total : 0.0; }
};

struct RobustnessTable {
  std::string title;
  std::string level_header;
  std::vector<RobustnessRow> rows;
};

inline const std::vector<double> kPeakLevels{5.0, 10.0, 15.0, 20.0};

RobustnessTable robustness_peak(const FeederNetwork& net, const EnvConfig& cfg,
                                const std::vector<PolicyPtr>& policies, int episodes,
                                std::uint64_t seed,
                                const std::vector<double>& levels = kPeakLevels,
                                bool control = true);

RobustnessTable robustness_disturbance(const FeederNetwork& net, const EnvConfig& cfg,
                                       const std::vector<PolicyPtr>& policies, int episodes,
                                       std::uint64_t seed);

// Response-delay table. Single-relay bins 1..4 (4 = 4 or more); multi-relay
// primary bins 1, 2, 3, 4+ and backup bins 3-, 4, 5, 6+.
struct ResponseRow {
  std::string relay;
  std::string kind;  // primary / backup
  std::vector<std::string> bins;
  std::vector<int> counts;
  int total = 0;
};

std::vector<ResponseRow> response_histogram(const EvaluationReport& report, double step_seconds);

std::optional<double> histogram_median(const DelayHistogram& h);

nlohmann::json to_json(const EvaluationReport& report);
nlohmann::json to_json(const RobustnessTable& table);
std::string format_report(const EvaluationReport& report, double step_seconds);
std::string format_table(const RobustnessTable& table);
std::string histogram_csv(const EvaluationReport& report, double step_seconds);

// Greedy policies from a training output directory (manifest.json plus the
// weight files it lists). Relays without weights in the manifest raise
// ConfigError, as do weights trained for a different input layout.
std::vector<PolicyPtr> load_policies(const FeederNetwork& net, const EnvConfig& cfg,
                                     const std::string& dir);

}  // namespace rlrelay
