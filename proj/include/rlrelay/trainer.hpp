#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlrelay/agent.hpp"
#include "rlrelay/env.hpp"
#include "rlrelay/policy.hpp"

namespace rlrelay {

// One trained relay's learning curve entry.
struct CurvePoint {
  int episode = 0;
  double episode_return = 0.0;  // local return of the trained relay
  double global_return = 0.0;   // sum over all relays
  bool false_operation = false; // false trip or missed trip this episode
  int false_ops_in_window = 0;  // trailing window, this episode included
  int steps = 0;
  std::uint64_t scenario_seed = 0;
};

inline constexpr int kFalseOpWindow = 50;

struct RelayTrainingResult {
  std::size_t relay = 0;
  PolicyWeights weights;
  std::vector<CurvePoint> curve;
  std::uint64_t seed = 0;
  int resampled = 0;  // scenarios skipped after non-convergence
  std::string started;
  std::string finished;
};

struct TrainerOptions {
  EnvConfig env;
  TrainConfig agent;
  int episodes = 1500;        // per relay
  std::uint64_t seed = 1;
  // Called after every episode; may be empty.
  std::function<void(std::size_t relay, const CurvePoint&)> progress;
};

// Trains `relay` for opts.episodes episodes. `frozen[j]` holds the policy
// of every relay trained earlier; relays without one take action 0. Only
// relays below `relay` may be deactivated by the scenario.
RelayTrainingResult train_relay(const FeederNetwork& net, std::size_t relay,
                                const std::vector<PolicyPtr>& frozen,
                                const TrainerOptions& opts);

struct TrainingRun {
  std::vector<std::size_t> order;
  std::vector<RelayTrainingResult> results;  // in training order
  nlohmann::json manifest;
  bool complete = false;
};

// Nested training along training_order. When out_dir is non-empty, writes
// weights_<relay>.json, curve_<relay>.csv and manifest.json there as each
// phase completes, so a failed run leaves the partial manifest.
TrainingRun train_all(const FeederNetwork& net, const TrainerOptions& opts,
                      const std::string& out_dir = "");

std::string curve_csv(const std::vector<CurvePoint>& curve);

// Per-episode mean and standard deviation over independent runs (rows
// truncated to the shortest run).
struct CurveSummaryRow {
  int episode = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_false_ops = 0.0;
  double std_false_ops = 0.0;
};

std::vector<CurveSummaryRow> aggregate_curves(const std::vector<std::vector<CurvePoint>>& runs);
std::vector<CurvePoint> parse_curve_csv(const std::string& text);
std::string summary_csv(const std::vector<CurveSummaryRow>& rows);

std::uint64_t config_hash(const nlohmann::json& j);

inline constexpr int kSingleRelayEpisodes = 1500;
inline constexpr int kNestedEpisodesPerRelay = 800;

// Contents of a --config file. Missing sections keep their defaults; the
// agent discount follows env.gamma unless the agent section sets its own.
struct RunConfig {
  EnvConfig env;
  TrainConfig agent;
  std::optional<int> episodes;  // per relay; default depends on relay count
  int test_episodes = 500;
  std::vector<std::string> relays;  // subset to keep; empty keeps all

  int episodes_for(std::size_t relay_count) const {
    return episodes.value_or(relay_count > 1 ? kNestedEpisodesPerRelay : kSingleRelayEpisodes);
  }
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json to_json(const RunConfig& c);

// Scenario for the training phase of `relay`: deactivation flags are kept
// only on relays strictly below it.
EpisodeScenario training_scenario(std::uint64_t seed, const EnvConfig& cfg,
                                  const FeederNetwork& net, std::size_t relay);

}  // namespace rlrelay
