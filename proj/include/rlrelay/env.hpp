#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlrelay/feeder.hpp"
#include "rlrelay/powerflow.hpp"

namespace rlrelay {

enum class InputMode { phase, sequence };

std::string_view input_mode_name(InputMode mode);
InputMode parse_input_mode(std::string_view text);

// How current magnitudes (pu) enter the observation.
enum class CurrentScaling { none, log1p };

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct EnvConfig {
  int window = 8;           // m
  int episode_length = 50;  // T
  int fault_step_lo = 15;
  int fault_step_hi = 35;
  InputMode input_mode = InputMode::sequence;
  Range global_load{0.7, 1.3};
  Range per_load{0.9, 1.1};
  int dg_count_min = 0;
  int dg_count_max = 2;
  Range dg_size{0.50, 1.25};  // fraction of the bus load
  // SLG, LL, LLG, 3PH
  std::array<double, kFaultTypeCount> fault_type_weights{0.40, 0.20, 0.25, 0.15};
  Range fault_impedance{kMinFaultImpedance, kMaxFaultImpedance};  // ohms, log-uniform
  double step_seconds = 0.002;
  double gamma = 0.99;
  double deactivation_probability = 0.5;
  CurrentScaling current_scaling = CurrentScaling::log1p;
  SolverOptions solver;

  void validate() const;
  std::size_t features_per_step() const { return input_mode == InputMode::phase ? 12 : 6; }
  std::size_t observation_size() const {
    return features_per_step() * static_cast<std::size_t>(window) + 2;
  }
};

nlohmann::json to_json(const EnvConfig& cfg);
EnvConfig env_config_from_json(const nlohmann::json& j);

enum class DisturbanceKind { loss_of_load, loss_of_dg };

std::string_view disturbance_name(DisturbanceKind kind);

// Sudden non-fault event used by the robustness sweeps.
struct Disturbance {
  DisturbanceKind kind = DisturbanceKind::loss_of_load;
  int onset = 0;
  double magnitude = 0.0;            // fraction in [0.1, 0.4]
  std::vector<std::size_t> removed;  // DG indices (loss_of_dg)
};

struct DgPlacement {
  std::size_t bus = 0;
  double size_fraction = 0.0;
  Vector3c power = Vector3c::Zero();  // VA per phase generated
};

struct EpisodeScenario {
  std::uint64_t seed = 0;
  double global_multiplier = 1.0;
  std::vector<double> load_multipliers;
  std::vector<DgPlacement> generators;
  std::optional<FaultSpec> fault;
  int fault_onset = 0;
  // Primary-failure coin per relay; only relays with an upstream backup are
  // ever flagged.
  std::vector<bool> deactivated;
  std::optional<Disturbance> disturbance;
};

nlohmann::json to_json(const FeederNetwork& net, const EpisodeScenario& s);

EpisodeScenario generate_scenario(std::uint64_t seed, const EnvConfig& cfg,
                                  const FeederNetwork& net);

// An event scheduled at step k happens after the actions of step k, so the
// state seen at time t includes it from t = k + 1 on.
inline bool event_active(int onset, int t) { return t > onset; }

// Operating condition at step t of a scenario with the given breaker states.
OperatingCondition condition_at(const FeederNetwork& net, const EpisodeScenario& s,
                                int t, const std::vector<bool>& breaker_open);

inline constexpr int kActionCount = 11;
inline constexpr int kActionReset = 0;
inline constexpr int kActionDecrement = 10;
inline constexpr int kCounterMax = 9;

struct RelayState {
  bool closed = true;
  int counter = 0;  // 0 = inactive, otherwise 1..9
  bool deactivated = false;
  bool attempted = false;  // a trip attempt has been made this episode

  friend bool operator==(const RelayState&, const RelayState&) = default;
};

struct ActionResult {
  RelayState state;
  bool trip_attempt = false;  // decrement from 1 this step
};

// Countdown-timer semantics; open breakers ignore actions.
ActionResult apply_action(const RelayState& state, int action);

inline constexpr double kRewardTrip = 100.0;
inline constexpr double kRewardFalseTrip = -120.0;
inline constexpr double kRewardHold = 5.0;
inline constexpr double kRewardMissedHold = -10.0;

double reward(bool fault_in_region, bool tripped);

// Fault as seen by the protection logic at one instant.
struct FaultContext {
  bool active = false;  // present and still energized
  std::size_t bus = 0;
  PhaseSet phases;
};

// Primary zone always; the backup zone only once the downstream primary
// relay is deactivated and has attempted to trip. Phase mode also requires
// the relay's assigned phase to be faulted.
bool fault_in_effective_region(const FeederNetwork& net,
                               const std::vector<ProtectionZone>& zones,
                               std::size_t relay, const FaultContext& fault,
                               const std::vector<RelayState>& states, InputMode mode);

// Raised when the power flow fails to converge inside an episode.
class SimulationAbort : public std::runtime_error {
 public:
  SimulationAbort(const std::string& what, std::uint64_t seed)
      : std::runtime_error(what), seed_(seed) {}
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

struct StepRecord {
  int t = 0;  // action time
  bool fault_active = false;
  std::vector<std::uint64_t> observation_hash;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<bool> trip_attempt;
  std::vector<bool> in_region;
  std::vector<bool> closed_after;
};

struct EpisodeTrace {
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  bool complete = false;  // reached t = T
};

nlohmann::json to_json(const StepRecord& r);

std::uint64_t hash_observation(std::span<const double> obs);

using Observation = std::vector<double>;

struct StepResult {
  std::vector<Observation> observations;
  std::vector<double> rewards;
  std::vector<bool> trip_attempt;
  double global_reward = 0.0;
  bool done = false;
};

// One episode of the multi-relay protection MDP. Shares the network
// read-only; one instance per concurrently simulated episode.
class Environment {
 public:
  Environment(const FeederNetwork& net, EnvConfig cfg);

  const FeederNetwork& network() const { return *net_; }
  const EnvConfig& config() const { return cfg_; }
  const std::vector<ProtectionZone>& zones() const { return zones_; }
  std::size_t relay_count() const { return net_->relays().size(); }
  std::size_t observation_size() const { return cfg_.observation_size(); }

  // Throws SimulationAbort when the pre-fault power flow does not converge.
  std::vector<Observation> reset(const EpisodeScenario& scenario);
  // Throws SimulationAbort on mid-episode non-convergence.
  StepResult step(std::span<const int> actions);

  int time() const { return t_; }
  bool done() const { return t_ >= cfg_.episode_length; }
  const EpisodeScenario& scenario() const { return scenario_; }
  const std::vector<RelayState>& states() const { return states_; }
  const PowerFlowSolution& solution() const { return solution_; }
  const EpisodeTrace& trace() const { return trace_; }
  FaultContext fault_context() const;
  std::vector<Observation> observations() const;

 private:
  void solve_current();
  std::vector<double> feature_block(std::size_t relay) const;

  const FeederNetwork* net_;
  EnvConfig cfg_;
  std::vector<ProtectionZone> zones_;
  EpisodeScenario scenario_;
  std::vector<RelayState> states_;
  std::vector<std::vector<std::vector<double>>> windows_;  // relay, slot, features
  std::vector<std::size_t> window_head_;
  PowerFlowSolution solution_;
  EpisodeTrace trace_;
  int t_ = 0;
  // Inputs of the cached solution; the network only changes at events.
  std::vector<bool> solved_open_;
  bool solved_fault_ = false;
  bool solved_disturbance_ = false;
  bool have_solution_ = false;
};

using ScenarioFactory = std::function<EpisodeScenario(std::uint64_t seed)>;

// Resets with the scenario built from `seed`; on non-convergence retries with
// seed + 1, seed + 2, ... up to `attempts` times. Returns the scenario used.
EpisodeScenario reset_with_resample(Environment& env, const ScenarioFactory& make,
                                    std::uint64_t seed, int attempts = 16);

}  // namespace rlrelay
