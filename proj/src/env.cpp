#include "rlrelay/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>

#include "rlrelay/rng.hpp"

namespace rlrelay {
namespace {

using nlohmann::json;

double wrap_angle(double a) {
  // std::arg is in [-pi, pi]; features live in (-pi, pi].
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

double angle_of(Complex c) {
  if (c == Complex(0.0)) return 0.0;
  return wrap_angle(std::arg(c));
}

Range range_from(const json& j, const char* key, Range fallback) {
  if (!j.contains(key)) return fallback;
  const json& r = j.at(key);
  if (!r.is_array() || r.size() != 2) {
    throw ConfigError(std::string("env config: '") + key + "' must be [lo, hi]");
  }
  return {r[0].get<double>(), r[1].get<double>()};
}

}  // namespace

std::string_view input_mode_name(InputMode mode) {
  return mode == InputMode::phase ? "phase" : "sequence";
}

InputMode parse_input_mode(std::string_view text) {
  if (text == "phase") return InputMode::phase;
  if (text == "sequence") return InputMode::sequence;
  throw ConfigError("unknown input mode '" + std::string(text) + "'");
}

std::string_view disturbance_name(DisturbanceKind kind) {
  return kind == DisturbanceKind::loss_of_load ? "loss-of-load" : "loss-of-DG";
}

void EnvConfig::validate() const {
  if (window < 1 || window > episode_length) {
    throw ConfigError("env config: window must satisfy 1 <= m <= T");
  }
  if (!(0 < fault_step_lo && fault_step_lo < fault_step_hi && fault_step_hi < episode_length)) {
    throw ConfigError("env config: fault window must satisfy 0 < lo < hi < T");
  }
  auto ordered = [](Range r, const char* what) {
    if (!(r.lo <= r.hi) || !(r.lo > 0.0)) {
      throw ConfigError(std::string("env config: ") + what + " range must be positive and ordered");
    }
  };
  ordered(global_load, "global load");
  ordered(per_load, "per-load");
  ordered(dg_size, "DG size");
  ordered(fault_impedance, "fault impedance");
  if (fault_impedance.lo < kMinFaultImpedance || fault_impedance.hi > kMaxFaultImpedance) {
    throw ConfigError("env config: fault impedance range must lie in [0.001, 20] ohm");
  }
  if (dg_count_min < 0 || dg_count_min > dg_count_max) {
    throw ConfigError("env config: DG count range must be ordered and non-negative");
  }
  double total = 0.0;
  for (double w : fault_type_weights) {
    if (!(w > 0.0)) throw ConfigError("env config: fault-type weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("env config: fault-type weights must sum to 1");
  }
  if (!(step_seconds > 0.0)) throw ConfigError("env config: step duration must be positive");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("env config: gamma must lie in [0, 1)");
  if (!(deactivation_probability >= 0.0 && deactivation_probability <= 1.0)) {
    throw ConfigError("env config: deactivation probability must lie in [0, 1]");
  }
}

json to_json(const EnvConfig& c) {
  return {{"window", c.window},
          {"episode_length", c.episode_length},
          {"fault_window", {c.fault_step_lo, c.fault_step_hi}},
          {"input_mode", input_mode_name(c.input_mode)},
          {"global_load", {c.global_load.lo, c.global_load.hi}},
          {"per_load", {c.per_load.lo, c.per_load.hi}},
          {"dg_count", {c.dg_count_min, c.dg_count_max}},
          {"dg_size", {c.dg_size.lo, c.dg_size.hi}},
          {"fault_type_weights",
           {{"SLG", c.fault_type_weights[0]}, {"LL", c.fault_type_weights[1]},
            {"LLG", c.fault_type_weights[2]}, {"3PH", c.fault_type_weights[3]}}},
          {"fault_impedance", {c.fault_impedance.lo, c.fault_impedance.hi}},
          {"step_seconds", c.step_seconds},
          {"gamma", c.gamma},
          {"deactivation_probability", c.deactivation_probability},
          {"current_scaling", c.current_scaling == CurrentScaling::log1p ? "log1p" : "none"},
          {"solver",
           {{"tolerance", c.solver.tolerance},
            {"max_iterations", c.solver.max_iterations},
            {"constant_power_min_voltage", c.solver.constant_power_min_voltage}}}};
}

EnvConfig env_config_from_json(const json& j) {
  EnvConfig c;
  if (j.is_null()) return c;
  if (!j.is_object()) throw ConfigError("env config must be a JSON object");
  c.window = j.value("window", c.window);
  c.episode_length = j.value("episode_length", c.episode_length);
  if (j.contains("fault_window")) {
    c.fault_step_lo = j.at("fault_window").at(0).get<int>();
    c.fault_step_hi = j.at("fault_window").at(1).get<int>();
  }
  if (j.contains("input_mode")) c.input_mode = parse_input_mode(j.at("input_mode").get<std::string>());
  c.global_load = range_from(j, "global_load", c.global_load);
  c.per_load = range_from(j, "per_load", c.per_load);
  if (j.contains("dg_count")) {
    c.dg_count_min = j.at("dg_count").at(0).get<int>();
    c.dg_count_max = j.at("dg_count").at(1).get<int>();
  }
  c.dg_size = range_from(j, "dg_size", c.dg_size);
  if (j.contains("fault_type_weights")) {
    const json& w = j.at("fault_type_weights");
    const char* names[] = {"SLG", "LL", "LLG", "3PH"};
    for (int k = 0; k < kFaultTypeCount; ++k) {
      if (w.contains(names[k])) c.fault_type_weights[k] = w.at(names[k]).get<double>();
    }
  }
  c.fault_impedance = range_from(j, "fault_impedance", c.fault_impedance);
  c.step_seconds = j.value("step_seconds", c.step_seconds);
  c.gamma = j.value("gamma", c.gamma);
  c.deactivation_probability = j.value("deactivation_probability", c.deactivation_probability);
  if (j.contains("current_scaling")) {
    const std::string s = j.at("current_scaling").get<std::string>();
    if (s == "log1p") c.current_scaling = CurrentScaling::log1p;
    else if (s == "none") c.current_scaling = CurrentScaling::none;
    else throw ConfigError("env config: unknown current scaling '" + s + "'");
  }
  if (j.contains("solver")) {
    const json& s = j.at("solver");
    c.solver.tolerance = s.value("tolerance", c.solver.tolerance);
    c.solver.max_iterations = s.value("max_iterations", c.solver.max_iterations);
    c.solver.constant_power_min_voltage =
        s.value("constant_power_min_voltage", c.solver.constant_power_min_voltage);
  }
  c.validate();
  return c;
}

json to_json(const FeederNetwork& net, const EpisodeScenario& s) {
  json j;
  j["seed"] = s.seed;
  j["global_multiplier"] = s.global_multiplier;
  j["load_multipliers"] = s.load_multipliers;
  json dgs = json::array();
  for (const DgPlacement& g : s.generators) {
    dgs.push_back({{"bus", net.buses()[g.bus].id},
                   {"size_fraction", g.size_fraction},
                   {"power", phasor3_json(g.power)}});
  }
  j["generators"] = dgs;
  if (s.fault) {
    j["fault"] = {{"bus", net.buses()[s.fault->bus].id},
                  {"type", fault_type_name(s.fault->type)},
                  {"phases", s.fault->phases.str()},
                  {"impedance", s.fault->impedance},
                  {"onset", s.fault_onset},
                  {"placement", "uniform over non-source buses"}};
  } else {
    j["fault"] = nullptr;
  }
  json deact = json::array();
  for (std::size_t r = 0; r < s.deactivated.size(); ++r) {
    if (s.deactivated[r]) deact.push_back(net.relays()[r].id);
  }
  j["deactivated"] = deact;
  if (s.disturbance) {
    j["disturbance"] = {{"kind", disturbance_name(s.disturbance->kind)},
                        {"onset", s.disturbance->onset},
                        {"magnitude", s.disturbance->magnitude},
                        {"removed_generators", s.disturbance->removed}};
  }
  return j;
}

EpisodeScenario generate_scenario(std::uint64_t seed, const EnvConfig& cfg,
                                  const FeederNetwork& net) {
  Rng rng(seed);
  EpisodeScenario s;
  s.seed = seed;
  s.global_multiplier =
      cfg.global_load.lo + (cfg.global_load.hi - cfg.global_load.lo) * rng.uniform_open();
  s.load_multipliers.resize(net.loads().size());
  for (double& m : s.load_multipliers) {
    m = cfg.per_load.lo + (cfg.per_load.hi - cfg.per_load.lo) * rng.uniform_open();
  }

  // Nominal real load per bus and phase; DG sits only on load buses.
  std::vector<Eigen::Vector3d> bus_load(net.buses().size(), Eigen::Vector3d::Zero());
  for (const Load& load : net.loads()) bus_load[load.bus] += load.power.real();
  std::vector<std::size_t> load_buses;
  for (std::size_t b = 0; b < bus_load.size(); ++b) {
    if (bus_load[b].sum() > 0.0) load_buses.push_back(b);
  }
  const int max_dg = std::min<int>(cfg.dg_count_max, static_cast<int>(load_buses.size()));
  const int min_dg = std::min(cfg.dg_count_min, max_dg);
  const int dg_count = rng.between(min_dg, max_dg);
  for (int k = 0; k < dg_count; ++k) {
    const std::size_t pick = k + rng.below(load_buses.size() - k);
    std::swap(load_buses[k], load_buses[pick]);
    DgPlacement dg;
    dg.bus = load_buses[k];
    dg.size_fraction = rng.uniform(cfg.dg_size.lo, cfg.dg_size.hi);
    for (int p = 0; p < kPhaseCount; ++p) {
      dg.power[p] = Complex(dg.size_fraction * std::max(bus_load[dg.bus][p], 0.0), 0.0);
    }
    s.generators.push_back(dg);
  }

  // Fault: bus uniform over non-source buses, type by weight among the types
  // the bus can carry, phases uniform among the bus phases.
  std::vector<std::size_t> candidates;
  for (std::size_t b = 0; b < net.buses().size(); ++b) {
    if (b != net.source().bus) candidates.push_back(b);
  }
  FaultSpec fault;
  fault.bus = candidates[rng.below(candidates.size())];
  const PhaseSet bus_phases = net.buses()[fault.bus].phases;
  std::array<double, kFaultTypeCount> w = cfg.fault_type_weights;
  for (int k = 0; k < kFaultTypeCount; ++k) {
    if (fault_phase_count(static_cast<FaultType>(k)) > bus_phases.count()) w[k] = 0.0;
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double u = rng.uniform() * total;
  int type = 0;
  for (; type < kFaultTypeCount - 1; ++type) {
    if (w[type] > 0.0 && u < w[type]) break;
    u -= w[type];
  }
  while (w[type] == 0.0) --type;
  fault.type = static_cast<FaultType>(type);
  std::vector<int> available;
  for (int p = 0; p < kPhaseCount; ++p) {
    if (bus_phases.has(p)) available.push_back(p);
  }
  const int need = fault_phase_count(fault.type);
  for (int k = 0; k < need; ++k) {
    const std::size_t pick = k + rng.below(available.size() - k);
    std::swap(available[k], available[pick]);
  }
  std::uint8_t bits = 0;
  for (int k = 0; k < need; ++k) bits |= static_cast<std::uint8_t>(1u << available[k]);
  fault.phases = PhaseSet(bits);
  const double log_lo = std::log(cfg.fault_impedance.lo);
  const double log_hi = std::log(cfg.fault_impedance.hi);
  fault.impedance = std::clamp(std::exp(rng.uniform(log_lo, log_hi)), cfg.fault_impedance.lo,
                               cfg.fault_impedance.hi);
  s.fault = fault;
  s.fault_onset = rng.between(cfg.fault_step_lo, cfg.fault_step_hi);

  s.deactivated.assign(net.relays().size(), false);
  for (std::size_t r = 0; r < net.relays().size(); ++r) {
    const bool coin = rng.bernoulli(cfg.deactivation_probability);
    s.deactivated[r] = coin && net.upstream_relay(r).has_value();
  }
  return s;
}

OperatingCondition condition_at(const FeederNetwork& net, const EpisodeScenario& s, int t,
                                const std::vector<bool>& breaker_open) {
  OperatingCondition c;
  c.load_multiplier = s.global_multiplier;
  c.load_multipliers = s.load_multipliers;
  if (c.load_multipliers.empty()) c.load_multipliers.assign(net.loads().size(), 1.0);
  std::vector<bool> dg_on(s.generators.size(), true);
  if (s.disturbance && event_active(s.disturbance->onset, t)) {
    if (s.disturbance->kind == DisturbanceKind::loss_of_load) {
      c.load_multiplier *= 1.0 - s.disturbance->magnitude;
    } else {
      for (std::size_t k : s.disturbance->removed) dg_on[k] = false;
    }
  }
  for (std::size_t k = 0; k < s.generators.size(); ++k) {
    if (dg_on[k]) c.extra_generators.push_back({s.generators[k].bus, s.generators[k].power});
  }
  c.breaker_open = breaker_open;
  if (s.fault && event_active(s.fault_onset, t)) c.fault = s.fault;
  return c;
}

ActionResult apply_action(const RelayState& state, int action) {
  ActionResult out{state, false};
  if (!state.closed) return out;
  RelayState& next = out.state;
  if (action == kActionReset) {
    next.counter = 0;
  } else if (action >= 1 && action <= kCounterMax) {
    next.counter = action;
  } else if (action == kActionDecrement) {
    if (state.counter > 1) {
      next.counter = state.counter - 1;
    } else if (state.counter == 1) {
      next.counter = 0;
      out.trip_attempt = true;
      next.attempted = true;
      if (!state.deactivated) next.closed = false;
    }
  } else {
    throw std::out_of_range("relay action must lie in 0..10");
  }
  return out;
}

double reward(bool fault_in_region, bool tripped) {
  if (tripped) return fault_in_region ? kRewardTrip : kRewardFalseTrip;
  return fault_in_region ? kRewardMissedHold : kRewardHold;
}

bool fault_in_effective_region(const FeederNetwork& net,
                               const std::vector<ProtectionZone>& zones, std::size_t relay,
                               const FaultContext& fault, const std::vector<RelayState>& states,
                               InputMode mode) {
  if (!fault.active) return false;
  if (mode == InputMode::phase && !fault.phases.has(net.relays()[relay].assigned_phase)) {
    return false;
  }
  const ProtectionZone& zone = zones[relay];
  if (std::binary_search(zone.primary.begin(), zone.primary.end(), fault.bus)) return true;
  if (!std::binary_search(zone.backup.begin(), zone.backup.end(), fault.bus)) return false;
  for (std::size_t d = 0; d < zones.size(); ++d) {
    if (net.upstream_relay(d) != relay) continue;
    if (std::binary_search(zones[d].primary.begin(), zones[d].primary.end(), fault.bus)) {
      return states[d].deactivated && states[d].attempted;
    }
  }
  return false;
}

json to_json(const StepRecord& r) {
  json breakers = json::array();
  for (bool closed : r.closed_after) breakers.push_back(closed ? 1 : 0);
  return {{"t", r.t},
          {"fault_active", r.fault_active},
          {"observation_hash", r.observation_hash},
          {"actions", r.actions},
          {"rewards", r.rewards},
          {"breakers", breakers}};
}

std::uint64_t hash_observation(std::span<const double> obs) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double x : obs) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    for (int k = 0; k < 8; ++k) {
      h ^= (bits >> (8 * k)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

Environment::Environment(const FeederNetwork& net, EnvConfig cfg)
    : net_(&net), cfg_(std::move(cfg)), zones_(protection_zones(net)) {
  cfg_.validate();
}

FaultContext Environment::fault_context() const {
  FaultContext ctx;
  if (scenario_.fault && event_active(scenario_.fault_onset, t_)) {
    ctx.bus = scenario_.fault->bus;
    ctx.phases = scenario_.fault->phases;
    ctx.active = solution_.energized[ctx.bus];
  }
  return ctx;
}

void Environment::solve_current() {
  std::vector<bool> open(states_.size());
  for (std::size_t r = 0; r < states_.size(); ++r) open[r] = !states_[r].closed;
  const bool fault_on = scenario_.fault && event_active(scenario_.fault_onset, t_);
  const bool dist_on = scenario_.disturbance && event_active(scenario_.disturbance->onset, t_);
  if (have_solution_ && open == solved_open_ && fault_on == solved_fault_ &&
      dist_on == solved_disturbance_) {
    return;
  }
  PowerFlowSolution sol = solve(*net_, condition_at(*net_, scenario_, t_, open), cfg_.solver);
  if (!sol.converged) {
    throw SimulationAbort("power flow did not converge at step " + std::to_string(t_) +
                              " (mismatch " + std::to_string(sol.max_mismatch) + ")",
                          scenario_.seed);
  }
  solution_ = std::move(sol);
  solved_open_ = std::move(open);
  solved_fault_ = fault_on;
  solved_disturbance_ = dist_on;
  have_solution_ = true;
}

std::vector<double> Environment::feature_block(std::size_t relay) const {
  const auto [v, i] = measure(*net_, solution_, relay);
  auto current_feature = [&](double mag) {
    return cfg_.current_scaling == CurrentScaling::log1p ? std::log1p(mag) : mag;
  };
  std::vector<double> f;
  f.reserve(cfg_.features_per_step());
  if (cfg_.input_mode == InputMode::sequence) {
    const Vector3c vs = sequence_components(v);
    const Vector3c is = sequence_components(i);
    for (int k = 0; k < 3; ++k) f.push_back(std::abs(vs[k]));
    for (int k = 0; k < 3; ++k) f.push_back(current_feature(std::abs(is[k])));
  } else {
    for (int k = 0; k < 3; ++k) f.push_back(std::abs(v[k]));
    for (int k = 0; k < 3; ++k) f.push_back(angle_of(v[k]));
    for (int k = 0; k < 3; ++k) f.push_back(current_feature(std::abs(i[k])));
    for (int k = 0; k < 3; ++k) f.push_back(angle_of(i[k]));
  }
  return f;
}

std::vector<Observation> Environment::observations() const {
  const std::size_t m = static_cast<std::size_t>(cfg_.window);
  std::vector<Observation> out(states_.size());
  for (std::size_t r = 0; r < states_.size(); ++r) {
    Observation& o = out[r];
    o.reserve(observation_size());
    // Oldest slot first.
    for (std::size_t k = 0; k < m; ++k) {
      const auto& block = windows_[r][(window_head_[r] + k) % m];
      o.insert(o.end(), block.begin(), block.end());
    }
    o.push_back(states_[r].closed ? 1.0 : 0.0);
    o.push_back(static_cast<double>(states_[r].counter) / kCounterMax);
  }
  return out;
}

std::vector<Observation> Environment::reset(const EpisodeScenario& scenario) {
  scenario_ = scenario;
  const std::size_t n = net_->relays().size();
  if (scenario_.deactivated.size() != n) scenario_.deactivated.resize(n, false);
  if (scenario_.fault) scenario_.fault->validate(*net_);
  states_.assign(n, RelayState{});
  for (std::size_t r = 0; r < n; ++r) states_[r].deactivated = scenario_.deactivated[r];
  t_ = 0;
  have_solution_ = false;
  trace_ = EpisodeTrace{};
  trace_.seed = scenario_.seed;
  solve_current();
  const std::size_t m = static_cast<std::size_t>(cfg_.window);
  windows_.assign(n, {});
  window_head_.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) windows_[r].assign(m, feature_block(r));
  return observations();
}

StepResult Environment::step(std::span<const int> actions) {
  const std::size_t n = states_.size();
  if (actions.size() != n) throw std::invalid_argument("one action per relay is required");
  if (done()) throw std::logic_error("episode already finished");

  StepRecord rec;
  rec.t = t_;
  const FaultContext ctx = fault_context();
  rec.fault_active = ctx.active;
  const std::vector<Observation> before = observations();
  for (const Observation& o : before) rec.observation_hash.push_back(hash_observation(o));
  rec.actions.assign(actions.begin(), actions.end());

  StepResult out;
  out.rewards.assign(n, 0.0);
  out.trip_attempt.assign(n, false);
  rec.in_region.assign(n, false);
  std::vector<RelayState> next(n);
  for (std::size_t r = 0; r < n; ++r) {
    rec.in_region[r] =
        fault_in_effective_region(*net_, zones_, r, ctx, states_, cfg_.input_mode);
    const ActionResult res = apply_action(states_[r], actions[r]);
    next[r] = res.state;
    out.trip_attempt[r] = res.trip_attempt;
    if (states_[r].closed) out.rewards[r] = reward(rec.in_region[r], res.trip_attempt);
  }
  states_ = std::move(next);
  ++t_;
  solve_current();

  const std::size_t m = static_cast<std::size_t>(cfg_.window);
  for (std::size_t r = 0; r < n; ++r) {
    windows_[r][window_head_[r]] = feature_block(r);
    window_head_[r] = (window_head_[r] + 1) % m;
  }
  out.observations = observations();
  out.global_reward = std::accumulate(out.rewards.begin(), out.rewards.end(), 0.0);
  out.done = done();

  rec.rewards = out.rewards;
  rec.trip_attempt = out.trip_attempt;
  rec.closed_after.resize(n);
  for (std::size_t r = 0; r < n; ++r) rec.closed_after[r] = states_[r].closed;
  trace_.steps.push_back(std::move(rec));
  trace_.complete = out.done;
  return out;
}

EpisodeScenario reset_with_resample(Environment& env, const ScenarioFactory& make,
                                    std::uint64_t seed, int attempts) {
  std::string last;
  for (int k = 0; k < attempts; ++k) {
    EpisodeScenario s = make(seed + static_cast<std::uint64_t>(k));
    try {
      env.reset(s);
      return s;
    } catch (const SimulationAbort& e) {
      last = e.what();
    }
  }
  throw SimulationAbort("no convergent scenario after " + std::to_string(attempts) +
                            " seeds: " + last,
                        seed);
}

}  // namespace rlrelay
