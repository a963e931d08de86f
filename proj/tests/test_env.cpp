#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "env_oracle.hpp"
#include "fuzz.hpp"
#include "rlrelay/env.hpp"

using namespace rlrelay;

namespace {

FeederNetwork feeder(const char* name) {
  return load_feeder(oracle::data_path(std::string("feeders/") + name + ".json"));
}

// Scenario with a fixed fault and no randomness.
EpisodeScenario fixed_scenario(const FeederNetwork& net, const std::string& bus, int onset,
                               FaultType type = FaultType::three_phase,
                               const std::string& phases = "ABC", double ohms = 0.01) {
  EpisodeScenario s;
  s.load_multipliers.assign(net.loads().size(), 1.0);
  s.fault = FaultSpec{net.bus_index(bus), type, PhaseSet::parse(phases), ohms};
  s.fault_onset = onset;
  s.deactivated.assign(net.relays().size(), false);
  return s;
}

std::vector<int> hold(std::size_t n) { return std::vector<int>(n, kActionReset); }

}  // namespace

TEST(Actions, ExhaustiveTransitionTable) {
  int cases = 0;
  EXPECT_EQ(oracle::action_table_mismatches(&cases), 0);
  EXPECT_EQ(cases, 2 * 2 * 2 * 10 * 11);
}

TEST(Actions, Examples) {
  RelayState s;
  s.counter = 3;
  EXPECT_EQ(apply_action(s, 10).state.counter, 2);
  s.counter = 1;
  const ActionResult trip = apply_action(s, 10);
  EXPECT_TRUE(trip.trip_attempt);
  EXPECT_FALSE(trip.state.closed);
  s.closed = false;
  EXPECT_EQ(apply_action(s, 5).state, s);
  EXPECT_THROW(apply_action(RelayState{}, 11), std::out_of_range);
}

TEST(Rewards, FourCases) {
  EXPECT_EQ(reward(true, true), 100.0);
  EXPECT_EQ(reward(false, true), -120.0);
  EXPECT_EQ(reward(false, false), 5.0);
  EXPECT_EQ(reward(true, false), -10.0);
}

TEST(Environment, ObservationShapeAndPadding) {
  const FeederNetwork net = feeder("feeder5");
  EnvConfig cfg;
  Environment env(net, cfg);
  const auto obs = env.reset(fixed_scenario(net, "3", 20));
  ASSERT_EQ(obs.size(), 3u);
  ASSERT_EQ(obs[0].size(), 6u * 8u + 2u);
  for (std::size_t slot = 1; slot < 8; ++slot) {
    for (std::size_t f = 0; f < 6; ++f) EXPECT_EQ(obs[0][slot * 6 + f], obs[0][f]);
  }
  EXPECT_EQ(obs[0][48], 1.0);
  EXPECT_EQ(obs[0][49], 0.0);
  // Balanced pre-fault state: zero and negative sequence vanish.
  EXPECT_LT(obs[0][0], 1e-9);
  EXPECT_GT(obs[0][1], 0.9);
  EXPECT_LT(obs[0][2], 1e-9);
}

TEST(Environment, PhaseModeFeaturesAndAngles) {
  const FeederNetwork net = feeder("feeder13");
  EnvConfig cfg;
  cfg.input_mode = InputMode::phase;
  cfg.window = 2;
  Environment env(net, cfg);
  const auto obs = env.reset(fixed_scenario(net, "675", 20));
  ASSERT_EQ(obs[0].size(), 12u * 2u + 2u);
  for (std::size_t k : {3u, 4u, 5u, 9u, 10u, 11u}) {
    EXPECT_GT(obs[0][k], -std::numbers::pi);
    EXPECT_LE(obs[0][k], std::numbers::pi);
  }
}

TEST(Environment, WindowShiftsOldestFirst) {
  const FeederNetwork net = feeder("feeder5");
  EnvConfig cfg;
  cfg.window = 3;
  Environment env(net, cfg);
  env.reset(fixed_scenario(net, "3", 0, FaultType::slg, "A", 0.01));
  const StepResult r = env.step(hold(3));
  const std::size_t r23 = net.relay_index("R23");
  // Newest slot holds the faulted measurement; zero sequence appears.
  EXPECT_LT(r.observations[r23][0], 1e-9);
  EXPECT_GT(r.observations[r23][2 * 6 + 0], 0.01);
}

TEST(Environment, FaultAppearsAfterOnsetStepAndHoldPenalty) {
  const FeederNetwork net = feeder("feeder5");
  Environment env(net, EnvConfig{});
  env.reset(fixed_scenario(net, "3", 2));
  const std::size_t r23 = net.relay_index("R23");
  const std::size_t r12 = net.relay_index("R12");
  EXPECT_EQ(env.step(hold(3)).rewards[r23], 5.0);  // t=0
  EXPECT_EQ(env.step(hold(3)).rewards[r23], 5.0);  // t=1
  EXPECT_FALSE(env.fault_context().active);
  EXPECT_EQ(env.step(hold(3)).rewards[r23], 5.0);  // t=2, fault strikes after the actions
  EXPECT_TRUE(env.fault_context().active);
  const StepResult r = env.step(hold(3));  // t=3
  EXPECT_EQ(r.rewards[r23], -10.0);
  EXPECT_EQ(r.rewards[r12], 5.0);  // backup region not yet effective
}

TEST(Environment, TripClearsFaultAndOpensBranch) {
  const FeederNetwork net = feeder("feeder5");
  Environment env(net, EnvConfig{});
  env.reset(fixed_scenario(net, "3", 0));
  const std::size_t r23 = net.relay_index("R23");
  env.step(hold(3));
  std::vector<int> a = hold(3);
  a[r23] = 1;
  EXPECT_EQ(env.step(a).rewards[r23], -10.0);  // arming is still a hold
  a[r23] = kActionDecrement;
  const StepResult r = env.step(a);
  EXPECT_TRUE(r.trip_attempt[r23]);
  EXPECT_EQ(r.rewards[r23], 100.0);
  EXPECT_FALSE(env.states()[r23].closed);
  EXPECT_FALSE(env.solution().energized[net.bus_index("3")]);
  EXPECT_FALSE(env.fault_context().active);
  EXPECT_EQ(r.observations[r23][6 * 8], 0.0);
  const StepResult after = env.step(a);
  EXPECT_EQ(after.rewards[r23], 0.0);
  EXPECT_EQ(after.rewards[net.relay_index("R12")], 5.0);
}

TEST(Environment, PreArmedRelayStillNeedsTwoSteps) {
  const FeederNetwork net = feeder("feeder5");
  Environment env(net, EnvConfig{});
  env.reset(fixed_scenario(net, "3", 5));
  const std::size_t r23 = net.relay_index("R23");
  std::vector<int> a = hold(3);
  // Keep the counter at 1 and decrement on the first faulted observation.
  int trip_time = -1;
  while (trip_time < 0) {
    a[r23] = env.fault_context().active ? kActionDecrement : 1;
    const int t = env.time();
    if (env.step(a).trip_attempt[r23]) trip_time = t;
  }
  EXPECT_EQ(trip_time, 6);
  EXPECT_EQ(trip_time + 1 - 5, 2);  // breaker reads open two steps after onset
}

TEST(Environment, FalseTripWithoutFault) {
  const FeederNetwork net = feeder("feeder5");
  Environment env(net, EnvConfig{});
  env.reset(fixed_scenario(net, "3", 40));
  std::vector<int> a = hold(3);
  a[0] = 1;
  env.step(a);
  a[0] = kActionDecrement;
  EXPECT_EQ(env.step(a).rewards[0], -120.0);
}

TEST(Environment, BackupRegionAfterDeactivatedAttempt) {
  const FeederNetwork net = feeder("feeder5");
  Environment env(net, EnvConfig{});
  EpisodeScenario s = fixed_scenario(net, "3", 0);
  const std::size_t r23 = net.relay_index("R23");
  const std::size_t r12 = net.relay_index("R12");
  s.deactivated[r23] = true;
  env.reset(s);
  std::vector<int> a = hold(3);
  a[r23] = 1;
  env.step(a);
  a[r23] = kActionDecrement;
  const StepResult attempt = env.step(a);
  EXPECT_TRUE(attempt.trip_attempt[r23]);
  EXPECT_EQ(attempt.rewards[r23], 100.0);
  EXPECT_TRUE(env.states()[r23].closed);
  EXPECT_TRUE(env.states()[r23].attempted);
  EXPECT_EQ(attempt.rewards[r12], 5.0);  // attempt not yet visible at t
  const StepResult next = env.step(hold(3));
  EXPECT_EQ(next.rewards[r12], -10.0);  // backup zone now effective
  a = hold(3);
  a[r12] = 1;
  env.step(a);
  a[r12] = kActionDecrement;
  EXPECT_EQ(env.step(a).rewards[r12], 100.0);
}

TEST(Environment, UpstreamTripBeforeAttemptIsFalse) {
  const FeederNetwork net = feeder("feeder5");
  Environment env(net, EnvConfig{});
  EpisodeScenario s = fixed_scenario(net, "3", 0);
  const std::size_t r12 = net.relay_index("R12");
  s.deactivated[net.relay_index("R23")] = true;
  env.reset(s);
  std::vector<int> a = hold(3);
  a[r12] = 1;
  env.step(a);
  a[r12] = kActionDecrement;
  EXPECT_EQ(env.step(a).rewards[r12], -120.0);
}

TEST(Environment, PhaseModeRegionNeedsAssignedPhase) {
  const FeederNetwork net = feeder("feeder5");
  const auto zones = protection_zones(net);
  FaultContext ctx{true, net.bus_index("3"), PhaseSet::parse("B")};
  std::vector<RelayState> states(3);
  const std::size_t r23 = net.relay_index("R23");
  EXPECT_TRUE(fault_in_effective_region(net, zones, r23, ctx, states, InputMode::sequence));
  EXPECT_FALSE(fault_in_effective_region(net, zones, r23, ctx, states, InputMode::phase));
  ctx.phases = PhaseSet::parse("A");
  EXPECT_TRUE(fault_in_effective_region(net, zones, r23, ctx, states, InputMode::phase));
  ctx.active = false;
  EXPECT_FALSE(fault_in_effective_region(net, zones, r23, ctx, states, InputMode::sequence));
}

TEST(Environment, EpisodeEndsAtHorizon) {
  const FeederNetwork net = feeder("feeder2");
  EnvConfig cfg;
  Environment env(net, cfg);
  env.reset(fixed_scenario(net, "2", 20));
  StepResult r;
  for (int t = 0; t < cfg.episode_length; ++t) r = env.step(hold(1));
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(env.trace().complete);
  EXPECT_EQ(env.trace().steps.size(), 50u);
  EXPECT_THROW(env.step(hold(1)), std::logic_error);
}

TEST(Environment, TraceIsDeterministic) {
  const FeederNetwork net = feeder("feeder13");
  const EnvConfig cfg;
  auto run = [&] {
    Environment env(net, cfg);
    env.reset(generate_scenario(321, cfg, net));
    Rng rng(5);
    while (!env.done()) {
      std::vector<int> a(2);
      for (int& x : a) x = static_cast<int>(rng.below(11));
      env.step(a);
    }
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : env.trace().steps) j.push_back(to_json(s));
    return j.dump();
  };
  EXPECT_EQ(run(), run());
}

TEST(Latency, AtLeastTwoStepsFromArmingOnFuzzedTraces) {
  const FeederNetwork net = feeder("feeder13");
  EnvConfig cfg;
  int trips = 0, one_step = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    Environment env(net, cfg);
    env.reset(generate_scenario(seed, cfg, net));
    Rng rng(seed + 1000);
    std::vector<int> armed_at(2, -1);
    while (!env.done()) {
      const auto before = env.states();
      std::vector<int> a(2);
      for (int& x : a) x = rng.bernoulli(0.5) ? kActionDecrement : static_cast<int>(rng.below(10));
      const int t = env.time();
      const StepResult r = env.step(a);
      for (int i = 0; i < 2; ++i) {
        if (!before[i].closed) continue;
        if (a[i] >= 1 && a[i] <= kCounterMax) armed_at[i] = t;
        if (r.trip_attempt[i]) {
          ++trips;
          const int latency = env.time() - armed_at[i];
          EXPECT_GE(latency, 2);
          if (latency < 2) ++one_step;
        }
      }
    }
  }
  EXPECT_GT(trips, 20);
  EXPECT_EQ(one_step, 0);
}

TEST(Scenario, SamplerRanges) {
  const FeederNetwork net = feeder("feeder13");
  const EnvConfig cfg;
  std::map<FaultType, int> types;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const EpisodeScenario s = generate_scenario(seed, cfg, net);
    EXPECT_GT(s.global_multiplier, 0.7);
    EXPECT_LT(s.global_multiplier, 1.3);
    for (double m : s.load_multipliers) {
      EXPECT_GT(m, 0.9);
      EXPECT_LT(m, 1.1);
    }
    EXPECT_LE(s.generators.size(), 2u);
    for (const auto& g : s.generators) {
      EXPECT_GE(g.size_fraction, 0.5);
      EXPECT_LE(g.size_fraction, 1.25);
    }
    ASSERT_TRUE(s.fault);
    EXPECT_NE(s.fault->bus, net.source().bus);
    EXPECT_GE(s.fault->impedance, 0.001);
    EXPECT_LE(s.fault->impedance, 20.0);
    EXPECT_NO_THROW(s.fault->validate(net));
    EXPECT_GE(s.fault_onset, 15);
    EXPECT_LE(s.fault_onset, 35);
    EXPECT_FALSE(s.deactivated[net.relay_index("R650")]);
    ++types[s.fault->type];
  }
  EXPECT_EQ(types.size(), 4u);
}

TEST(Scenario, FaultTypeWeightsOnThreePhaseFeeder) {
  const FeederNetwork net = feeder("feeder5");
  const EnvConfig cfg;
  std::vector<int> counts(4, 0);
  const int n = 20000;
  int deactivated = 0;
  for (int seed = 0; seed < n; ++seed) {
    const EpisodeScenario s = generate_scenario(static_cast<std::uint64_t>(seed), cfg, net);
    ++counts[static_cast<int>(s.fault->type)];
    deactivated += s.deactivated[net.relay_index("R23")];
  }
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(static_cast<double>(counts[k]) / n, cfg.fault_type_weights[k], 0.015);
  }
  EXPECT_NEAR(static_cast<double>(deactivated) / n, 0.5, 0.015);
}

TEST(Scenario, SameSeedSameScenario) {
  const FeederNetwork net = feeder("feeder5");
  const EnvConfig cfg;
  EXPECT_EQ(to_json(net, generate_scenario(77, cfg, net)).dump(),
            to_json(net, generate_scenario(77, cfg, net)).dump());
  EXPECT_NE(to_json(net, generate_scenario(77, cfg, net)).dump(),
            to_json(net, generate_scenario(78, cfg, net)).dump());
}

TEST(Scenario, DisturbancesApplyFromOnset) {
  const FeederNetwork net = feeder("feeder5");
  EpisodeScenario s;
  s.global_multiplier = 1.0;
  s.generators.push_back({net.bus_index("3"), 1.0, Vector3c::Constant(Complex(1e5, 0))});
  s.disturbance = Disturbance{DisturbanceKind::loss_of_load, 10, 0.25, {}};
  const std::vector<bool> closed(3, false);
  EXPECT_DOUBLE_EQ(condition_at(net, s, 10, closed).load_multiplier, 1.0);
  EXPECT_DOUBLE_EQ(condition_at(net, s, 11, closed).load_multiplier, 0.75);
  s.disturbance = Disturbance{DisturbanceKind::loss_of_dg, 10, 0.25, {0}};
  EXPECT_EQ(condition_at(net, s, 10, closed).extra_generators.size(), 1u);
  EXPECT_EQ(condition_at(net, s, 11, closed).extra_generators.size(), 0u);
  EXPECT_FALSE(condition_at(net, s, 11, closed).fault);
}

TEST(EnvConfigJson, RoundTripAndValidation) {
  EnvConfig c;
  c.window = 4;
  c.input_mode = InputMode::phase;
  const EnvConfig back = env_config_from_json(to_json(c));
  EXPECT_EQ(back.window, 4);
  EXPECT_EQ(back.input_mode, InputMode::phase);
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(env_config_from_json({{"window", 0}}), ConfigError);
  EXPECT_THROW(env_config_from_json({{"fault_impedance", {0.0001, 20}}}), ConfigError);
  EXPECT_THROW(env_config_from_json({{"input_mode", "polar"}}), ConfigError);
}
