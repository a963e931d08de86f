#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rlrelay/env.hpp"
#include "rlrelay/policy.hpp"

namespace oracle {

// Scripted relay actions: (step, action), action 0 at unlisted steps.
using Script = std::vector<std::pair<int, int>>;

rlrelay::PolicyPtr script_policy(Script events);

struct LabeledEpisode {
  std::string name;
  rlrelay::EpisodeScenario scenario;
  std::vector<Script> scripts;               // per relay
  std::vector<std::optional<int>> trips;     // expected trip action time per relay
};

struct DisturbanceFixture {
  std::string feeder;
  std::vector<LabeledEpisode> episodes;
  std::map<rlrelay::DisturbanceKind, int> expected_failures;
};

DisturbanceFixture load_disturbance_fixture(const rlrelay::FeederNetwork& net,
                                            const rlrelay::EnvConfig& cfg);

std::string fixture_path(const std::string& name);

}  // namespace oracle
