#include "fixtures.hpp"

#include <fstream>
#include <stdexcept>

#include "rlrelay/harness.hpp"

namespace oracle {

using namespace rlrelay;

PolicyPtr script_policy(Script events) {
  return std::make_shared<ScriptedPolicy>([events = std::move(events)](std::span<const double>, int t) {
    for (const auto& [step, action] : events) {
      if (step == t) return action;
    }
    return kActionReset;
  });
}

std::string fixture_path(const std::string& name) {
  return std::string(RLRELAY_FIXTURE_DIR) + "/" + name;
}

DisturbanceFixture load_disturbance_fixture(const FeederNetwork& net, const EnvConfig& cfg) {
  std::ifstream in(fixture_path("disturbance_episodes.json"));
  if (!in) throw std::runtime_error("missing disturbance fixture");
  const nlohmann::json doc = nlohmann::json::parse(in);
  DisturbanceFixture fx;
  fx.feeder = doc.at("feeder").get<std::string>();
  const std::size_t n = net.relays().size();
  for (const auto& e : doc.at("episodes")) {
    LabeledEpisode ep;
    ep.name = e.at("name").get<std::string>();
    const std::string kind = e.at("kind").get<std::string>();
    const DisturbanceKind k =
        kind == "loss_of_load" ? DisturbanceKind::loss_of_load : DisturbanceKind::loss_of_dg;
    ep.scenario = disturbance_scenario(e.at("seed").get<std::uint64_t>(), cfg, net, k);
    Disturbance& d = *ep.scenario.disturbance;
    d.onset = e.at("onset").get<int>();
    d.magnitude = e.at("magnitude").get<double>();
    if (e.contains("removed")) d.removed = e.at("removed").get<std::vector<std::size_t>>();
    ep.scripts.assign(n, {});
    ep.trips.assign(n, std::nullopt);
    for (const auto& [id, events] : e.at("scripts").items()) {
      for (const auto& ev : events) ep.scripts[net.relay_index(id)].push_back({ev[0].get<int>(), ev[1].get<int>()});
    }
    for (const auto& [id, step] : e.at("trips").items()) ep.trips[net.relay_index(id)] = step.get<int>();
    fx.episodes.push_back(std::move(ep));
  }
  for (const auto& [kind, count] : doc.at("expected_failures").items()) {
    fx.expected_failures[kind == "loss_of_load" ? DisturbanceKind::loss_of_load
                                                : DisturbanceKind::loss_of_dg] = count.get<int>();
  }
  return fx;
}

}  // namespace oracle
