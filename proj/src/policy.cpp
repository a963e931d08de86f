#include "rlrelay/policy.hpp"

namespace rlrelay {

GreedyPolicy::GreedyPolicy(PolicyWeights weights) : weights_(std::move(weights)) {
  if (weights_.net.output_size() != static_cast<std::size_t>(kActionCount)) {
    throw ConfigError("policy network must have " + std::to_string(kActionCount) + " outputs");
  }
}

int GreedyPolicy::act(std::span<const double> obs, int) {
  return static_cast<int>(argmax(weights_.net.forward(obs)));
}

PolicyPtr trip_at_step(int step) {
  return std::make_shared<ScriptedPolicy>([step](std::span<const double>, int t) {
    if (t == step) return 1;
    if (t == step + 1) return kActionDecrement;
    return kActionReset;
  });
}

}  // namespace rlrelay
