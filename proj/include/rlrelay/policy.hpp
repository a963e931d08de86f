#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "rlrelay/agent.hpp"

namespace rlrelay {

// Decision rule of one relay.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual int act(std::span<const double> obs, int step) = 0;
  // Called before each episode.
  virtual void reset() {}
};

using PolicyPtr = std::shared_ptr<Policy>;

// Frozen network acting greedily.
class GreedyPolicy final : public Policy {
 public:
  explicit GreedyPolicy(PolicyWeights weights);
  int act(std::span<const double> obs, int step) override;
  const PolicyWeights& weights() const { return weights_; }

 private:
  PolicyWeights weights_;
};

class ConstantPolicy final : public Policy {
 public:
  explicit ConstantPolicy(int action) : action_(action) {}
  int act(std::span<const double>, int) override { return action_; }

 private:
  int action_;
};

class ScriptedPolicy final : public Policy {
 public:
  using Script = std::function<int(std::span<const double> obs, int step)>;
  explicit ScriptedPolicy(Script script) : script_(std::move(script)) {}
  int act(std::span<const double> obs, int step) override { return script_(obs, step); }

 private:
  Script script_;
};

// Arms the counter at `step` (value 1) and decrements on the next step.
PolicyPtr trip_at_step(int step);

}  // namespace rlrelay
