#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlrelay/env.hpp"
#include "rlrelay/rng.hpp"

namespace rlrelay {

// Raised when a loss, target or gradient stops being finite.
class TrainingFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fully connected Q-network: ReLU hidden layers and a linear head. All
// parameters live in one flat vector, layer by layer, each layer storing its
// row-major weights followed by its bias.
class QNetwork {
 public:
  QNetwork() = default;
  explicit QNetwork(std::vector<int> dims);

  // He-style uniform fan-in initialization, zero biases.
  static QNetwork he_uniform(std::vector<int> dims, Rng& rng);

  const std::vector<int>& dims() const { return dims_; }
  std::size_t layer_count() const { return dims_.size() - 1; }
  std::size_t input_size() const { return static_cast<std::size_t>(dims_.front()); }
  std::size_t output_size() const { return static_cast<std::size_t>(dims_.back()); }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  double* weight(std::size_t layer) { return params_.data() + offset_[layer]; }
  const double* weight(std::size_t layer) const { return params_.data() + offset_[layer]; }
  double* bias(std::size_t layer) { return weight(layer) + rows(layer) * cols(layer); }
  const double* bias(std::size_t layer) const {
    return weight(layer) + rows(layer) * cols(layer);
  }
  std::size_t rows(std::size_t layer) const { return static_cast<std::size_t>(dims_[layer + 1]); }
  std::size_t cols(std::size_t layer) const { return static_cast<std::size_t>(dims_[layer]); }
  std::size_t layer_offset(std::size_t layer) const { return offset_[layer]; }

  std::vector<double> forward(std::span<const double> obs) const;

  bool finite() const;
  std::uint64_t hash() const;

  friend bool operator==(const QNetwork& a, const QNetwork& b) {
    return a.dims_ == b.dims_ && a.params_ == b.params_;
  }

 private:
  std::vector<int> dims_;
  std::vector<std::size_t> offset_;
  std::vector<double> params_;
};

std::vector<int> q_network_dims(std::size_t input_size,
                                const std::vector<int>& hidden = {128, 256, 128});

std::size_t argmax(std::span<const double> q);

// Mean squared TD error over the batch and its gradient (same layout as the
// network parameters). Only the taken action's output enters the loss.
double loss_and_gradient(const QNetwork& net, const std::vector<std::span<const double>>& obs,
                         std::span<const int> actions, std::span<const double> targets,
                         std::vector<double>& grad);

struct Transition {
  Observation obs;
  int action = 0;
  double reward = 0.0;
  Observation next_obs;
  bool terminal = false;
};

// y = R for terminal transitions, otherwise R + gamma * Q_target(s', b) with
// b = argmax Q_online(s', .) (double) or argmax Q_target(s', .) (vanilla).
std::vector<double> td_targets(const std::vector<const Transition*>& batch,
                               const QNetwork& online, const QNetwork& target, double gamma,
                               bool double_dqn);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& state,
               double learning_rate);

// target <- (1 - tau) target + tau online
void soft_update(QNetwork& target, const QNetwork& online, double tau);

// Uniform over all actions with probability eps, otherwise argmax.
int select_action(std::span<const double> q, double eps, Rng& rng);

// FIFO ring of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 2000);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  // Oldest first.
  const Transition& at(std::size_t age) const;
  // Uniform with replacement; nullopt while the buffer holds fewer than
  // `batch` items.
  std::optional<std::vector<const Transition*>> sample(std::size_t batch, Rng& rng) const;
  void clear();

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // slot of the oldest item once full
  std::vector<Transition> items_;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double tau = 0.005;
  double gamma = 0.99;
  int batch_size = 32;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_anneal_fraction = 0.6;
  bool double_dqn = true;
  int buffer_capacity = 2000;
  int warmup = 200;
  std::vector<int> hidden{128, 256, 128};

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Linear anneal over the first fraction of episodes, constant afterwards.
double epsilon_at(const TrainConfig& c, int episode, int total_episodes);

// Online/target pair with optimizer and replay memory.
class DqnAgent {
 public:
  DqnAgent(std::size_t input_size, const TrainConfig& cfg, std::uint64_t seed);

  int act(std::span<const double> obs, double eps);
  void remember(Transition t) { buffer_.push(std::move(t)); }
  // One replay step: sample, targets, gradient, Adam, soft update. Returns
  // the loss, or nullopt during warm-up.
  std::optional<double> train_step();

  const QNetwork& online() const { return online_; }
  const QNetwork& target() const { return target_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const AdamState& adam() const { return adam_; }

 private:
  TrainConfig cfg_;
  QNetwork online_;
  QNetwork target_;
  AdamState adam_;
  ReplayBuffer buffer_;
  Rng rng_;
  std::vector<double> grad_;
};

inline constexpr int kWeightsFormatVersion = 1;

struct PolicyWeights {
  QNetwork net;
  InputMode input_mode = InputMode::sequence;
  int window = 8;
  std::string relay;
};

nlohmann::json weights_json(const PolicyWeights& w);
PolicyWeights weights_from_json(const nlohmann::json& j);
void save_weights(const PolicyWeights& w, const std::string& path);
PolicyWeights load_weights(const std::string& path);

}  // namespace rlrelay
