#include "rlrelay/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rlrelay/kernels.hpp"

namespace rlrelay {

using nlohmann::json;

QNetwork::QNetwork(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw ConfigError("network needs at least an input and an output layer");
  for (int d : dims_) {
    if (d <= 0) throw ConfigError("network layer widths must be positive");
  }
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    offset_.push_back(total);
    total += static_cast<std::size_t>(dims_[l + 1]) * (static_cast<std::size_t>(dims_[l]) + 1);
  }
  params_.assign(total, 0.0);
}

QNetwork QNetwork::he_uniform(std::vector<int> dims, Rng& rng) {
  QNetwork net(std::move(dims));
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(net.cols(l)));
    double* w = net.weight(l);
    for (std::size_t k = 0; k < net.rows(l) * net.cols(l); ++k) w[k] = rng.uniform(-limit, limit);
  }
  return net;
}

std::vector<double> QNetwork::forward(std::span<const double> obs) const {
  if (obs.size() != input_size()) {
    throw std::invalid_argument("observation length " + std::to_string(obs.size()) +
                                " does not match network input " +
                                std::to_string(input_size()));
  }
  const auto& k = kernels::active();
  std::vector<double> a(obs.begin(), obs.end());
  std::vector<double> z;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    z.resize(rows(l));
    k.gemv(weight(l), bias(l), a.data(), z.data(), rows(l), cols(l));
    if (l + 1 < layer_count()) k.relu(z.data(), z.size());
    a.swap(z);
  }
  return a;
}

bool QNetwork::finite() const {
  return std::all_of(params_.begin(), params_.end(), [](double x) { return std::isfinite(x); });
}

std::uint64_t QNetwork::hash() const {
  std::uint64_t h = hash_observation(params_);
  for (int d : dims_) h = splitmix64(h ^ static_cast<std::uint64_t>(d));
  return h;
}

std::vector<int> q_network_dims(std::size_t input_size, const std::vector<int>& hidden) {
  std::vector<int> dims{static_cast<int>(input_size)};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(kActionCount);
  return dims;
}

std::size_t argmax(std::span<const double> q) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < q.size(); ++i) {
    if (q[i] > q[best]) best = i;
  }
  return best;
}

double loss_and_gradient(const QNetwork& net, const std::vector<std::span<const double>>& obs,
                         std::span<const int> actions, std::span<const double> targets,
                         std::vector<double>& grad) {
  const std::size_t batch = obs.size();
  if (batch == 0 || actions.size() != batch || targets.size() != batch) {
    throw std::invalid_argument("batch observations, actions and targets must align");
  }
  const auto& k = kernels::active();
  const std::size_t layers = net.layer_count();
  grad.assign(net.params().size(), 0.0);

  // acts[l][b] is the input to layer l for sample b (post-activation).
  std::vector<std::vector<std::vector<double>>> acts(layers + 1,
                                                     std::vector<std::vector<double>>(batch));
  for (std::size_t b = 0; b < batch; ++b) {
    if (obs[b].size() != net.input_size()) {
      throw std::invalid_argument("observation length does not match network input");
    }
    if (actions[b] < 0 || static_cast<std::size_t>(actions[b]) >= net.output_size()) {
      throw std::invalid_argument("action index out of range");
    }
    acts[0][b].assign(obs[b].begin(), obs[b].end());
    for (std::size_t l = 0; l < layers; ++l) {
      acts[l + 1][b].resize(net.rows(l));
      k.gemv(net.weight(l), net.bias(l), acts[l][b].data(), acts[l + 1][b].data(), net.rows(l),
             net.cols(l));
      if (l + 1 < layers) k.relu(acts[l + 1][b].data(), net.rows(l));
    }
  }

  double loss = 0.0;
  std::vector<std::vector<double>> delta(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const double q = acts[layers][b][static_cast<std::size_t>(actions[b])];
    const double r = targets[b] - q;
    loss += r * r;
    delta[b].assign(net.output_size(), 0.0);
    delta[b][static_cast<std::size_t>(actions[b])] = -2.0 * r / static_cast<double>(batch);
  }
  loss /= static_cast<double>(batch);
  if (!std::isfinite(loss)) {
    throw TrainingFault("non-finite TD loss (" + std::to_string(loss) + ")");
  }

  std::vector<std::vector<double>> prev(batch);
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t rows = net.rows(l), cols = net.cols(l);
    double* gw = grad.data() + net.layer_offset(l);
    double* gb = gw + rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      double* gw_row = gw + r * cols;
      for (std::size_t b = 0; b < batch; ++b) {
        const double d = delta[b][r];
        if (d == 0.0) continue;
        k.axpy(d, acts[l][b].data(), gw_row, cols);
        gb[r] += d;
      }
    }
    if (l == 0) break;
    const double* w = net.weight(l);
    for (std::size_t b = 0; b < batch; ++b) {
      prev[b].assign(cols, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = delta[b][r];
        if (d != 0.0) k.axpy(d, w + r * cols, prev[b].data(), cols);
      }
      // ReLU derivative: zero where the activation was clipped.
      const std::vector<double>& a = acts[l][b];
      for (std::size_t c = 0; c < cols; ++c) {
        if (!(a[c] > 0.0)) prev[b][c] = 0.0;
      }
    }
    std::swap(delta, prev);
  }
  return loss;
}

std::vector<double> td_targets(const std::vector<const Transition*>& batch,
                               const QNetwork& online, const QNetwork& target, double gamma,
                               bool double_dqn) {
  if (online.dims() != target.dims()) {
    throw std::invalid_argument("online and target networks differ in shape");
  }
  std::vector<double> y(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = *batch[i];
    if (t.terminal) {
      y[i] = t.reward;
      continue;
    }
    const std::vector<double> qt = target.forward(t.next_obs);
    const std::size_t pick = double_dqn ? argmax(online.forward(t.next_obs)) : argmax(qt);
    y[i] = t.reward + gamma * qt[pick];
    if (!std::isfinite(y[i])) throw TrainingFault("non-finite TD target");
  }
  return y;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& state,
               double learning_rate) {
  if (grad.size() != params.size()) throw std::invalid_argument("gradient shape mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double step_size = learning_rate / (1.0 - std::pow(kAdamBeta1, t));
  const double inv_bc2 = 1.0 / (1.0 - std::pow(kAdamBeta2, t));
  kernels::active().adam(params.data(), grad.data(), state.m.data(), state.v.data(),
                         params.size(), kAdamBeta1, kAdamBeta2, step_size, inv_bc2, kAdamEps);
}

void soft_update(QNetwork& target, const QNetwork& online, double tau) {
  if (target.dims() != online.dims()) throw std::invalid_argument("network shape mismatch");
  kernels::active().lerp(tau, online.params().data(), target.params().data(),
                         target.params().size());
}

int select_action(std::span<const double> q, double eps, Rng& rng) {
  if (rng.uniform() < eps) return static_cast<int>(rng.below(q.size()));
  return static_cast<int>(argmax(q));
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay capacity must be positive");
  items_.reserve(capacity);
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t age) const {
  if (age >= items_.size()) throw std::out_of_range("replay index out of range");
  return items_[(head_ + age) % items_.size()];
}

std::optional<std::vector<const Transition*>> ReplayBuffer::sample(std::size_t batch,
                                                                   Rng& rng) const {
  if (items_.size() < batch || batch == 0) return std::nullopt;
  std::vector<const Transition*> out(batch);
  for (auto& p : out) p = &items_[rng.below(items_.size())];
  return out;
}

void ReplayBuffer::clear() {
  items_.clear();
  head_ = 0;
}

void TrainConfig::validate() const {
  auto open01 = [](double x, const char* what) {
    if (!(x > 0.0 && x < 1.0)) throw ConfigError(std::string("agent config: ") + what + " must lie in (0, 1)");
  };
  open01(learning_rate, "learning rate");
  open01(tau, "tau");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("agent config: gamma must lie in [0, 1)");
  for (double e : {eps_start, eps_end, eps_anneal_fraction}) {
    if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("agent config: epsilon schedule values must lie in [0, 1]");
  }
  if (batch_size < 1) throw ConfigError("agent config: batch size must be positive");
  if (buffer_capacity < batch_size) throw ConfigError("agent config: replay capacity below batch size");
  if (warmup < batch_size) throw ConfigError("agent config: warm-up below batch size");
  for (int h : hidden) {
    if (h <= 0) throw ConfigError("agent config: hidden widths must be positive");
  }
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"tau", c.tau},
          {"gamma", c.gamma},
          {"batch_size", c.batch_size},
          {"eps_start", c.eps_start},
          {"eps_end", c.eps_end},
          {"eps_anneal_fraction", c.eps_anneal_fraction},
          {"double_dqn", c.double_dqn},
          {"buffer_capacity", c.buffer_capacity},
          {"warmup", c.warmup},
          {"hidden", c.hidden}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  if (j.is_null()) return c;
  if (!j.is_object()) throw ConfigError("agent config must be a JSON object");
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.tau = j.value("tau", c.tau);
  c.gamma = j.value("gamma", c.gamma);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.eps_start = j.value("eps_start", c.eps_start);
  c.eps_end = j.value("eps_end", c.eps_end);
  c.eps_anneal_fraction = j.value("eps_anneal_fraction", c.eps_anneal_fraction);
  c.double_dqn = j.value("double_dqn", c.double_dqn);
  c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
  c.warmup = j.value("warmup", c.warmup);
  if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<int>>();
  c.validate();
  return c;
}

double epsilon_at(const TrainConfig& c, int episode, int total_episodes) {
  const double span = c.eps_anneal_fraction * total_episodes;
  if (span <= 0.0 || episode >= span) return c.eps_end;
  return c.eps_start + (c.eps_end - c.eps_start) * (episode / span);
}

DqnAgent::DqnAgent(std::size_t input_size, const TrainConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      buffer_(static_cast<std::size_t>(cfg.buffer_capacity)),
      rng_(derive_seed(seed, {1})) {
  cfg_.validate();
  Rng init(derive_seed(seed, {0}));
  online_ = QNetwork::he_uniform(q_network_dims(input_size, cfg_.hidden), init);
  target_ = online_;
}

int DqnAgent::act(std::span<const double> obs, double eps) {
  return select_action(online_.forward(obs), eps, rng_);
}

std::optional<double> DqnAgent::train_step() {
  if (buffer_.size() < static_cast<std::size_t>(cfg_.warmup)) return std::nullopt;
  auto batch = buffer_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_);
  if (!batch) return std::nullopt;
  const std::vector<double> y = td_targets(*batch, online_, target_, cfg_.gamma, cfg_.double_dqn);
  std::vector<std::span<const double>> obs;
  std::vector<int> actions;
  obs.reserve(batch->size());
  for (const Transition* t : *batch) {
    obs.emplace_back(t->obs);
    actions.push_back(t->action);
  }
  const double loss = loss_and_gradient(online_, obs, actions, y, grad_);
  adam_step(online_.params(), grad_, adam_, cfg_.learning_rate);
  if (!online_.finite()) throw TrainingFault("non-finite parameters after Adam step");
  soft_update(target_, online_, cfg_.tau);
  return loss;
}

json weights_json(const PolicyWeights& w) {
  const QNetwork& net = w.net;
  json layers = json::array();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    json rows = json::array();
    for (std::size_t r = 0; r < net.rows(l); ++r) {
      const double* row = net.weight(l) + r * net.cols(l);
      rows.push_back(std::vector<double>(row, row + net.cols(l)));
    }
    layers.push_back({{"W", rows},
                      {"b", std::vector<double>(net.bias(l), net.bias(l) + net.rows(l))}});
  }
  return {{"format_version", kWeightsFormatVersion},
          {"relay", w.relay},
          {"input_mode", input_mode_name(w.input_mode)},
          {"m", w.window},
          {"dims", net.dims()},
          {"layers", layers}};
}

PolicyWeights weights_from_json(const json& j) {
  if (!j.is_object() || j.value("format_version", 0) != kWeightsFormatVersion) {
    throw ConfigError("weights document: unsupported or missing format_version");
  }
  PolicyWeights w;
  w.relay = j.value("relay", std::string());
  w.input_mode = parse_input_mode(j.at("input_mode").get<std::string>());
  w.window = j.at("m").get<int>();
  w.net = QNetwork(j.at("dims").get<std::vector<int>>());
  const json& layers = j.at("layers");
  if (layers.size() != w.net.layer_count()) throw ConfigError("weights document: layer count mismatch");
  for (std::size_t l = 0; l < w.net.layer_count(); ++l) {
    const json& rows = layers[l].at("W");
    const json& b = layers[l].at("b");
    if (rows.size() != w.net.rows(l) || b.size() != w.net.rows(l)) {
      throw ConfigError("weights document: layer " + std::to_string(l) + " shape mismatch");
    }
    for (std::size_t r = 0; r < w.net.rows(l); ++r) {
      if (rows[r].size() != w.net.cols(l)) {
        throw ConfigError("weights document: layer " + std::to_string(l) + " shape mismatch");
      }
      for (std::size_t c = 0; c < w.net.cols(l); ++c) {
        w.net.weight(l)[r * w.net.cols(l) + c] = rows[r][c].get<double>();
      }
      w.net.bias(l)[r] = b[r].get<double>();
    }
  }
  if (!w.net.finite()) throw ConfigError("weights document: non-finite parameter");
  return w;
}

void save_weights(const PolicyWeights& w, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write weights file '" + path + "'");
  out << weights_json(w).dump() << '\n';
}

PolicyWeights load_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open weights file '" + path + "'");
  try {
    return weights_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError("weights file '" + path + "': " + e.what());
  }
}

}  // namespace rlrelay
