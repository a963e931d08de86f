#include "rlrelay/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace rlrelay {

using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0')
      << ms << 'Z';
  return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

// Plays one episode; the trained relay's episode ends when it trips.
CurvePoint run_training_episode(Environment& env, DqnAgent& agent, std::size_t relay,
                                const std::vector<PolicyPtr>& frozen, double eps) {
  for (const PolicyPtr& p : frozen) {
    if (p) p->reset();
  }
  const std::size_t n = frozen.size();
  std::vector<Observation> obs = env.observations();
  std::vector<int> actions(n, kActionReset);
  CurvePoint point;
  bool missed = false;
  bool false_trip = false;
  bool tripped = false;
  while (!tripped) {
    const int t = env.time();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == relay) actions[j] = agent.act(obs[j], eps);
      else actions[j] = frozen[j] ? frozen[j]->act(obs[j], t) : kActionReset;
    }
    StepResult step = env.step(actions);
    const bool in_region = env.trace().steps.back().in_region[relay];
    const double r = step.rewards[relay];
    tripped = step.trip_attempt[relay];
    if (tripped && !in_region) false_trip = true;
    if (!tripped && in_region) missed = true;
    // Only the breaker opening ends the process; the horizon is a cutoff of
    // a process that would go on, so the last step still bootstraps.
    agent.remember(Transition{obs[relay], actions[relay], r, step.observations[relay], tripped});
    agent.train_step();
    point.episode_return += r;
    point.global_return += step.global_reward;
    ++point.steps;
    obs = std::move(step.observations);
    if (step.done) break;
  }
  // Holding through part of an in-region fault is only a failure if the
  // relay never trips.
  point.false_operation = false_trip || (missed && !tripped);
  return point;
}

}  // namespace

std::uint64_t config_hash(const json& j) {
  // FNV-1a over the canonical dump; nlohmann orders object keys.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  if (j.is_null()) return c;
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  try {
    if (j.contains("env")) c.env = env_config_from_json(j.at("env"));
    if (j.contains("agent")) c.agent = train_config_from_json(j.at("agent"));
    if (!j.contains("agent") || !j.at("agent").contains("gamma")) c.agent.gamma = c.env.gamma;
    if (j.contains("episodes") && !j.at("episodes").is_null()) c.episodes = j.at("episodes").get<int>();
    c.test_episodes = j.value("test_episodes", c.test_episodes);
    c.relays = j.value("relays", c.relays);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.env.validate();
  c.agent.validate();
  if (c.episodes && *c.episodes < 1) throw ConfigError("episodes must be positive");
  if (c.test_episodes < 1) throw ConfigError("test_episodes must be positive");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return run_config_from_json(j);
}

json to_json(const RunConfig& c) {
  json j;
  j["env"] = to_json(c.env);
  j["agent"] = to_json(c.agent);
  j["episodes"] = c.episodes ? json(*c.episodes) : json(nullptr);
  j["test_episodes"] = c.test_episodes;
  j["relays"] = c.relays;
  return j;
}

EpisodeScenario training_scenario(std::uint64_t seed, const EnvConfig& cfg,
                                  const FeederNetwork& net, std::size_t relay) {
  EpisodeScenario s = generate_scenario(seed, cfg, net);
  for (std::size_t r = 0; r < s.deactivated.size(); ++r) {
    if (r == relay || !net.is_descendant_relay(relay, r)) s.deactivated[r] = false;
  }
  return s;
}

RelayTrainingResult train_relay(const FeederNetwork& net, std::size_t relay,
                                const std::vector<PolicyPtr>& frozen,
                                const TrainerOptions& opts) {
  const std::size_t n = net.relays().size();
  if (relay >= n) throw ConfigError("unknown relay index " + std::to_string(relay));
  if (frozen.size() != n) throw std::invalid_argument("one frozen-policy slot per relay is required");
  RelayTrainingResult result;
  result.relay = relay;
  result.seed = derive_seed(opts.seed, {0x7261696eULL, relay});
  result.started = utc_now();

  Environment env(net, opts.env);
  DqnAgent agent(env.observation_size(), opts.agent, derive_seed(result.seed, {1}));
  const ScenarioFactory make = [&](std::uint64_t s) {
    return training_scenario(s, opts.env, net, relay);
  };

  std::vector<int> window;
  int window_sum = 0;
  for (int episode = 0; episode < opts.episodes; ++episode) {
    CurvePoint point;
    bool finished = false;
    // A scenario that stops converging mid-episode is replaced by a fresh
    // draw; transitions already stored stay in the buffer.
    for (std::uint64_t attempt = 0; !finished; ++attempt) {
      if (attempt >= 16) throw SimulationAbort("no convergent scenario", result.seed);
      const std::uint64_t scenario_seed =
          derive_seed(result.seed, {2, static_cast<std::uint64_t>(episode), attempt});
      const EpisodeScenario scenario = reset_with_resample(env, make, scenario_seed);
      if (scenario.seed != scenario_seed) ++result.resampled;
      try {
        point = run_training_episode(env, agent, relay, frozen,
                                     epsilon_at(opts.agent, episode, opts.episodes));
        finished = true;
      } catch (const SimulationAbort&) {
        ++result.resampled;
      }
      point.scenario_seed = scenario.seed;
    }
    point.episode = episode;
    window.push_back(point.false_operation ? 1 : 0);
    window_sum += window.back();
    if (window.size() > static_cast<std::size_t>(kFalseOpWindow)) {
      window_sum -= window[window.size() - 1 - kFalseOpWindow];
    }
    point.false_ops_in_window = window_sum;
    result.curve.push_back(point);
    if (opts.progress) opts.progress(relay, point);
  }
  if (!agent.online().finite()) throw TrainingFault("relay " + net.relays()[relay].id + " produced non-finite weights");
  result.weights.net = agent.online();
  result.weights.input_mode = opts.env.input_mode;
  result.weights.window = opts.env.window;
  result.weights.relay = net.relays()[relay].id;
  result.finished = utc_now();
  return result;
}

TrainingRun train_all(const FeederNetwork& net, const TrainerOptions& opts,
                      const std::string& out_dir) {
  TrainingRun run;
  run.order = training_order(net);
  std::vector<PolicyPtr> frozen(net.relays().size());
  json& m = run.manifest;
  m["feeder"] = net.name();
  m["feeder_fingerprint"] = net.fingerprint();
  m["seed"] = opts.seed;
  m["episodes_per_relay"] = opts.episodes;
  m["env_config_hash"] = config_hash(to_json(opts.env));
  m["agent_config_hash"] = config_hash(to_json(opts.agent));
  m["env_config"] = to_json(opts.env);
  m["agent_config"] = to_json(opts.agent);
  m["order"] = json::array();
  for (std::size_t r : run.order) m["order"].push_back(net.relays()[r].id);
  m["phases"] = json::array();
  m["complete"] = false;

  const std::filesystem::path dir(out_dir);
  if (!out_dir.empty()) std::filesystem::create_directories(dir);
  auto flush_manifest = [&] {
    if (!out_dir.empty()) write_file(dir / "manifest.json", m.dump(2) + "\n");
  };
  flush_manifest();

  for (std::size_t relay : run.order) {
    const std::string id = net.relays()[relay].id;
    RelayTrainingResult res;
    try {
      res = train_relay(net, relay, frozen, opts);
    } catch (const std::exception& e) {
      m["error"] = {{"relay", id}, {"what", e.what()}};
      flush_manifest();
      throw;
    }
    json phase = {{"relay", id},
                  {"seed", res.seed},
                  {"episodes", res.curve.size()},
                  {"resampled", res.resampled},
                  {"weights_hash", res.weights.net.hash()},
                  {"started", res.started},
                  {"finished", res.finished}};
    if (!out_dir.empty()) {
      const std::string wname = "weights_" + id + ".json";
      const std::string cname = "curve_" + id + ".csv";
      save_weights(res.weights, (dir / wname).string());
      write_file(dir / cname, curve_csv(res.curve));
      phase["weights"] = wname;
      phase["curve"] = cname;
    }
    m["phases"].push_back(phase);
    flush_manifest();
    frozen[relay] = std::make_shared<GreedyPolicy>(res.weights);
    run.results.push_back(std::move(res));
  }
  m["complete"] = true;
  run.complete = true;
  flush_manifest();
  return run;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream out;
  out << "episode,return,global_return,false_operation,false_ops_window,steps,scenario_seed\n";
  out << std::setprecision(17);
  for (const CurvePoint& p : curve) {
    out << p.episode << ',' << p.episode_return << ',' << p.global_return << ','
        << (p.false_operation ? 1 : 0) << ',' << p.false_ops_in_window << ',' << p.steps << ','
        << p.scenario_seed << '\n';
  }
  return out.str();
}

std::vector<CurvePoint> parse_curve_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<CurvePoint> out;
  if (!std::getline(in, line) || line.rfind("episode,return", 0) != 0) {
    throw ConfigError("curve CSV: missing header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() < 5) throw ConfigError("curve CSV: short row '" + line + "'");
    CurvePoint p;
    p.episode = std::stoi(cells[0]);
    p.episode_return = std::stod(cells[1]);
    p.global_return = std::stod(cells[2]);
    p.false_operation = cells[3] == "1";
    p.false_ops_in_window = std::stoi(cells[4]);
    if (cells.size() > 5) p.steps = std::stoi(cells[5]);
    if (cells.size() > 6) p.scenario_seed = std::stoull(cells[6]);
    out.push_back(p);
  }
  return out;
}

std::vector<CurveSummaryRow> aggregate_curves(const std::vector<std::vector<CurvePoint>>& runs) {
  std::vector<CurveSummaryRow> rows;
  if (runs.empty()) return rows;
  std::size_t len = runs.front().size();
  for (const auto& r : runs) len = std::min(len, r.size());
  const double k = static_cast<double>(runs.size());
  for (std::size_t e = 0; e < len; ++e) {
    CurveSummaryRow row;
    row.episode = runs.front()[e].episode;
    for (const auto& r : runs) {
      row.mean_return += r[e].episode_return / k;
      row.mean_false_ops += r[e].false_ops_in_window / k;
    }
    for (const auto& r : runs) {
      row.std_return += std::pow(r[e].episode_return - row.mean_return, 2) / k;
      row.std_false_ops += std::pow(r[e].false_ops_in_window - row.mean_false_ops, 2) / k;
    }
    row.std_return = std::sqrt(row.std_return);
    row.std_false_ops = std::sqrt(row.std_false_ops);
    rows.push_back(row);
  }
  return rows;
}

std::string summary_csv(const std::vector<CurveSummaryRow>& rows) {
  std::ostringstream out;
  out << "episode,mean_return,std_return,mean_false_ops,std_false_ops\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.episode << ',' << r.mean_return << ',' << r.std_return << ',' << r.mean_false_ops
        << ',' << r.std_false_ops << '\n';
  }
  return out.str();
}

}  // namespace rlrelay
