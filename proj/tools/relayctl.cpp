// relayctl: command-line front end for training and evaluating RL relays.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rlrelay/harness.hpp"
#include "rlrelay/trainer.hpp"

namespace fs = std::filesystem;
using namespace rlrelay;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitAbort = 3;
constexpr int kExitPartial = 4;  // finished, but some episodes were aborted

struct Globals {
  std::string feeder = "feeder5";
  std::string config;
  std::uint64_t seed = 1;
  std::string out;
  std::optional<int> episodes;
  std::string mode;
  std::vector<std::string> relays;
};

// A bundled feeder name or a path to a feeder JSON file.
FeederNetwork resolve_feeder(const Globals& g, const RunConfig& cfg) {
  fs::path p(g.feeder);
  if (!fs::exists(p)) p = fs::path(RLRELAY_DATA_DIR) / "feeders" / (g.feeder + ".json");
  FeederNetwork net = load_feeder(p.string());
  const auto& keep = g.relays.empty() ? cfg.relays : g.relays;
  return keep.empty() ? net : net.with_relays(keep);
}

RunConfig resolve_config(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (!g.mode.empty()) c.env.input_mode = parse_input_mode(g.mode);
  if (g.episodes) {
    c.episodes = *g.episodes;
    c.test_episodes = *g.episodes;
  }
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

fs::path out_dir(const Globals& g, const char* fallback) {
  fs::path dir(g.out.empty() ? fallback : g.out);
  fs::create_directories(dir);
  return dir;
}

int cmd_train(const Globals& g) {
  const RunConfig cfg = resolve_config(g);
  const FeederNetwork net = resolve_feeder(g, cfg);
  TrainerOptions opts;
  opts.env = cfg.env;
  opts.agent = cfg.agent;
  opts.episodes = g.episodes.value_or(cfg.episodes_for(net.relays().size()));
  opts.seed = g.seed;
  opts.progress = [&](std::size_t relay, const CurvePoint& p) {
    if ((p.episode + 1) % 100 == 0 || p.episode + 1 == opts.episodes) {
      std::fprintf(stderr, "[%s] episode %d/%d  return %.1f  false ops (last %d) %d\n",
                   net.relays()[relay].id.c_str(), p.episode + 1, opts.episodes, p.episode_return,
                   kFalseOpWindow, p.false_ops_in_window);
    }
  };
  const fs::path dir = out_dir(g, "run");
  const TrainingRun run = train_all(net, opts, dir.string());
  std::cout << "trained " << run.results.size() << " relay(s); manifest at "
            << (dir / "manifest.json").string() << '\n';
  return 0;
}

std::vector<PolicyPtr> policies_for(const std::string& dir, const FeederNetwork& net,
                                    const EnvConfig& env) {
  return load_policies(net, env, dir);
}

int cmd_evaluate(const Globals& g, const std::string& policy_dir) {
  const RunConfig cfg = resolve_config(g);
  const FeederNetwork net = resolve_feeder(g, cfg);
  const auto policies = policies_for(policy_dir, net, cfg.env);
  EvaluationOptions o;
  o.episodes = cfg.test_episodes;
  o.seed = g.seed;
  o.title = "Failure Rate (" + std::string(input_mode_name(cfg.env.input_mode)) + " input)";
  const EvaluationReport rep = evaluate(net, cfg.env, policies, o);
  const fs::path dir = out_dir(g, "report");
  write_text(dir / "report.json", to_json(rep).dump(2) + "\n");
  const std::string text = format_report(rep, cfg.env.step_seconds);
  write_text(dir / "report.txt", text);
  write_text(dir / "response_histogram.csv", histogram_csv(rep, cfg.env.step_seconds));
  std::cout << text;
  if (rep.aborted > 0) {
    std::cerr << rep.aborted << " episode(s) aborted on non-convergence\n";
    return kExitPartial;
  }
  return 0;
}

int cmd_robustness(const Globals& g, const std::string& policy_dir, std::vector<double> levels) {
  const RunConfig cfg = resolve_config(g);
  const FeederNetwork net = resolve_feeder(g, cfg);
  const auto policies = policies_for(policy_dir, net, cfg.env);
  if (levels.empty()) levels = kPeakLevels;
  const RobustnessTable peak =
      robustness_peak(net, cfg.env, policies, cfg.test_episodes, g.seed, levels);
  const RobustnessTable dist =
      robustness_disturbance(net, cfg.env, policies, cfg.test_episodes, g.seed);
  const fs::path dir = out_dir(g, "robustness");
  write_text(dir / "peak.json", to_json(peak).dump(2) + "\n");
  write_text(dir / "disturbance.json", to_json(dist).dump(2) + "\n");
  const std::string text = format_table(peak) + "\n" + format_table(dist);
  write_text(dir / "robustness.txt", text);
  std::cout << text;
  int aborted = 0;
  for (const auto* t : {&peak, &dist}) {
    for (const RobustnessRow& r : t->rows) aborted += r.aborted;
  }
  if (aborted > 0) {
    std::cerr << aborted << " episode(s) aborted on non-convergence\n";
    return kExitPartial;
  }
  return 0;
}

int cmd_powerflow(const Globals& g, const std::string& condition_path) {
  const RunConfig cfg = resolve_config(g);
  const FeederNetwork net = resolve_feeder(g, cfg);
  OperatingCondition cond;
  if (!condition_path.empty()) {
    std::ifstream in(condition_path);
    if (!in) throw ConfigError("cannot open condition '" + condition_path + "'");
    cond = parse_condition(net, json::parse(in));
  } else {
    cond.load_multipliers.assign(net.loads().size(), 1.0);
  }
  const PowerFlowSolution sol = solve(net, cond, cfg.env.solver);
  const std::string doc = solution_json(net, sol).dump(2) + "\n";
  if (g.out.empty()) std::cout << doc;
  else write_text(g.out, doc);
  if (!sol.converged) {
    std::cerr << "power flow did not converge\n";
    return kExitAbort;
  }
  return 0;
}

int cmd_generate(const Globals& g) {
  const RunConfig cfg = resolve_config(g);
  const FeederNetwork net = resolve_feeder(g, cfg);
  const int n = g.episodes.value_or(cfg.test_episodes);
  std::ostringstream lines;
  for (int k = 0; k < n; ++k) {
    lines << to_json(net, generate_scenario(evaluation_seed(g.seed, k), cfg.env, net)).dump() << '\n';
  }
  if (g.out.empty()) std::cout << lines.str();
  else write_text(g.out, lines.str());
  return 0;
}

int cmd_aggregate(const Globals& g, const std::vector<std::string>& inputs) {
  std::vector<std::vector<CurvePoint>> runs;
  for (const std::string& path : inputs) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open curve '" + path + "'");
    runs.push_back(parse_curve_csv({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}));
  }
  const std::string csv = summary_csv(aggregate_curves(runs));
  if (g.out.empty()) std::cout << csv;
  else write_text(g.out, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate reinforcement-learning protective relays"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--feeder", g.feeder, "Bundled feeder name or feeder JSON path")->capture_default_str();
  app.add_option("--config", g.config, "Run config JSON (env, agent, episodes)");
  app.add_option("--seed", g.seed, "Base seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory or file");
  app.add_option("--episodes", g.episodes, "Episodes per relay (train) or test episodes");
  app.add_option("--mode", g.mode, "Input mode")->check(CLI::IsMember({"phase", "sequence"}));
  app.add_option("--relays", g.relays, "Keep only these relays")->delimiter(',');

  std::string policy_dir = "run";
  std::string condition;
  std::vector<double> levels;
  std::vector<std::string> curves;

  auto* train = app.add_subcommand("train", "Nested training along the feeder's training order");
  auto* eval = app.add_subcommand("evaluate", "Greedy test episodes and failure-rate report");
  eval->add_option("--policies", policy_dir, "Training output directory")->capture_default_str();
  auto* robust = app.add_subcommand("robustness", "Peak-load and disturbance sweeps");
  robust->add_option("--policies", policy_dir, "Training output directory")->capture_default_str();
  robust->add_option("--levels", levels, "Peak increase levels in percent")->delimiter(',');
  auto* pf = app.add_subcommand("powerflow", "Solve one operating condition");
  pf->add_option("--condition", condition, "Operating condition JSON");
  auto* gen = app.add_subcommand("generate-scenarios", "Write seeded scenarios as JSON Lines");
  auto* agg = app.add_subcommand("aggregate-curves", "Mean and std of learning curves per episode");
  agg->add_option("curves", curves, "Curve CSV files")->required();

  for (CLI::App* sub : {train, eval, robust, pf, gen, agg}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(g);
    if (*eval) return cmd_evaluate(g, policy_dir);
    if (*robust) return cmd_robustness(g, policy_dir, levels);
    if (*pf) return cmd_powerflow(g, condition);
    if (*gen) return cmd_generate(g);
    if (*agg) return cmd_aggregate(g, curves);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const SimulationAbort& e) {
    std::cerr << "aborted: " << e.what() << " (seed " << e.seed() << ")\n";
    return kExitAbort;
  } catch (const TrainingFault& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kExitAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
