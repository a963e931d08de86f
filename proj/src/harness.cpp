#include "rlrelay/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rlrelay/trainer.hpp"

namespace rlrelay {

using nlohmann::json;

namespace {

constexpr const char* kNoFaultTrip = "No Fault";
constexpr const char* kTrip = "Trip";
constexpr const char* kHold = "Hold";

bool contains(const std::vector<std::size_t>& sorted, std::size_t v) {
  return std::binary_search(sorted.begin(), sorted.end(), v);
}

struct RowSpec {
  std::string scenario;
  std::string action;
};

std::vector<RowSpec> rows_for(TableFormat f) {
  switch (f) {
    case TableFormat::single_sequence:
      return {{kNoFaultTrip, kTrip}, {"After Fault", kHold}};
    case TableFormat::single_phase:
      return {{kNoFaultTrip, kTrip},
              {"After Fault in Assigned Phase", kHold},
              {"After Fault in Other Phases", kTrip}};
    case TableFormat::multi:
      return {{kNoFaultTrip, kTrip},
              {"Local Fault", kHold},
              {"Remote Fault", kTrip},
              {"Backup", kHold}};
  }
  return {};
}

// Row key of a failing label; rows outside the format are appended on use.
std::string row_key(RelayLabel l, TableFormat f) {
  const bool multi = f == TableFormat::multi;
  switch (l) {
    case RelayLabel::false_trip_no_fault:
      return std::string(kNoFaultTrip) + " / " + kTrip;
    case RelayLabel::missed_trip:
      if (multi) return "Local Fault / Hold";
      return f == TableFormat::single_phase ? "After Fault in Assigned Phase / Hold"
                                            : "After Fault / Hold";
    case RelayLabel::false_trip_other_phase:
      return multi ? "Remote Fault / Trip" : "After Fault in Other Phases / Trip";
    case RelayLabel::false_trip_remote:
    case RelayLabel::false_trip_premature_backup:
      return "Remote Fault / Trip";
    case RelayLabel::backup_failure:
      return "Backup / Hold";
    default:
      return "";
  }
}

// Lower number wins when several relays fail in one episode.
int failure_priority(RelayLabel l) {
  switch (l) {
    case RelayLabel::false_trip_no_fault: return 0;
    case RelayLabel::false_trip_remote:
    case RelayLabel::false_trip_premature_backup:
    case RelayLabel::false_trip_other_phase: return 1;
    case RelayLabel::missed_trip: return 2;
    case RelayLabel::backup_failure: return 3;
    default: return 9;
  }
}

std::string pct(double p) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << p << " %";
  return o.str();
}

std::string aligned(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      line += row[c];
      if (c + 1 < row.size()) line += std::string(width[c] - row[c].size() + 2, ' ');
    }
    out << line << '\n';
  }
  return out.str();
}

}  // namespace

std::string_view label_name(RelayLabel label) {
  switch (label) {
    case RelayLabel::correct: return "correct";
    case RelayLabel::false_trip_no_fault: return "false_trip_no_fault";
    case RelayLabel::false_trip_remote: return "false_trip_remote";
    case RelayLabel::false_trip_other_phase: return "false_trip_other_phase";
    case RelayLabel::false_trip_premature_backup: return "false_trip_premature_backup";
    case RelayLabel::missed_trip: return "missed_trip";
    case RelayLabel::backup_success: return "backup_success";
    case RelayLabel::backup_failure: return "backup_failure";
  }
  return "?";
}

TableFormat table_format_for(const FeederNetwork& net, InputMode mode) {
  if (net.relays().size() > 1) return TableFormat::multi;
  return mode == InputMode::phase ? TableFormat::single_phase : TableFormat::single_sequence;
}

EpisodeOutcome classify_episode(const FeederNetwork& net,
                                const std::vector<ProtectionZone>& zones,
                                const EpisodeScenario& scenario, const EpisodeTrace& trace,
                                InputMode mode, TableFormat format) {
  if (!trace.complete) throw std::invalid_argument("classify_episode: incomplete trace");
  EpisodeOutcome out;
  out.seed = scenario.seed;
  out.has_fault = scenario.fault.has_value();
  const std::size_t n = net.relays().size();
  out.relays.resize(n);
  int worst = 99;
  for (std::size_t r = 0; r < n; ++r) {
    RelayOutcome& ro = out.relays[r];
    const bool fault_primary = out.has_fault && contains(zones[r].primary, scenario.fault->bus);
    const bool fault_backup = out.has_fault && contains(zones[r].backup, scenario.fault->bus);
    bool region_seen = false;
    for (const StepRecord& rec : trace.steps) {
      if (rec.in_region[r]) region_seen = true;
      if (!rec.trip_attempt[r]) continue;
      ro.trip_step = rec.t;
      if (rec.in_region[r]) {
        ro.backup = fault_backup;
        ro.delay = rec.t + 1 - scenario.fault_onset;
        ro.label = fault_backup ? RelayLabel::backup_success : RelayLabel::correct;
      } else if (!out.has_fault || !event_active(scenario.fault_onset, rec.t)) {
        ro.label = RelayLabel::false_trip_no_fault;
      } else if (fault_primary) {
        // In the zone but not a valid target: the assigned phase is healthy
        // in phase mode, otherwise the fault was already cleared upstream.
        ro.label = mode == InputMode::phase && !scenario.fault->phases.has(net.relays()[r].assigned_phase)
                       ? RelayLabel::false_trip_other_phase
                       : RelayLabel::false_trip_remote;
      } else if (fault_backup) {
        ro.label = RelayLabel::false_trip_premature_backup;
      } else {
        ro.label = RelayLabel::false_trip_remote;
      }
      break;
    }
    if (!ro.trip_step && region_seen) {
      ro.label = fault_backup ? RelayLabel::backup_failure : RelayLabel::missed_trip;
    }
    if (!label_ok(ro.label)) {
      out.success = false;
      const int p = failure_priority(ro.label);
      if (p < worst) {
        worst = p;
        out.category = row_key(ro.label, format);
      }
    }
  }
  return out;
}

std::uint64_t evaluation_seed(std::uint64_t base, int k) {
  return derive_seed(base, {0x6576616cULL, static_cast<std::uint64_t>(k)});
}

EpisodeOutcome run_episode(Environment& env, const std::vector<PolicyPtr>& policies,
                           const EpisodeScenario& scenario, TableFormat format) {
  const std::size_t n = env.relay_count();
  if (policies.size() != n) throw std::invalid_argument("one policy per relay is required");
  for (const PolicyPtr& p : policies) {
    if (!p) throw std::invalid_argument("missing policy");
    p->reset();
  }
  std::vector<Observation> obs = env.reset(scenario);
  std::vector<int> actions(n, kActionReset);
  while (!env.done()) {
    const int t = env.time();
    for (std::size_t r = 0; r < n; ++r) actions[r] = policies[r]->act(obs[r], t);
    StepResult step = env.step(actions);
    obs = std::move(step.observations);
  }
  return classify_episode(env.network(), env.zones(), scenario, env.trace(),
                          env.config().input_mode, format);
}

namespace {

EvaluationReport empty_report(const FeederNetwork& net, const EnvConfig& cfg,
                              const std::vector<PolicyPtr>& policies, const std::string& title) {
  EvaluationReport rep;
  rep.title = title;
  rep.format = table_format_for(net, cfg.input_mode);
  for (const RowSpec& r : rows_for(rep.format)) rep.rows.push_back({r.scenario, r.action, 0, 0});
  const std::vector<ProtectionZone> zones = protection_zones(net);
  for (std::size_t r = 0; r < zones.size(); ++r) {
    rep.histograms.push_back({net.relays()[r].id, {}, {}, !zones[r].backup.empty()});
  }
  rep.label_counts.assign(net.relays().size(), {});
  rep.metadata["feeder"] = net.name();
  rep.metadata["feeder_fingerprint"] = net.fingerprint();
  rep.metadata["env_config_hash"] = config_hash(to_json(cfg));
  rep.metadata["input_mode"] = input_mode_name(cfg.input_mode);
  json hashes = json::array();
  for (const PolicyPtr& p : policies) {
    if (auto* g = dynamic_cast<const GreedyPolicy*>(p.get())) hashes.push_back(g->weights().net.hash());
    else hashes.push_back(nullptr);
  }
  rep.metadata["weights_hashes"] = hashes;
  return rep;
}

void add_outcome(EvaluationReport& rep, const EpisodeOutcome& o) {
  ++rep.evaluated;
  if (o.has_fault) ++rep.fault_episodes;
  for (std::size_t r = 0; r < o.relays.size(); ++r) {
    const RelayOutcome& ro = o.relays[r];
    ++rep.label_counts[r][static_cast<std::size_t>(ro.label)];
    if (ro.delay) ++(ro.backup ? rep.histograms[r].backup : rep.histograms[r].primary)[*ro.delay];
  }
  if (o.success) return;
  ++rep.failures;
  auto it = std::find_if(rep.rows.begin(), rep.rows.end(), [&](const TableRow& row) {
    return row.scenario + " / " + row.action == o.category;
  });
  if (it == rep.rows.end()) {
    const auto slash = o.category.find(" / ");
    rep.rows.push_back({o.category.substr(0, slash), o.category.substr(slash + 3), 0, 0});
    it = rep.rows.end() - 1;
  }
  ++it->occurrences;
}

void finish_report(EvaluationReport& rep) {
  for (TableRow& row : rep.rows) row.total = rep.evaluated;
}

}  // namespace

EvaluationReport evaluate(const FeederNetwork& net, const EnvConfig& cfg,
                          const std::vector<PolicyPtr>& policies,
                          const EvaluationOptions& opts) {
  EvaluationReport rep = empty_report(net, cfg, policies, opts.title);
  rep.requested = opts.episodes;
  rep.metadata["seed"] = opts.seed;
  rep.metadata["episodes"] = opts.episodes;
  Environment env(net, cfg);
  for (int k = 0; k < opts.episodes; ++k) {
    const std::uint64_t s = evaluation_seed(opts.seed, k);
    try {
      const EpisodeScenario sc = opts.scenarios ? opts.scenarios(s) : generate_scenario(s, cfg, net);
      add_outcome(rep, run_episode(env, policies, sc, rep.format));
    } catch (const SimulationAbort&) {
      ++rep.aborted;
      rep.aborted_seeds.push_back(s);
    }
  }
  finish_report(rep);
  return rep;
}

EvaluationReport evaluate_scenarios(const FeederNetwork& net, const EnvConfig& cfg,
                                    const std::vector<PolicyPtr>& policies,
                                    const std::vector<EpisodeScenario>& scenarios,
                                    const std::string& title) {
  EvaluationReport rep = empty_report(net, cfg, policies, title);
  rep.requested = static_cast<int>(scenarios.size());
  Environment env(net, cfg);
  for (const EpisodeScenario& sc : scenarios) {
    try {
      add_outcome(rep, run_episode(env, policies, sc, rep.format));
    } catch (const SimulationAbort&) {
      ++rep.aborted;
      rep.aborted_seeds.push_back(sc.seed);
    }
  }
  finish_report(rep);
  return rep;
}

EpisodeScenario peak_scenario(std::uint64_t seed, const EnvConfig& cfg,
                              const FeederNetwork& net, double level_percent) {
  EpisodeScenario s = generate_scenario(seed, cfg, net);
  if (level_percent <= 0.0) return s;
  Rng rng(derive_seed(seed, {0x7065616bULL}));
  const double hi = cfg.global_load.hi;
  s.global_multiplier = rng.uniform_open_closed(hi, hi * (1.0 + level_percent / 100.0));
  return s;
}

EpisodeScenario disturbance_scenario(std::uint64_t seed, const EnvConfig& cfg,
                                     const FeederNetwork& net, DisturbanceKind kind) {
  EnvConfig c = cfg;
  c.deactivation_probability = 0.0;
  if (kind == DisturbanceKind::loss_of_dg) c.dg_count_min = std::max(1, c.dg_count_min);
  c.dg_count_max = std::max(c.dg_count_max, c.dg_count_min);
  EpisodeScenario s = generate_scenario(seed, c, net);
  s.fault.reset();
  s.deactivated.assign(s.deactivated.size(), false);
  Rng rng(derive_seed(seed, {0x64697374ULL}));
  Disturbance d;
  d.kind = kind;
  d.onset = rng.between(cfg.fault_step_lo, cfg.fault_step_hi);
  d.magnitude = rng.uniform(0.1, 0.4);
  if (kind == DisturbanceKind::loss_of_dg && !s.generators.empty()) {
    const std::size_t n = s.generators.size();
    const auto k = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(d.magnitude * n)));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    d.removed.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(d.removed.begin(), d.removed.end());
  }
  s.disturbance = d;
  return s;
}

RobustnessTable robustness_peak(const FeederNetwork& net, const EnvConfig& cfg,
                                const std::vector<PolicyPtr>& policies, int episodes,
                                std::uint64_t seed, const std::vector<double>& levels,
                                bool control) {
  RobustnessTable table;
  table.title = "Robustness Against Peak Load Increase";
  table.level_header = "Peak Load Increase";
  std::vector<double> all = levels;
  if (control) all.insert(all.begin(), 0.0);
  for (double level : all) {
    EvaluationOptions o;
    o.episodes = episodes;
    o.seed = seed;
    o.scenarios = [&, level](std::uint64_t s) { return peak_scenario(s, cfg, net, level); };
    const EvaluationReport rep = evaluate(net, cfg, policies, o);
    std::ostringstream label;
    label << level << " %";
    if (level <= 0.0) label << " (control)";
    table.rows.push_back({label.str(), rep.failures, rep.evaluated, rep.aborted});
  }
  return table;
}

RobustnessTable robustness_disturbance(const FeederNetwork& net, const EnvConfig& cfg,
                                       const std::vector<PolicyPtr>& policies, int episodes,
                                       std::uint64_t seed) {
  RobustnessTable table;
  table.title = "Robustness Against Disturbances";
  table.level_header = "Scenario";
  for (DisturbanceKind kind : {DisturbanceKind::loss_of_load, DisturbanceKind::loss_of_dg}) {
    EvaluationOptions o;
    o.episodes = episodes;
    o.seed = derive_seed(seed, {static_cast<std::uint64_t>(kind)});
    o.scenarios = [&, kind](std::uint64_t s) { return disturbance_scenario(s, cfg, net, kind); };
    const EvaluationReport rep = evaluate(net, cfg, policies, o);
    const char* label = kind == DisturbanceKind::loss_of_load ? "Loss of Load" : "Loss of DG";
    table.rows.push_back({label, rep.failures, rep.evaluated, rep.aborted});
  }
  return table;
}

std::vector<ResponseRow> response_histogram(const EvaluationReport& report, double step_seconds) {
  std::vector<ResponseRow> rows;
  const double ms = step_seconds * 1000.0;
  auto label = [&](const std::string& prefix, int steps, const std::string& suffix) {
    std::ostringstream o;
    o << prefix << steps << suffix << " (" << steps * ms << " ms)";
    return o.str();
  };
  auto binned = [&](const RelayHistograms& h, bool backup) {
    ResponseRow row;
    row.relay = h.relay;
    row.kind = backup ? "backup" : "primary";
    const DelayHistogram& d = backup ? h.backup : h.primary;
    int lo = 1;
    int hi = 4;
    if (report.format == TableFormat::multi && backup) {
      lo = 3;
      hi = 6;
    }
    for (int b = lo; b <= hi; ++b) {
      const std::string suf = b == hi && report.format == TableFormat::multi ? "+" : "";
      row.bins.push_back(label("", b, b == lo && lo > 1 ? "-" : suf));
      row.counts.push_back(0);
    }
    if (report.format != TableFormat::multi) row.bins.back() = label("", hi, "+");
    for (const auto& [steps, count] : d) {
      const int b = std::clamp(steps, lo, hi) - lo;
      row.counts[static_cast<std::size_t>(b)] += count;
      row.total += count;
    }
    return row;
  };
  for (const RelayHistograms& h : report.histograms) {
    rows.push_back(binned(h, false));
    if (report.format == TableFormat::multi && h.has_backup_zone) rows.push_back(binned(h, true));
  }
  return rows;
}

std::optional<double> histogram_median(const DelayHistogram& h) {
  int total = 0;
  for (const auto& [k, c] : h) total += c;
  if (total == 0) return std::nullopt;
  auto nth = [&](int idx) {
    int seen = 0;
    for (const auto& [k, c] : h) {
      seen += c;
      if (idx < seen) return k;
    }
    return h.rbegin()->first;
  };
  if (total % 2 == 1) return nth(total / 2);
  return 0.5 * (nth(total / 2 - 1) + nth(total / 2));
}

json to_json(const EvaluationReport& r) {
  json j;
  j["title"] = r.title;
  j["requested"] = r.requested;
  j["evaluated"] = r.evaluated;
  j["aborted"] = r.aborted;
  j["aborted_seeds"] = r.aborted_seeds;
  j["failures"] = r.failures;
  j["failure_rate"] = r.failure_rate();
  j["fault_episodes"] = r.fault_episodes;
  j["rows"] = json::array();
  for (const TableRow& row : r.rows) {
    j["rows"].push_back({{"scenario", row.scenario},
                         {"action", row.action},
                         {"occurrences", row.occurrences},
                         {"total", row.total},
                         {"probability_percent", row.probability()}});
  }
  j["relays"] = json::array();
  for (std::size_t i = 0; i < r.histograms.size(); ++i) {
    json labels = json::object();
    for (std::size_t l = 0; l < kRelayLabelCount; ++l) {
      labels[std::string(label_name(static_cast<RelayLabel>(l)))] = r.label_counts[i][l];
    }
    auto hist = [](const DelayHistogram& h) {
      json a = json::array();
      for (const auto& [k, c] : h) a.push_back({{"steps", k}, {"count", c}});
      return a;
    };
    j["relays"].push_back({{"relay", r.histograms[i].relay},
                           {"labels", labels},
                           {"primary_delays", hist(r.histograms[i].primary)},
                           {"backup_delays", hist(r.histograms[i].backup)}});
  }
  j["metadata"] = r.metadata;
  return j;
}

json to_json(const RobustnessTable& t) {
  json j;
  j["title"] = t.title;
  j["rows"] = json::array();
  for (const RobustnessRow& r : t.rows) {
    j["rows"].push_back({{"label", r.label},
                         {"occurrences", r.occurrences},
                         {"total", r.total},
                         {"aborted", r.aborted},
                         {"probability_percent", r.probability()}});
  }
  return j;
}

std::string format_report(const EvaluationReport& r, double step_seconds) {
  std::ostringstream out;
  out << r.title << "  (" << r.evaluated << " episodes";
  if (r.aborted > 0) out << ", " << r.aborted << " aborted and excluded";
  out << ")\n";
  std::vector<std::vector<std::string>> cells{{"Scenario", "Action", "Occurrences", "Probability"}};
  for (const TableRow& row : r.rows) {
    cells.push_back({row.scenario, row.action,
                     std::to_string(row.occurrences) + " / " + std::to_string(row.total),
                     pct(row.probability())});
  }
  cells.push_back({"Total failures", "",
                   std::to_string(r.failures) + " / " + std::to_string(r.evaluated),
                   pct(100.0 * r.failure_rate())});
  out << aligned(cells) << '\n';
  out << "Response time\n";
  std::vector<std::vector<std::string>> resp;
  for (const ResponseRow& row : response_histogram(r, step_seconds)) {
    std::vector<std::string> head{"Relay", "Kind"};
    std::vector<std::string> line{row.relay, row.kind};
    for (std::size_t b = 0; b < row.bins.size(); ++b) {
      head.push_back(row.bins[b]);
      line.push_back(std::to_string(row.counts[b]) + " / " + std::to_string(r.evaluated));
    }
    resp.push_back(head);
    resp.push_back(line);
  }
  out << aligned(resp);
  return out.str();
}

std::string format_table(const RobustnessTable& t) {
  std::ostringstream out;
  out << t.title << '\n';
  std::vector<std::vector<std::string>> cells{{t.level_header, "Occurrences", "Failure Rate"}};
  for (const RobustnessRow& r : t.rows) {
    std::string occ = std::to_string(r.occurrences) + " / " + std::to_string(r.total);
    if (r.aborted > 0) occ += " (" + std::to_string(r.aborted) + " aborted)";
    cells.push_back({r.label, occ, pct(r.probability())});
  }
  out << aligned(cells);
  return out.str();
}

std::string histogram_csv(const EvaluationReport& r, double step_seconds) {
  std::ostringstream out;
  out << "relay,kind,delay_steps,delay_ms,count\n";
  for (const RelayHistograms& h : r.histograms) {
    for (const auto& [kind, d] : {std::pair{"primary", &h.primary}, std::pair{"backup", &h.backup}}) {
      for (const auto& [steps, count] : *d) {
        out << h.relay << ',' << kind << ',' << steps << ',' << steps * step_seconds * 1000.0 << ','
            << count << '\n';
      }
    }
  }
  return out.str();
}

std::vector<PolicyPtr> load_policies(const FeederNetwork& net, const EnvConfig& cfg,
                                     const std::string& dir) {
  const std::filesystem::path base(dir);
  std::ifstream in(base / "manifest.json");
  if (!in) throw ConfigError("no manifest.json in '" + dir + "'");
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest.json: ") + e.what());
  }
  std::vector<PolicyPtr> out(net.relays().size());
  for (const json& phase : m.value("phases", json::array())) {
    const std::string id = phase.at("relay").get<std::string>();
    const auto idx = net.relay_index(id);
    PolicyWeights w = load_weights((base / phase.at("weights").get<std::string>()).string());
    if (w.input_mode != cfg.input_mode || w.window != cfg.window ||
        w.net.input_size() != cfg.observation_size()) {
      throw ConfigError("weights of relay " + id + " do not match the environment input layout");
    }
    out[idx] = std::make_shared<GreedyPolicy>(std::move(w));
  }
  for (std::size_t r = 0; r < out.size(); ++r) {
    if (!out[r]) throw ConfigError("no trained weights for relay " + net.relays()[r].id);
  }
  return out;
}

}  // namespace rlrelay
