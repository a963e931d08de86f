#include "rlrelay/feeder.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <queue>
#include <sstream>
#include <unordered_map>

namespace rlrelay {
namespace {

using nlohmann::json;

std::string id_of(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("id")) {
    throw ConfigError(where + ": missing field 'id'");
  }
  const json& id = j.at("id");
  if (id.is_string()) return id.get<std::string>();
  if (id.is_number_integer()) return std::to_string(id.get<long long>());
  throw ConfigError(where + ": 'id' must be a string or integer");
}

std::string ref_of(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) {
    throw ConfigError(where + ": missing field '" + key + "'");
  }
  const json& v = j.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ConfigError(where + ": '" + key + "' must be a string or integer");
}

const json& required(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw ConfigError(where + ": missing field '" + key + "'");
  }
  return j.at(key);
}

double number_of(const json& j, const char* key, const std::string& where) {
  const json& v = required(j, key, where);
  if (!v.is_number()) {
    throw ConfigError(where + ": '" + key + "' must be a number");
  }
  return v.get<double>();
}

const json& array_of(const json& j, const char* key, const std::string& where) {
  const json& v = required(j, key, where);
  if (!v.is_array()) {
    throw ConfigError(where + ": '" + key + "' must be an array");
  }
  return v;
}

Matrix3c parse_matrix3(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigError(where + ": impedance must be a 3x3 array");
  }
  Matrix3c m;
  for (int r = 0; r < 3; ++r) {
    if (!j[r].is_array() || j[r].size() != 3) {
      throw ConfigError(where + ": impedance must be a 3x3 array");
    }
    for (int c = 0; c < 3; ++c) m(r, c) = parse_complex(j[r][c], where);
  }
  return m;
}

bool parse_int(std::string_view s, long long& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

PhaseSet PhaseSet::parse(std::string_view text) {
  std::uint8_t bits = 0;
  for (char c : text) {
    switch (c) {
      case 'A': case 'a': bits |= 1u; break;
      case 'B': case 'b': bits |= 2u; break;
      case 'C': case 'c': bits |= 4u; break;
      default:
        throw ConfigError("invalid phase letter '" + std::string(1, c) + "' in \"" +
                          std::string(text) + "\"");
    }
  }
  return PhaseSet(bits);
}

std::string PhaseSet::str() const {
  std::string s;
  for (int p = 0; p < kPhaseCount; ++p) {
    if (has(p)) s.push_back(phase_letter(p));
  }
  return s;
}

char phase_letter(int phase) { return static_cast<char>('A' + phase); }

bool bus_id_less(std::string_view a, std::string_view b) {
  long long ia = 0, ib = 0;
  const bool na = parse_int(a, ia);
  const bool nb = parse_int(b, ib);
  if (na && nb) return ia != ib ? ia < ib : a < b;
  if (na != nb) return na;
  return a < b;
}

Complex parse_complex(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ConfigError(where + ": complex values must be [re, im]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

Vector3c parse_phasor3(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigError(where + ": expected three [re, im] values (phases A, B, C)");
  }
  return {parse_complex(j[0], where), parse_complex(j[1], where),
          parse_complex(j[2], where)};
}

json complex_json(Complex c) { return json::array({c.real(), c.imag()}); }

json phasor3_json(const Vector3c& v) {
  return json::array({complex_json(v[0]), complex_json(v[1]), complex_json(v[2])});
}

FeederNetwork::FeederNetwork(std::string name, std::vector<Bus> buses,
                             std::vector<Line> lines, std::vector<Load> loads,
                             std::vector<Generator> generators, Source source,
                             std::vector<Relay> relays)
    : name_(std::move(name)),
      buses_(std::move(buses)),
      lines_(std::move(lines)),
      loads_(std::move(loads)),
      generators_(std::move(generators)),
      source_(source),
      relays_(std::move(relays)) {
  const std::size_t n = buses_.size();
  if (n == 0) throw ConfigError("feeder has no buses");
  if (source_.bus >= n) throw ConfigError("source references an unknown bus");
  if (lines_.size() != n - 1) {
    throw ConfigError("non-tree topology: " + std::to_string(lines_.size()) +
                      " lines for " + std::to_string(n) + " buses");
  }
  {
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < n; ++i) {
      if (!seen.emplace(buses_[i].id, i).second) {
        throw ConfigError("duplicate bus id '" + buses_[i].id + "'");
      }
      if (buses_[i].phases.empty()) {
        throw ConfigError("bus '" + buses_[i].id + "' has no phases");
      }
      if (!(buses_[i].nominal_voltage > 0.0) || !std::isfinite(buses_[i].nominal_voltage)) {
        throw ConfigError("bus '" + buses_[i].id + "' needs a positive nominal voltage");
      }
    }
  }

  // Orient every line away from the source and check connectivity.
  std::vector<std::vector<std::size_t>> adjacency(n);
  for (std::size_t l = 0; l < lines_.size(); ++l) {
    const Line& line = lines_[l];
    if (line.from >= n || line.to >= n) {
      throw ConfigError("line '" + line.id + "' references an unknown bus");
    }
    if (line.from == line.to) {
      throw ConfigError("non-tree topology: line '" + line.id + "' is a self loop");
    }
    adjacency[line.from].push_back(l);
    adjacency[line.to].push_back(l);
  }
  parent_line_.assign(n, std::nullopt);
  child_lines_.assign(n, {});
  std::vector<bool> visited(n, false);
  std::queue<std::size_t> frontier;
  frontier.push(source_.bus);
  visited[source_.bus] = true;
  while (!frontier.empty()) {
    const std::size_t u = frontier.front();
    frontier.pop();
    for (std::size_t l : adjacency[u]) {
      if (parent_line_[u] == l) continue;
      Line& line = lines_[l];
      const std::size_t v = line.from == u ? line.to : line.from;
      if (visited[v]) {
        throw ConfigError("non-tree topology: cycle closed by line '" + line.id + "'");
      }
      if (line.from != u) std::swap(line.from, line.to);
      visited[v] = true;
      parent_line_[v] = l;
      child_lines_[u].push_back(l);
      frontier.push(v);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!visited[i]) {
      throw ConfigError("non-tree topology: bus '" + buses_[i].id +
                        "' is not reachable from the source");
    }
  }
  for (auto& children : child_lines_) {
    std::sort(children.begin(), children.end(), [&](std::size_t a, std::size_t b) {
      return bus_id_less(buses_[lines_[a].to].id, buses_[lines_[b].to].id);
    });
  }

  base_voltage_ = buses_[source_.bus].nominal_voltage;
  base_impedance_ = base_voltage_ * base_voltage_ / base_power_per_phase();
  base_current_ = base_power_per_phase() / base_voltage_;
  for (const Bus& bus : buses_) {
    if (std::abs(bus.nominal_voltage - base_voltage_) > 1e-9 * base_voltage_) {
      throw ConfigError("bus '" + bus.id +
                        "' nominal voltage differs from the source; transformers "
                        "are not supported");
    }
  }

  // Phase consistency and impedance sanity per line.
  for (const Line& line : lines_) {
    const PhaseSet up = buses_[line.from].phases;
    const PhaseSet down = buses_[line.to].phases;
    if (!up.contains(down)) {
      throw ConfigError("phase mismatch: line '" + line.id + "' feeds phases " +
                        down.str() + " from a bus with phases " + up.str());
    }
    for (int r = 0; r < kPhaseCount; ++r) {
      for (int c = 0; c < kPhaseCount; ++c) {
        const Complex z = line.impedance(r, c);
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) {
          throw ConfigError("line '" + line.id + "' has a non-finite impedance");
        }
        if ((!down.has(r) || !down.has(c)) && std::abs(z) != 0.0) {
          throw ConfigError("phase mismatch: line '" + line.id +
                            "' has impedance on a phase absent at bus '" +
                            buses_[line.to].id + "'");
        }
      }
    }
    // Present-phase block must be invertible.
    Matrix3c block = line.impedance;
    for (int p = 0; p < kPhaseCount; ++p) {
      if (!down.has(p)) block(p, p) = 1.0;
    }
    const double scale = std::max(line.impedance.cwiseAbs().maxCoeff(), 1e-300);
    if (std::abs(block.determinant()) <= 1e-12 * scale * scale * scale ||
        line.impedance.cwiseAbs().maxCoeff() == 0.0) {
      throw ConfigError("line '" + line.id + "' has a singular or zero impedance");
    }
  }

  for (const Load& load : loads_) {
    if (load.bus >= n) throw ConfigError("load '" + load.id + "' references an unknown bus");
    for (int p = 0; p < kPhaseCount; ++p) {
      if (!buses_[load.bus].phases.has(p) && std::abs(load.power[p]) != 0.0) {
        throw ConfigError("phase mismatch: load '" + load.id + "' uses phase " +
                          std::string(1, phase_letter(p)) + " absent at bus '" +
                          buses_[load.bus].id + "'");
      }
    }
  }
  for (const Generator& gen : generators_) {
    if (gen.bus >= n) {
      throw ConfigError("generator '" + gen.id + "' references an unknown bus");
    }
    for (int p = 0; p < kPhaseCount; ++p) {
      if (!buses_[gen.bus].phases.has(p) && std::abs(gen.power[p]) != 0.0) {
        throw ConfigError("phase mismatch: generator '" + gen.id + "' uses phase " +
                          std::string(1, phase_letter(p)) + " absent at bus '" +
                          buses_[gen.bus].id + "'");
      }
    }
  }
  for (int p = 0; p < kPhaseCount; ++p) {
    if (!buses_[source_.bus].phases.has(p) && std::abs(source_.voltage[p]) != 0.0) {
      throw ConfigError("phase mismatch: source voltage on a phase absent at bus '" +
                        buses_[source_.bus].id + "'");
    }
  }

  relay_on_line_.assign(lines_.size(), std::nullopt);
  {
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t r = 0; r < relays_.size(); ++r) {
      const Relay& relay = relays_[r];
      if (!seen.emplace(relay.id, r).second) {
        throw ConfigError("duplicate relay id '" + relay.id + "'");
      }
      if (relay.line >= lines_.size()) {
        throw ConfigError("relay '" + relay.id + "' sits on an unknown branch");
      }
      if (relay_on_line_[relay.line]) {
        throw ConfigError("relay '" + relay.id + "' shares branch '" +
                          lines_[relay.line].id + "' with another relay");
      }
      if (relay.assigned_phase < 0 || relay.assigned_phase >= kPhaseCount ||
          !buses_[lines_[relay.line].to].phases.has(relay.assigned_phase)) {
        throw ConfigError("phase mismatch: relay '" + relay.id +
                          "' is assigned a phase its branch does not carry");
      }
      relay_on_line_[relay.line] = r;
    }
  }

  // Parent-first order and Euler tour for subtree queries.
  topo_order_.clear();
  subtree_enter_.assign(n, 0);
  subtree_exit_.assign(n, 0);
  std::size_t clock = 0;
  std::function<void(std::size_t)> tour = [&](std::size_t u) {
    subtree_enter_[u] = clock++;
    topo_order_.push_back(u);
    for (std::size_t l : child_lines_[u]) tour(lines_[l].to);
    subtree_exit_[u] = clock;
  };
  tour(source_.bus);

  upstream_relay_.assign(relays_.size(), std::nullopt);
  for (std::size_t r = 0; r < relays_.size(); ++r) {
    std::size_t bus = lines_[relays_[r].line].from;
    while (auto pl = parent_line_[bus]) {
      if (auto up = relay_on_line_[*pl]) {
        upstream_relay_[r] = *up;
        break;
      }
      bus = lines_[*pl].from;
    }
  }
}

bool FeederNetwork::in_subtree(std::size_t root, std::size_t bus) const {
  return subtree_enter_[root] <= subtree_enter_[bus] &&
         subtree_enter_[bus] < subtree_exit_[root];
}

bool FeederNetwork::is_descendant_relay(std::size_t ancestor, std::size_t relay) const {
  if (ancestor == relay) return false;
  return in_subtree(lines_[relays_[ancestor].line].to, lines_[relays_[relay].line].to);
}

std::optional<std::size_t> FeederNetwork::find_bus(std::string_view id) const {
  for (std::size_t i = 0; i < buses_.size(); ++i) {
    if (buses_[i].id == id) return i;
  }
  return std::nullopt;
}

std::size_t FeederNetwork::bus_index(std::string_view id) const {
  if (auto i = find_bus(id)) return *i;
  throw ConfigError("unknown bus '" + std::string(id) + "'");
}

std::size_t FeederNetwork::relay_index(std::string_view id) const {
  for (std::size_t i = 0; i < relays_.size(); ++i) {
    if (relays_[i].id == id) return i;
  }
  throw ConfigError("unknown relay '" + std::string(id) + "'");
}

std::size_t FeederNetwork::line_index(std::string_view id) const {
  for (std::size_t i = 0; i < lines_.size(); ++i) {
    if (lines_[i].id == id) return i;
  }
  throw ConfigError("unknown line '" + std::string(id) + "'");
}

FeederNetwork FeederNetwork::with_relays(const std::vector<std::string>& relay_ids) const {
  std::vector<Relay> kept;
  kept.reserve(relay_ids.size());
  for (const std::string& id : relay_ids) kept.push_back(relays_[relay_index(id)]);
  return FeederNetwork(name_, buses_, lines_, loads_, generators_, source_, std::move(kept));
}

std::uint64_t FeederNetwork::fingerprint() const { return fnv1a(to_json(*this).dump()); }

FeederNetwork parse_feeder(const json& document) {
  if (!document.is_object()) throw ConfigError("feeder document must be a JSON object");
  const std::string name = document.value("name", std::string("feeder"));

  std::vector<Bus> buses;
  std::unordered_map<std::string, std::size_t> bus_lookup;
  for (const json& jb : array_of(document, "buses", "feeder")) {
    const std::string id = id_of(jb, "bus");
    const std::string where = "bus '" + id + "'";
    Bus bus;
    bus.id = id;
    bus.nominal_voltage = number_of(jb, "nominal_voltage", where);
    const json& ph = required(jb, "phases", where);
    if (!ph.is_string()) throw ConfigError(where + ": 'phases' must be a string");
    bus.phases = PhaseSet::parse(ph.get<std::string>());
    if (!bus_lookup.emplace(id, buses.size()).second) {
      throw ConfigError("duplicate bus id '" + id + "'");
    }
    buses.push_back(bus);
  }
  auto resolve_bus = [&](const std::string& ref, const std::string& where) {
    auto it = bus_lookup.find(ref);
    if (it == bus_lookup.end()) {
      throw ConfigError(where + ": dangling reference to bus '" + ref + "'");
    }
    return it->second;
  };

  std::vector<Line> lines;
  std::unordered_map<std::string, std::size_t> line_lookup;
  for (const json& jl : array_of(document, "lines", "feeder")) {
    const std::string id = id_of(jl, "line");
    const std::string where = "line '" + id + "'";
    Line line;
    line.id = id;
    line.from = resolve_bus(ref_of(jl, "from", where), where);
    line.to = resolve_bus(ref_of(jl, "to", where), where);
    line.impedance = parse_matrix3(required(jl, "impedance", where), where);
    if (jl.contains("length")) {
      const double length = number_of(jl, "length", where);
      if (!(length > 0.0)) throw ConfigError(where + ": 'length' must be positive");
      line.impedance *= length;
    }
    if (!line_lookup.emplace(id, lines.size()).second) {
      throw ConfigError("duplicate line id '" + id + "'");
    }
    lines.push_back(line);
  }

  std::vector<Load> loads;
  for (const json& jl : array_of(document, "loads", "feeder")) {
    const std::string id = id_of(jl, "load");
    const std::string where = "load '" + id + "'";
    loads.push_back({id, resolve_bus(ref_of(jl, "bus", where), where),
                     parse_phasor3(required(jl, "power", where), where)});
  }

  std::vector<Generator> generators;
  for (const json& jg : array_of(document, "generators", "feeder")) {
    const std::string id = id_of(jg, "generator");
    const std::string where = "generator '" + id + "'";
    generators.push_back({id, resolve_bus(ref_of(jg, "bus", where), where),
                          parse_phasor3(required(jg, "power", where), where)});
  }

  const json& js = required(document, "source", "feeder");
  Source source;
  source.bus = resolve_bus(ref_of(js, "bus", "source"), "source");
  source.voltage = parse_phasor3(required(js, "voltage", "source"), "source");

  std::vector<Relay> relays;
  for (const json& jr : array_of(document, "relays", "feeder")) {
    const std::string id = id_of(jr, "relay");
    const std::string where = "relay '" + id + "'";
    const std::string line_ref = ref_of(jr, "line", where);
    auto it = line_lookup.find(line_ref);
    if (it == line_lookup.end()) {
      throw ConfigError(where + ": dangling reference to line '" + line_ref + "'");
    }
    Relay relay{id, it->second, 0};
    if (jr.contains("phase")) {
      const PhaseSet ph = PhaseSet::parse(jr.at("phase").get<std::string>());
      if (ph.count() != 1) throw ConfigError(where + ": 'phase' must name one phase");
      for (int p = 0; p < kPhaseCount; ++p) {
        if (ph.has(p)) relay.assigned_phase = p;
      }
    } else {
      const PhaseSet carried = buses[lines[it->second].to].phases;
      for (int p = kPhaseCount - 1; p >= 0; --p) {
        if (carried.has(p)) relay.assigned_phase = p;
      }
    }
    relays.push_back(relay);
  }

  return FeederNetwork(name, std::move(buses), std::move(lines), std::move(loads),
                       std::move(generators), source, std::move(relays));
}

FeederNetwork load_feeder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open feeder file '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw ConfigError("feeder file '" + path + "': " + e.what());
  }
  return parse_feeder(doc);
}

json to_json(const FeederNetwork& net) {
  json doc;
  doc["name"] = net.name();
  json buses = json::array();
  for (const Bus& b : net.buses()) {
    buses.push_back({{"id", b.id}, {"nominal_voltage", b.nominal_voltage},
                     {"phases", b.phases.str()}});
  }
  doc["buses"] = buses;
  json lines = json::array();
  for (const Line& l : net.lines()) {
    json z = json::array();
    for (int r = 0; r < 3; ++r) {
      json row = json::array();
      for (int c = 0; c < 3; ++c) row.push_back(complex_json(l.impedance(r, c)));
      z.push_back(row);
    }
    lines.push_back({{"id", l.id}, {"from", net.buses()[l.from].id},
                     {"to", net.buses()[l.to].id}, {"impedance", z}});
  }
  doc["lines"] = lines;
  json loads = json::array();
  for (const Load& l : net.loads()) {
    loads.push_back({{"id", l.id}, {"bus", net.buses()[l.bus].id},
                     {"power", phasor3_json(l.power)}});
  }
  doc["loads"] = loads;
  json gens = json::array();
  for (const Generator& g : net.generators()) {
    gens.push_back({{"id", g.id}, {"bus", net.buses()[g.bus].id},
                    {"power", phasor3_json(g.power)}});
  }
  doc["generators"] = gens;
  doc["source"] = {{"bus", net.buses()[net.source().bus].id},
                   {"voltage", phasor3_json(net.source().voltage)}};
  json relays = json::array();
  for (const Relay& r : net.relays()) {
    relays.push_back({{"id", r.id}, {"line", net.lines()[r.line].id},
                      {"phase", std::string(1, phase_letter(r.assigned_phase))}});
  }
  doc["relays"] = relays;
  return doc;
}

std::vector<std::size_t> training_order(const FeederNetwork& net) {
  std::vector<std::size_t> order;
  order.reserve(net.relays().size());
  std::function<void(std::size_t)> visit = [&](std::size_t bus) {
    for (std::size_t l : net.child_lines(bus)) {
      visit(net.lines()[l].to);
      if (auto r = net.relay_on_line(l)) order.push_back(*r);
    }
  };
  visit(net.source().bus);
  return order;
}

std::vector<ProtectionZone> protection_zones(const FeederNetwork& net) {
  const std::size_t n_relays = net.relays().size();
  std::vector<ProtectionZone> zones(n_relays);
  std::vector<std::vector<std::size_t>> downstream(n_relays);
  for (std::size_t r = 0; r < n_relays; ++r) {
    zones[r].relay = r;
    std::vector<std::size_t> stack{net.lines()[net.relays()[r].line].to};
    while (!stack.empty()) {
      const std::size_t bus = stack.back();
      stack.pop_back();
      zones[r].primary.push_back(bus);
      for (std::size_t l : net.child_lines(bus)) {
        if (auto next = net.relay_on_line(l)) {
          downstream[r].push_back(*next);
        } else {
          stack.push_back(net.lines()[l].to);
        }
      }
    }
    std::sort(zones[r].primary.begin(), zones[r].primary.end());
  }
  for (std::size_t r = 0; r < n_relays; ++r) {
    for (std::size_t d : downstream[r]) {
      zones[r].backup.insert(zones[r].backup.end(), zones[d].primary.begin(),
                             zones[d].primary.end());
    }
    std::sort(zones[r].backup.begin(), zones[r].backup.end());
  }
  return zones;
}

}  // namespace rlrelay
