#include "rlrelay/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rlrelay {
namespace {

using nlohmann::json;

const Complex kA = std::polar(1.0, 2.0 * std::numbers::pi / 3.0);
const Complex kA2 = kA * kA;

Vector3c mask_phases(Vector3c v, PhaseSet phases) {
  for (int p = 0; p < kPhaseCount; ++p) {
    if (!phases.has(p)) v[p] = 0.0;
  }
  return v;
}

// Splits a demand into the current-injection part (constant power) and the
// shunt part (constant impedance below the voltage threshold) at voltage v.
void split_demand(const Vector3c& demand, const Vector3c& v, PhaseSet phases,
                  double min_voltage, Vector3c& current, Matrix3c& shunt) {
  current.setZero();
  for (int p = 0; p < kPhaseCount; ++p) {
    if (!phases.has(p) || demand[p] == Complex(0.0)) continue;
    const double mag = std::abs(v[p]);
    if (mag >= min_voltage) {
      current[p] = std::conj(demand[p] / v[p]);
    } else {
      shunt(p, p) += std::conj(demand[p]) / (min_voltage * min_voltage);
    }
  }
}

}  // namespace

std::string_view fault_type_name(FaultType type) {
  switch (type) {
    case FaultType::slg: return "SLG";
    case FaultType::ll: return "LL";
    case FaultType::llg: return "LLG";
    case FaultType::three_phase: return "3PH";
  }
  return "?";
}

FaultType parse_fault_type(std::string_view text) {
  if (text == "SLG") return FaultType::slg;
  if (text == "LL") return FaultType::ll;
  if (text == "LLG") return FaultType::llg;
  if (text == "3PH") return FaultType::three_phase;
  throw ConfigError("unknown fault type '" + std::string(text) + "'");
}

int fault_phase_count(FaultType type) {
  switch (type) {
    case FaultType::slg: return 1;
    case FaultType::ll: return 2;
    case FaultType::llg: return 2;
    case FaultType::three_phase: return 3;
  }
  return 0;
}

void FaultSpec::validate(const FeederNetwork& net) const {
  if (bus >= net.buses().size()) throw ConfigError("fault references an unknown bus");
  const std::string where = "fault at bus '" + net.buses()[bus].id + "'";
  if (!(impedance >= kMinFaultImpedance && impedance <= kMaxFaultImpedance)) {
    throw ConfigError(where + ": impedance outside [0.001, 20] ohm");
  }
  if (phases.count() != fault_phase_count(type)) {
    throw ConfigError(where + ": phase set " + phases.str() + " does not match type " +
                      std::string(fault_type_name(type)));
  }
  if (!net.buses()[bus].phases.contains(phases)) {
    throw ConfigError(where + ": phase mismatch, bus carries " +
                      net.buses()[bus].phases.str());
  }
}

void OperatingCondition::validate(const FeederNetwork& net) const {
  auto check_positive = [](double x, const std::string& what) {
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw ConfigError(what + " must be positive and finite");
    }
  };
  check_positive(load_multiplier, "load multiplier");
  if (!load_multipliers.empty()) {
    if (load_multipliers.size() != net.loads().size()) {
      throw ConfigError("per-load multipliers do not match the load count");
    }
    for (std::size_t i = 0; i < load_multipliers.size(); ++i) {
      check_positive(load_multipliers[i], "multiplier of load '" + net.loads()[i].id + "'");
    }
  }
  if (!generator_output.empty()) {
    if (generator_output.size() != net.generators().size()) {
      throw ConfigError("generator outputs do not match the generator count");
    }
    for (double g : generator_output) {
      if (!(g >= 0.0) || !std::isfinite(g)) {
        throw ConfigError("generator output fractions must be finite and non-negative");
      }
    }
  }
  for (const GeneratorDispatch& g : extra_generators) {
    if (g.bus >= net.buses().size()) throw ConfigError("generator references an unknown bus");
    for (int p = 0; p < kPhaseCount; ++p) {
      if (!net.buses()[g.bus].phases.has(p) && std::abs(g.power[p]) != 0.0) {
        throw ConfigError("phase mismatch: generator at bus '" + net.buses()[g.bus].id + "'");
      }
    }
  }
  if (!breaker_open.empty() && breaker_open.size() != net.relays().size()) {
    throw ConfigError("breaker states do not match the relay count");
  }
  if (fault) fault->validate(net);
}

Matrix3c fault_admittance_matrix(const FaultSpec& fault, double impedance_pu) {
  Matrix3c y = Matrix3c::Zero();
  const Complex yf = 1.0 / impedance_pu;
  std::vector<int> ph;
  for (int p = 0; p < kPhaseCount; ++p) {
    if (fault.phases.has(p)) ph.push_back(p);
  }
  if (fault.type == FaultType::ll) {
    const int p = ph[0], q = ph[1];
    y(p, p) += yf;
    y(q, q) += yf;
    y(p, q) -= yf;
    y(q, p) -= yf;
  } else {
    for (int p : ph) y(p, p) += yf;
  }
  return y;
}

BusInjections assemble_injections(const FeederNetwork& net, const OperatingCondition& cond) {
  const std::size_t n = net.buses().size();
  const double s_base = net.base_power_per_phase();
  BusInjections inj;
  inj.demand.assign(n, Vector3c::Zero());
  inj.fault_admittance.assign(n, Matrix3c::Zero());
  for (std::size_t i = 0; i < net.loads().size(); ++i) {
    const Load& load = net.loads()[i];
    const double k = cond.load_multiplier *
                     (cond.load_multipliers.empty() ? 1.0 : cond.load_multipliers[i]);
    inj.demand[load.bus] += load.power * (k / s_base);
  }
  for (std::size_t i = 0; i < net.generators().size(); ++i) {
    const Generator& gen = net.generators()[i];
    const double k = cond.generator_output.empty() ? 1.0 : cond.generator_output[i];
    inj.demand[gen.bus] -= gen.power * (k / s_base);
  }
  for (const GeneratorDispatch& g : cond.extra_generators) {
    inj.demand[g.bus] -= g.power / s_base;
  }
  if (cond.fault) {
    inj.fault_admittance[cond.fault->bus] =
        fault_admittance_matrix(*cond.fault, cond.fault->impedance / net.base_impedance());
  }
  return inj;
}

std::vector<bool> energized_buses(const FeederNetwork& net,
                                  const std::vector<bool>& breaker_open) {
  std::vector<bool> on(net.buses().size(), false);
  for (std::size_t bus : net.topological_order()) {
    const auto pl = net.parent_line(bus);
    if (!pl) {
      on[bus] = true;
      continue;
    }
    bool closed = true;
    if (auto r = net.relay_on_line(*pl); r && !breaker_open.empty()) {
      closed = !breaker_open[*r];
    }
    on[bus] = closed && on[net.lines()[*pl].from];
  }
  return on;
}

Vector3c demand_current(const Vector3c& demand, const Vector3c& v, PhaseSet phases,
                        double min_voltage) {
  Vector3c current;
  Matrix3c shunt = Matrix3c::Zero();
  split_demand(demand, v, phases, min_voltage, current, shunt);
  return current + shunt * v;
}

Vector3c source_voltage_pu(const FeederNetwork& net) {
  return net.source().voltage / net.base_voltage();
}

PowerFlowSolution solve(const FeederNetwork& net, const OperatingCondition& cond,
                        const SolverOptions& options) {
  cond.validate(net);
  const std::size_t n = net.buses().size();
  const auto& buses = net.buses();
  const auto& lines = net.lines();
  const auto& order = net.topological_order();

  PowerFlowSolution sol;
  sol.energized = energized_buses(net, cond.breaker_open);
  sol.bus_voltage.assign(n, Vector3c::Zero());
  sol.line_current.assign(lines.size(), Vector3c::Zero());

  const BusInjections inj = assemble_injections(net, cond);
  std::vector<Matrix3c> z_pu(lines.size());
  for (std::size_t l = 0; l < lines.size(); ++l) {
    z_pu[l] = lines[l].impedance / net.base_impedance();
  }

  const Vector3c v_source = source_voltage_pu(net);
  for (std::size_t b = 0; b < n; ++b) {
    if (sol.energized[b]) sol.bus_voltage[b] = mask_phases(v_source, buses[b].phases);
  }
  sol.bus_voltage[net.source().bus] = v_source;

  std::vector<Vector3c> current_part(n, Vector3c::Zero());
  std::vector<Matrix3c> shunt(n, Matrix3c::Zero());
  std::vector<Matrix3c> sub_admittance(n);
  std::vector<Vector3c> sub_injection(n);
  std::vector<Matrix3c> line_gain(lines.size());
  std::vector<Vector3c> line_offset(lines.size());

  auto line_live = [&](std::size_t l) { return sol.energized[lines[l].to]; };

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    sol.iterations = iter;
    for (std::size_t b = 0; b < n; ++b) {
      shunt[b] = inj.fault_admittance[b];
      if (!sol.energized[b]) continue;
      split_demand(inj.demand[b], sol.bus_voltage[b], buses[b].phases,
                   options.constant_power_min_voltage, current_part[b], shunt[b]);
    }

    // Backward: reduce each subtree to I_in = Y_eq V + J_eq.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const std::size_t b = *it;
      if (!sol.energized[b]) continue;
      Matrix3c y_eq = shunt[b];
      Vector3c j_eq = current_part[b];
      for (std::size_t l : net.child_lines(b)) {
        if (!line_live(l)) continue;
        const std::size_t c = lines[l].to;
        const Matrix3c m = (Matrix3c::Identity() + sub_admittance[c] * z_pu[l]).inverse();
        line_gain[l] = m * sub_admittance[c];
        line_offset[l] = m * sub_injection[c];
        y_eq += line_gain[l];
        j_eq += line_offset[l];
      }
      sub_admittance[b] = y_eq;
      sub_injection[b] = j_eq;
    }

    // Forward: propagate voltages from the source.
    for (std::size_t b : order) {
      if (!sol.energized[b]) continue;
      for (std::size_t l : net.child_lines(b)) {
        if (!line_live(l)) continue;
        const std::size_t c = lines[l].to;
        const Vector3c i_line = line_gain[l] * sol.bus_voltage[b] + line_offset[l];
        sol.line_current[l] = mask_phases(i_line, buses[c].phases);
        sol.bus_voltage[c] =
            mask_phases(sol.bus_voltage[b] - z_pu[l] * sol.line_current[l], buses[c].phases);
      }
    }

    // Power mismatch of the demand evaluated at the new voltages.
    double worst = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      if (!sol.energized[b] || b == net.source().bus) continue;
      const Vector3c& v = sol.bus_voltage[b];
      const Vector3c used = current_part[b] + (shunt[b] - inj.fault_admittance[b]) * v;
      const Vector3c wanted = demand_current(inj.demand[b], v, buses[b].phases,
                                             options.constant_power_min_voltage);
      for (int p = 0; p < kPhaseCount; ++p) {
        worst = std::max(worst, std::abs(v[p] * std::conj(wanted[p] - used[p])));
      }
    }
    sol.max_mismatch = worst;
    if (!std::isfinite(worst)) break;
    if (worst < options.tolerance) {
      sol.converged = true;
      break;
    }
  }
  for (std::size_t l = 0; l < lines.size(); ++l) {
    if (!line_live(l)) sol.line_current[l].setZero();
  }
  return sol;
}

std::pair<Vector3c, Vector3c> measure(const FeederNetwork& net,
                                      const PowerFlowSolution& solution,
                                      std::size_t relay) {
  if (relay >= net.relays().size()) {
    throw ConfigError("unknown relay index " + std::to_string(relay));
  }
  const Line& line = net.lines()[net.relays()[relay].line];
  Vector3c v = solution.bus_voltage[line.from];
  Vector3c i = solution.energized[line.to] ? solution.line_current[net.relays()[relay].line]
                                           : Vector3c::Zero();
  return {v, i};
}

Vector3c sequence_components(const Vector3c& x) {
  return {(x[0] + x[1] + x[2]) / 3.0, (x[0] + kA * x[1] + kA2 * x[2]) / 3.0,
          (x[0] + kA2 * x[1] + kA * x[2]) / 3.0};
}

Vector3c phase_components(const Vector3c& s) {
  return {s[0] + s[1] + s[2], s[0] + kA2 * s[1] + kA * s[2], s[0] + kA * s[1] + kA2 * s[2]};
}

OperatingCondition parse_condition(const FeederNetwork& net, const json& doc) {
  if (!doc.is_object()) throw ConfigError("condition document must be a JSON object");
  OperatingCondition cond;
  cond.load_multiplier = doc.value("load_multiplier", 1.0);
  if (doc.contains("load_multipliers")) {
    cond.load_multipliers.assign(net.loads().size(), 1.0);
    for (const auto& [id, value] : doc.at("load_multipliers").items()) {
      bool found = false;
      for (std::size_t i = 0; i < net.loads().size(); ++i) {
        if (net.loads()[i].id == id) {
          cond.load_multipliers[i] = value.get<double>();
          found = true;
        }
      }
      if (!found) throw ConfigError("condition: unknown load '" + id + "'");
    }
  }
  if (doc.contains("generators")) {
    cond.generator_output.assign(net.generators().size(), 1.0);
    for (const auto& [id, value] : doc.at("generators").items()) {
      bool found = false;
      for (std::size_t i = 0; i < net.generators().size(); ++i) {
        if (net.generators()[i].id == id) {
          cond.generator_output[i] = value.get<double>();
          found = true;
        }
      }
      if (!found) throw ConfigError("condition: unknown generator '" + id + "'");
    }
  }
  if (doc.contains("extra_generators")) {
    for (const json& g : doc.at("extra_generators")) {
      GeneratorDispatch d;
      d.bus = net.bus_index(g.at("bus").get<std::string>());
      d.power = parse_phasor3(g.at("power"), "extra generator");
      cond.extra_generators.push_back(d);
    }
  }
  if (doc.contains("open_breakers")) {
    cond.breaker_open.assign(net.relays().size(), false);
    for (const json& r : doc.at("open_breakers")) {
      cond.breaker_open[net.relay_index(r.get<std::string>())] = true;
    }
  }
  if (doc.contains("fault") && !doc.at("fault").is_null()) {
    const json& f = doc.at("fault");
    FaultSpec fault;
    if (!f.contains("bus") || !f.contains("type") || !f.contains("phases") ||
        !f.contains("impedance")) {
      throw ConfigError("condition: fault needs bus, type, phases and impedance");
    }
    fault.bus = net.bus_index(f.at("bus").get<std::string>());
    fault.type = parse_fault_type(f.at("type").get<std::string>());
    fault.phases = PhaseSet::parse(f.at("phases").get<std::string>());
    fault.impedance = f.at("impedance").get<double>();
    cond.fault = fault;
  }
  cond.validate(net);
  return cond;
}

json solution_json(const FeederNetwork& net, const PowerFlowSolution& sol) {
  json out;
  out["converged"] = sol.converged;
  out["iterations"] = sol.iterations;
  out["max_mismatch"] = sol.max_mismatch;
  json buses = json::array();
  for (std::size_t b = 0; b < net.buses().size(); ++b) {
    buses.push_back({{"id", net.buses()[b].id},
                     {"energized", static_cast<bool>(sol.energized[b])},
                     {"voltage", phasor3_json(sol.bus_voltage[b])}});
  }
  out["buses"] = buses;
  json lines = json::array();
  for (std::size_t l = 0; l < net.lines().size(); ++l) {
    lines.push_back({{"id", net.lines()[l].id}, {"current", phasor3_json(sol.line_current[l])}});
  }
  out["lines"] = lines;
  return out;
}

}  // namespace rlrelay
