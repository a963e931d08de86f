#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "rlrelay/feeder.hpp"

namespace rlrelay {

enum class FaultType { slg, ll, llg, three_phase };

inline constexpr int kFaultTypeCount = 4;

std::string_view fault_type_name(FaultType type);
FaultType parse_fault_type(std::string_view text);
// Number of phases involved: SLG 1, LL 2, LLG 2, 3PH 3.
int fault_phase_count(FaultType type);

inline constexpr double kMinFaultImpedance = 0.001;  // ohms
inline constexpr double kMaxFaultImpedance = 20.0;

struct FaultSpec {
  std::size_t bus = 0;
  FaultType type = FaultType::slg;
  PhaseSet phases;
  double impedance = 1.0;  // ohms

  // Throws ConfigError when the impedance range or phase count is violated or
  // a phase is absent at the bus.
  void validate(const FeederNetwork& net) const;
};

// Extra injection placed by a scenario (distributed generation).
struct GeneratorDispatch {
  std::size_t bus = 0;
  Vector3c power = Vector3c::Zero();  // VA per phase generated
};

struct OperatingCondition {
  double load_multiplier = 1.0;
  std::vector<double> load_multipliers;   // per feeder load; empty means 1
  std::vector<double> generator_output;   // per feeder generator; empty means 1
  std::vector<GeneratorDispatch> extra_generators;
  std::vector<bool> breaker_open;         // per relay; empty means all closed
  std::optional<FaultSpec> fault;

  void validate(const FeederNetwork& net) const;
};

struct SolverOptions {
  double tolerance = 1e-8;  // per-unit complex power
  int max_iterations = 100;
  // Below this voltage magnitude (pu) loads and generators switch to the
  // constant-impedance equivalent they have at the threshold.
  double constant_power_min_voltage = 0.7;
};

struct PowerFlowSolution {
  std::vector<Vector3c> bus_voltage;   // pu, per bus
  std::vector<Vector3c> line_current;  // pu, per line, parent to child
  std::vector<bool> energized;         // per bus
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;           // pu complex power
};

// Per-unit injections at one bus for a given condition: constant-power
// demand (load minus generation) and any fault shunt admittance.
struct BusInjections {
  std::vector<Vector3c> demand;     // pu per bus, consumed power per phase
  std::vector<Matrix3c> fault_admittance;  // pu per bus
};

BusInjections assemble_injections(const FeederNetwork& net,
                                  const OperatingCondition& cond);

// Shunt admittance matrix (pu) of a fault element.
Matrix3c fault_admittance_matrix(const FaultSpec& fault, double impedance_pu);

// Buses still connected to the source through closed breakers.
std::vector<bool> energized_buses(const FeederNetwork& net,
                                  const std::vector<bool>& breaker_open);

// Current drawn (pu) by a constant-power demand at voltage v, with the
// low-voltage constant-impedance fallback. Absent phases carry zero.
Vector3c demand_current(const Vector3c& demand, const Vector3c& v,
                        PhaseSet phases, double min_voltage);

// Backward/forward sweep on the radial network. Each sweep reduces the
// linear part (series impedances, fault shunts) exactly by
// subtree admittance equivalents and iterates only over the nonlinear
// constant-power currents.
PowerFlowSolution solve(const FeederNetwork& net, const OperatingCondition& cond,
                        const SolverOptions& options = {});

// Source phasors in pu.
Vector3c source_voltage_pu(const FeederNetwork& net);

// Voltage at the relay's upstream bus and current through its branch.
std::pair<Vector3c, Vector3c> measure(const FeederNetwork& net,
                                      const PowerFlowSolution& solution,
                                      std::size_t relay);

// (zero, positive, negative) sequence components of phase quantities.
Vector3c sequence_components(const Vector3c& phases);
Vector3c phase_components(const Vector3c& sequence);

OperatingCondition parse_condition(const FeederNetwork& net, const nlohmann::json& doc);
nlohmann::json solution_json(const FeederNetwork& net, const PowerFlowSolution& sol);

}  // namespace rlrelay
