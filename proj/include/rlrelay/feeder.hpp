#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace rlrelay {

using Complex = std::complex<double>;
using Vector3c = Eigen::Vector3cd;
using Matrix3c = Eigen::Matrix3cd;

inline constexpr double kBasePowerVA = 1.0e6;  // three-phase
inline constexpr int kPhaseCount = 3;

// Subset of {A, B, C}; bit 0 is phase A.
class PhaseSet {
 public:
  constexpr PhaseSet() = default;
  constexpr explicit PhaseSet(std::uint8_t bits) : bits_(bits & 0x7u) {}
  static constexpr PhaseSet all() { return PhaseSet(0x7u); }
  static PhaseSet parse(std::string_view text);

  constexpr bool has(int phase) const { return (bits_ >> phase) & 1u; }
  constexpr int count() const {
    return (bits_ & 1u) + ((bits_ >> 1) & 1u) + ((bits_ >> 2) & 1u);
  }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr bool contains(PhaseSet other) const {
    return (other.bits_ & ~bits_) == 0;
  }
  constexpr std::uint8_t bits() const { return bits_; }
  std::string str() const;

  friend constexpr bool operator==(PhaseSet, PhaseSet) = default;

 private:
  std::uint8_t bits_ = 0;
};

char phase_letter(int phase);

// Raised on any malformed or inconsistent feeder or condition document.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Bus {
  std::string id;
  double nominal_voltage = 0.0;  // line-to-neutral, volts
  PhaseSet phases;
};

struct Line {
  std::string id;
  std::size_t from = 0;  // parent side after orientation from the source
  std::size_t to = 0;
  Matrix3c impedance = Matrix3c::Zero();  // ohms, already length-scaled
};

struct Load {
  std::string id;
  std::size_t bus = 0;
  Vector3c power = Vector3c::Zero();  // VA per phase, consumed
};

struct Generator {
  std::string id;
  std::size_t bus = 0;
  Vector3c power = Vector3c::Zero();  // VA per phase at rated output
};

struct Source {
  std::size_t bus = 0;
  Vector3c voltage = Vector3c::Zero();  // volts, line-to-neutral phasors
};

struct Relay {
  std::string id;
  std::size_t line = 0;
  // Phase the phase-input agent is responsible for.
  int assigned_phase = 0;
};

struct ProtectionZone {
  std::size_t relay = 0;
  std::vector<std::size_t> primary;  // sorted bus indices
  std::vector<std::size_t> backup;   // sorted bus indices
};

// Validated radial feeder. Immutable once built; every index below refers to
// the vectors of this object.
class FeederNetwork {
 public:
  FeederNetwork(std::string name, std::vector<Bus> buses,
                std::vector<Line> lines, std::vector<Load> loads,
                std::vector<Generator> generators, Source source,
                std::vector<Relay> relays);

  const std::string& name() const { return name_; }
  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Line>& lines() const { return lines_; }
  const std::vector<Load>& loads() const { return loads_; }
  const std::vector<Generator>& generators() const { return generators_; }
  const Source& source() const { return source_; }
  const std::vector<Relay>& relays() const { return relays_; }

  std::size_t bus_index(std::string_view id) const;
  std::size_t relay_index(std::string_view id) const;
  std::size_t line_index(std::string_view id) const;
  std::optional<std::size_t> find_bus(std::string_view id) const;

  // Line feeding a bus from its parent; nullopt for the source bus.
  std::optional<std::size_t> parent_line(std::size_t bus) const {
    return parent_line_[bus];
  }
  const std::vector<std::size_t>& child_lines(std::size_t bus) const {
    return child_lines_[bus];
  }
  // Buses ordered so every parent precedes its children.
  const std::vector<std::size_t>& topological_order() const { return topo_order_; }
  // Relay on a line, if any.
  std::optional<std::size_t> relay_on_line(std::size_t line) const {
    return relay_on_line_[line];
  }
  // True when `bus` lies in the subtree rooted at `root` (inclusive).
  bool in_subtree(std::size_t root, std::size_t bus) const;
  // Closest relay upstream of the given relay's line; nullopt at the top.
  std::optional<std::size_t> upstream_relay(std::size_t relay) const {
    return upstream_relay_[relay];
  }
  bool is_descendant_relay(std::size_t ancestor, std::size_t relay) const;

  // Per-unit bases derived from the source nominal voltage and 1 MVA.
  double base_voltage() const { return base_voltage_; }
  double base_impedance() const { return base_impedance_; }
  double base_current() const { return base_current_; }
  double base_power_per_phase() const { return kBasePowerVA / 3.0; }

  // Same feeder keeping only the listed relays (by id), in the given order.
  FeederNetwork with_relays(const std::vector<std::string>& relay_ids) const;

  // Stable fingerprint of the network content.
  std::uint64_t fingerprint() const;

 private:
  std::string name_;
  std::vector<Bus> buses_;
  std::vector<Line> lines_;
  std::vector<Load> loads_;
  std::vector<Generator> generators_;
  Source source_;
  std::vector<Relay> relays_;

  std::vector<std::optional<std::size_t>> parent_line_;
  std::vector<std::vector<std::size_t>> child_lines_;
  std::vector<std::size_t> topo_order_;
  std::vector<std::size_t> subtree_enter_;
  std::vector<std::size_t> subtree_exit_;
  std::vector<std::optional<std::size_t>> relay_on_line_;
  std::vector<std::optional<std::size_t>> upstream_relay_;
  double base_voltage_ = 1.0;
  double base_impedance_ = 1.0;
  double base_current_ = 1.0;
};

// Natural ordering of ids: numeric ids compare by value, others
// lexicographically, numeric before non-numeric.
bool bus_id_less(std::string_view a, std::string_view b);

FeederNetwork parse_feeder(const nlohmann::json& document);
FeederNetwork load_feeder(const std::string& path);
nlohmann::json to_json(const FeederNetwork& network);

// Relay indices in post-order DFS from the source; siblings by ascending bus
// id.
std::vector<std::size_t> training_order(const FeederNetwork& network);

// One zone per relay, indexed like network.relays().
std::vector<ProtectionZone> protection_zones(const FeederNetwork& network);

// JSON helpers shared by the document readers.
Complex parse_complex(const nlohmann::json& j, const std::string& where);
Vector3c parse_phasor3(const nlohmann::json& j, const std::string& where);
nlohmann::json complex_json(Complex c);
nlohmann::json phasor3_json(const Vector3c& v);

}  // namespace rlrelay
