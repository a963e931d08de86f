#include "newton_oracle.hpp"

#include <array>
#include <cmath>
#include <deque>

namespace oracle {

using rlrelay::Complex;
using rlrelay::FeederNetwork;

NodalResult solve_newton(const FeederNetwork& net, const NodalCase& c) {
  const auto& buses = net.buses();
  const auto& lines = net.lines();
  const std::size_t nb = buses.size();
  const double v_base = buses[net.source().bus].nominal_voltage;
  const double s_phase = 1.0e6 / 3.0;
  const double z_base = v_base * v_base / s_phase;

  NodalResult out;
  out.energized.assign(nb, false);
  out.voltage.assign(nb, rlrelay::Vector3c::Zero());

  // Connectivity by breadth-first search over closed lines.
  std::vector<bool> line_closed(lines.size(), true);
  for (std::size_t r = 0; r < net.relays().size(); ++r) {
    if (!c.breaker_open.empty() && c.breaker_open[r]) line_closed[net.relays()[r].line] = false;
  }
  std::deque<std::size_t> frontier{net.source().bus};
  out.energized[net.source().bus] = true;
  while (!frontier.empty()) {
    const std::size_t b = frontier.front();
    frontier.pop_front();
    for (std::size_t l = 0; l < lines.size(); ++l) {
      if (!line_closed[l]) continue;
      std::size_t other = nb;
      if (lines[l].from == b) other = lines[l].to;
      if (lines[l].to == b) other = lines[l].from;
      if (other < nb && !out.energized[other]) {
        out.energized[other] = true;
        frontier.push_back(other);
      }
    }
  }

  // Node numbering: each energized (bus, phase) pair.
  std::vector<std::array<int, 3>> node(nb, {-1, -1, -1});
  int n = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    if (!out.energized[b]) continue;
    for (int p = 0; p < 3; ++p) {
      if (buses[b].phases.has(p)) node[b][p] = n++;
    }
  }
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (std::size_t l = 0; l < lines.size(); ++l) {
    const std::size_t f = lines[l].from, t = lines[l].to;
    if (!line_closed[l] || !out.energized[f] || !out.energized[t]) continue;
    std::vector<int> ph;
    for (int p = 0; p < 3; ++p) {
      if (buses[t].phases.has(p)) ph.push_back(p);
    }
    const int k = static_cast<int>(ph.size());
    Eigen::MatrixXcd z(k, k);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) z(i, j) = lines[l].impedance(ph[i], ph[j]) / z_base;
    }
    const Eigen::MatrixXcd ys = z.inverse();
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        y(node[f][ph[i]], node[f][ph[j]]) += ys(i, j);
        y(node[t][ph[i]], node[t][ph[j]]) += ys(i, j);
        y(node[f][ph[i]], node[t][ph[j]]) -= ys(i, j);
        y(node[t][ph[i]], node[f][ph[j]]) -= ys(i, j);
      }
    }
  }
  if (c.fault_bus && out.energized[*c.fault_bus]) {
    const std::size_t b = *c.fault_bus;
    const Complex yf = z_base / c.fault_ohms;
    std::vector<int> ph;
    for (int p = 0; p < 3; ++p) {
      if (c.fault_phases & (1u << p)) ph.push_back(p);
    }
    if (c.fault_type == 1) {
      const int i = node[b][ph[0]], j = node[b][ph[1]];
      y(i, i) += yf;
      y(j, j) += yf;
      y(i, j) -= yf;
      y(j, i) -= yf;
    } else {
      for (int p : ph) y(node[b][p], node[b][p]) += yf;
    }
  }

  // Net consumed power per node, pu.
  Eigen::VectorXcd s = Eigen::VectorXcd::Zero(n);
  for (std::size_t i = 0; i < net.loads().size(); ++i) {
    const auto& ld = net.loads()[i];
    const double k = c.load_multiplier * (c.load_multipliers.empty() ? 1.0 : c.load_multipliers[i]);
    for (int p = 0; p < 3; ++p) {
      if (node[ld.bus][p] >= 0) s[node[ld.bus][p]] += ld.power[p] * k / s_phase;
    }
  }
  for (const auto& g : net.generators()) {
    for (int p = 0; p < 3; ++p) {
      if (node[g.bus][p] >= 0) s[node[g.bus][p]] -= g.power[p] / s_phase;
    }
  }
  for (std::size_t i = 0; i < c.dg_bus.size(); ++i) {
    for (int p = 0; p < 3; ++p) {
      if (node[c.dg_bus[i]][p] >= 0) s[node[c.dg_bus[i]][p]] -= c.dg_power[i][p] / s_phase;
    }
  }

  // Unknowns: all nodes except the source bus, which is fixed.
  const std::size_t src = net.source().bus;
  std::vector<int> unknown;
  Eigen::VectorXcd v(n);
  for (std::size_t b = 0; b < nb; ++b) {
    for (int p = 0; p < 3; ++p) {
      if (node[b][p] < 0) continue;
      v[node[b][p]] = net.source().voltage[p] / v_base;
      if (b != src) {
        unknown.push_back(node[b][p]);
      }
    }
  }
  const int m = static_cast<int>(unknown.size());
  const double vmin2 = c.min_voltage * c.min_voltage;

  auto residual = [&](const Eigen::VectorXcd& vv) {
    Eigen::VectorXcd f = y * vv;
    for (int i = 0; i < n; ++i) {
      if (s[i] == Complex(0.0)) continue;
      f[i] += std::abs(vv[i]) >= c.min_voltage ? std::conj(s[i] / vv[i])
                                               : std::conj(s[i]) / vmin2 * vv[i];
    }
    return f;
  };

  for (int it = 0; it < 60; ++it) {
    const Eigen::VectorXcd f = residual(v);
    double worst = 0.0;
    for (int idx : unknown) worst = std::max(worst, std::abs(f[idx]));
    out.iterations = it;
    out.residual = worst;
    if (worst < 1e-10) {
      out.converged = true;
      break;
    }
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * m, 2 * m);
    Eigen::VectorXd rhs(2 * m);
    for (int a = 0; a < m; ++a) {
      const int i = unknown[a];
      rhs[2 * a] = -f[i].real();
      rhs[2 * a + 1] = -f[i].imag();
      for (int bcol = 0; bcol < m; ++bcol) {
        const Complex yij = y(i, unknown[bcol]);
        jac(2 * a, 2 * bcol) += yij.real();
        jac(2 * a, 2 * bcol + 1) += -yij.imag();
        jac(2 * a + 1, 2 * bcol) += yij.imag();
        jac(2 * a + 1, 2 * bcol + 1) += yij.real();
      }
      if (s[i] == Complex(0.0)) continue;
      if (std::abs(v[i]) >= c.min_voltage) {
        // conj(S)/conj(V): derivative is conjugate-linear in dV.
        const Complex k = -std::conj(s[i]) / (std::conj(v[i]) * std::conj(v[i]));
        jac(2 * a, 2 * a) += k.real();
        jac(2 * a, 2 * a + 1) += k.imag();
        jac(2 * a + 1, 2 * a) += k.imag();
        jac(2 * a + 1, 2 * a + 1) += -k.real();
      } else {
        const Complex k = std::conj(s[i]) / vmin2;
        jac(2 * a, 2 * a) += k.real();
        jac(2 * a, 2 * a + 1) += -k.imag();
        jac(2 * a + 1, 2 * a) += k.imag();
        jac(2 * a + 1, 2 * a + 1) += k.real();
      }
    }
    const Eigen::VectorXd dx = jac.fullPivLu().solve(rhs);
    for (int a = 0; a < m; ++a) v[unknown[a]] += Complex(dx[2 * a], dx[2 * a + 1]);
  }
  for (std::size_t b = 0; b < nb; ++b) {
    for (int p = 0; p < 3; ++p) {
      if (node[b][p] >= 0) out.voltage[b][p] = v[node[b][p]];
    }
  }
  return out;
}

}  // namespace oracle
