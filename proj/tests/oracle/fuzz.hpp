#pragma once

#include <string>
#include <vector>

#include "newton_oracle.hpp"
#include "rlrelay/powerflow.hpp"
#include "rlrelay/rng.hpp"

namespace oracle {

struct FuzzCase {
  rlrelay::OperatingCondition condition;
  NodalCase nodal;
  std::string label;
};

// Decade anchors for fault impedance (ohms); case k uses anchor k % 6.
inline constexpr double kImpedanceDecades[] = {0.001, 0.01, 0.1, 1.0, 10.0, 20.0};

FuzzCase make_fuzz_case(const rlrelay::FeederNetwork& net, rlrelay::Rng& rng, int k);

// Largest componentwise |sweep - oracle| over energized bus phases, pu.
double max_voltage_gap(const rlrelay::FeederNetwork& net,
                       const rlrelay::PowerFlowSolution& sweep, const NodalResult& ref);

std::string data_path(const std::string& relative);

}  // namespace oracle
