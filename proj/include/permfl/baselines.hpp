#pragma once

// FedAvg over a flat view of all devices, for GM-vs-GM comparison.

#include <cstdint>
#include <span>
#include <vector>

#include "permfl/engine.hpp"
#include "permfl/metrics.hpp"

namespace permfl {

struct FedAvgConfig {
  int rounds = 10;
  int local_steps = 200;  // gradient steps per sampled device per round
  double step_size = 0.01;
  double participation = 1.0;  // fraction of devices sampled each round
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool evaluate = true;

  void validate() const;
};

struct FedAvgResult {
  ParamVector x;
  std::vector<MetricsRecord> metrics;  // GM columns filled; PM columns mirror GM
};

/// Sampled devices copy x, take `local_steps` full-batch gradient steps and the
/// server averages the results weighted by training sample counts.
FedAvgResult run_fedavg(const FedAvgConfig& cfg, std::span<const DeviceData> devices, const ParamVector& x0,
                        const RoundCallback& on_round = {});

}  // namespace permfl
