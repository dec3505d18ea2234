#include "permfl/baselines.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "permfl/error.hpp"
#include "permfl/parallel.hpp"
#include "permfl/rng.hpp"

namespace permfl {

void FedAvgConfig::validate() const {
  if (rounds < 1) throw ConfigError("fedavg rounds must be positive");
  if (local_steps < 1) throw ConfigError("fedavg local_steps must be positive");
  if (!(step_size > 0.0)) throw ConfigError("fedavg step_size must be positive");
  if (!(participation > 0.0 && participation <= 1.0)) throw ConfigError("fedavg participation must be in (0, 1]");
}

FedAvgResult run_fedavg(const FedAvgConfig& cfg, std::span<const DeviceData> devices, const ParamVector& x0,
                        const RoundCallback& on_round) {
  cfg.validate();
  if (devices.empty()) throw ConfigError("fedavg needs at least one device");
  for (const auto& dev : devices)
    if (dev.model->dim() != x0.size()) throw ConfigError("fedavg: x0 dimension does not match the models");

  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = devices.size();
  const auto per_round = static_cast<std::size_t>(
      std::max(1.0, std::ceil(cfg.participation * static_cast<double>(n) - 1e-9)));

  FedAvgResult res;
  res.x = x0;
  std::vector<ParamVector> local(n);
  for (int t = 0; t < cfg.rounds; ++t) {
    Rng rng(cfg.seed, "fedavg-sample", {static_cast<std::uint64_t>(t)});
    std::vector<std::size_t> chosen;
    if (per_round == n) {
      for (std::size_t i = 0; i < n; ++i) chosen.push_back(i);
    } else {
      chosen = rng.sample_without_replacement(n, per_round);
    }

    parallel_for(chosen.size(), cfg.workers, [&](std::size_t j) {
      const auto& dev = devices[chosen[j]];
      ParamVector theta = res.x;
      ParamVector g(theta.size());
      for (int e = 0; e < cfg.local_steps; ++e) {
        dev.model->grad_into(theta, dev.train, g);
        theta -= cfg.step_size * g;
        const double sq = theta.squaredNorm();
        if (!(sq <= 1e24))
          throw NumericError("fedavg device " + std::to_string(dev.id) + " diverged at round t=" +
                             std::to_string(t) + " local step " + std::to_string(e));
      }
      local[chosen[j]] = std::move(theta);
    });

    ParamVector sum = ParamVector::Zero(x0.size());
    double weight = 0.0;
    for (std::size_t i : chosen) {
      const double w = std::max<double>(1.0, static_cast<double>(devices[i].train.size()));
      sum += w * local[i];
      weight += w;
    }
    res.x = sum / weight;

    if (cfg.evaluate) {
      const auto gm = evaluate_gm(res.x, devices, cfg.workers);
      MetricsRecord rec;
      rec.round = t;
      rec.has_accuracy = !std::isnan(gm.accuracy);
      rec.pm_acc = rec.gm_acc = gm.accuracy;
      rec.pm_loss = rec.gm_loss = gm.loss;
      rec.pm_acc_weighted = gm.accuracy;
      rec.pm_loss_weighted = gm.loss;
      rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      res.metrics.push_back(rec);
      if (on_round) on_round(rec);
    }
  }
  return res;
}

}  // namespace permfl
