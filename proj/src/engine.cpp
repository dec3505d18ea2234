#include "permfl/engine.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <string>

#include "permfl/envelope.hpp"
#include "permfl/error.hpp"
#include "permfl/parallel.hpp"

namespace permfl {
namespace {

// theta <- theta - alpha grad - alpha lambda (theta - w), shared by device_step
// and device_solve so both produce identical bits.
inline void device_update(ParamVector& theta, const ParamVector& w, const ParamVector& grad,
                          double alpha, double lambda) {
  theta -= alpha * grad + (alpha * lambda) * (theta - w);
}

inline void require_bounded(const ParamVector& v, const std::string& what) {
  const double sq = v.squaredNorm();
  if (!(sq <= kDivergenceNorm * kDivergenceNorm))
    throw NumericError(what + (std::isfinite(sq) ? " diverged (norm above 1e12)" : " became non-finite"));
}

ParamVector ordered_mean(std::span<const IdParams> items, const char* what) {
  if (items.empty()) throw ConfigError(std::string(what) + ": nothing to aggregate");
  std::vector<IdParams> sorted(items.begin(), items.end());
  std::sort(sorted.begin(), sorted.end(), [](const IdParams& a, const IdParams& b) { return a.id < b.id; });
  const auto d = sorted.front().params->size();
  ParamVector sum = ParamVector::Zero(d);
  for (const auto& it : sorted) {
    if (it.params->size() != d) throw ConfigError(std::string(what) + ": dimension mismatch");
    sum += *it.params;
  }
  return sum / static_cast<double>(sorted.size());
}

const QuadraticModel& as_quadratic(const DeviceData& dev) {
  const auto* q = dynamic_cast<const QuadraticModel*>(dev.model.get());
  if (!q)
    throw UnsupportedError("exact prox requires quadratic models; device " + std::to_string(dev.id) +
                           " uses " + std::string(dev.model->kind()));
  return *q;
}

std::string where(int t, int k, int team, int device) {
  std::string s = "round t=" + std::to_string(t);
  if (k >= 0) s += " k=" + std::to_string(k);
  if (team >= 0) s += " team=" + std::to_string(team);
  if (device >= 0) s += " device=" + std::to_string(device);
  return s;
}

template <class Ex>
[[noreturn]] void rethrow_with_context(const Ex& e, const std::string& ctx) {
  throw Ex(std::string(e.what()) + " [" + ctx + "]");
}

// Per-round team work: updates team_models and thetas of the active entities.
using TeamRound = std::function<void(int t, const RoundSample& sample, const ParamVector& x,
                                     std::vector<ParamVector>& team_models,
                                     std::vector<ParamVector>& thetas)>;

RunResult outer_loop(const Federation& fed, const Hyperparams& hp, const ParamVector& x0,
                     const EngineOptions& opts, const RoundCallback& on_round, const TeamRound& team_round) {
  fed.validate();
  hp.validate(static_cast<int>(fed.devices.size()), fed.topology.n_teams());
  opts.participation.validate();
  if (x0.size() != fed.dim()) throw ConfigError("x0 dimension does not match the models");
  require_finite(x0, "x0");

  const auto start = std::chrono::steady_clock::now();
  RunResult res;
  res.seed = opts.participation.seed;
  res.x = x0;
  res.team_models.assign(static_cast<std::size_t>(fed.topology.n_teams()), x0);
  res.thetas.assign(fed.devices.size(), x0);
  if (opts.record_x_history) res.x_history.push_back(x0);

  for (int t = 0; t < hp.T; ++t) {
    const auto sample = sample_round(opts.participation, fed.topology, t);
    if (opts.reanchor_each_round)
      for (int team : sample.teams) res.team_models[static_cast<std::size_t>(team)] = res.x;

    team_round(t, sample, res.x, res.team_models, res.thetas);

    std::vector<IdParams> active;
    for (int team : sample.teams) active.push_back({team, &res.team_models[static_cast<std::size_t>(team)]});
    const ParamVector w_bar = global_aggregate(active);
    res.rounds.push_back({t, (hp.gamma * (res.x - w_bar)).squaredNorm()});
    try {
      res.x = global_step(res.x, w_bar, hp.beta, hp.gamma);
    } catch (const NumericError& e) {
      rethrow_with_context(e, where(t, -1, -1, -1));
    }
    if (opts.record_x_history) res.x_history.push_back(res.x);

    if (opts.evaluate) {
      const auto pm = evaluate_pm(fed.devices, res.thetas, opts.workers);
      const auto gm = evaluate_gm(res.x, fed.devices, opts.workers);
      MetricsRecord rec;
      rec.round = t;
      rec.has_accuracy = !std::isnan(pm.accuracy);
      rec.pm_acc = pm.accuracy;
      rec.gm_acc = gm.accuracy;
      rec.pm_loss = pm.loss;
      rec.gm_loss = gm.loss;
      rec.pm_acc_weighted = pm.accuracy_weighted;
      rec.pm_loss_weighted = pm.loss_weighted;
      rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      res.metrics.push_back(rec);
      if (on_round) on_round(rec);
    }
  }
  return res;
}

}  // namespace

// -- Hyperparams / Federation ------------------------------------------------

double Hyperparams::alpha_for(int device) const {
  return alpha.size() == 1 ? alpha.front() : alpha.at(static_cast<std::size_t>(device));
}

double Hyperparams::eta_for(int team) const {
  return eta.size() == 1 ? eta.front() : eta.at(static_cast<std::size_t>(team));
}

double Hyperparams::eta_min() const { return *std::min_element(eta.begin(), eta.end()); }

void Hyperparams::validate(int n_devices, int n_teams) const {
  if (alpha.empty() || (alpha.size() != 1 && alpha.size() != static_cast<std::size_t>(n_devices)))
    throw ConfigError("alpha needs one value or one per device");
  if (eta.empty() || (eta.size() != 1 && eta.size() != static_cast<std::size_t>(n_teams)))
    throw ConfigError("eta needs one value or one per team");
  for (double a : alpha)
    if (!(a > 0.0)) throw ConfigError("alpha must be positive");
  for (double e : eta)
    if (!(e > 0.0)) throw ConfigError("eta must be positive");
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (T < 1 || K < 1 || L < 1) throw ConfigError("T, K and L must be positive");
}

Eigen::Index Federation::dim() const {
  if (devices.empty()) throw ConfigError("federation has no devices");
  return devices.front().model->dim();
}

void Federation::validate() const {
  topology.validate();
  if (static_cast<std::size_t>(topology.n_devices()) != devices.size())
    throw ConfigError("topology covers " + std::to_string(topology.n_devices()) + " devices but " +
                      std::to_string(devices.size()) + " were supplied");
  const auto d = dim();
  for (std::size_t i = 0; i < devices.size(); ++i) {
    if (devices[i].id != static_cast<int>(i)) throw ConfigError("device ids must equal their index");
    if (!devices[i].model) throw ConfigError("device " + std::to_string(i) + " has no model");
    if (devices[i].model->dim() != d) throw ConfigError("devices disagree on parameter dimension");
  }
  for (const auto& team : topology.teams)
    for (int dev : team)
      if (dev >= static_cast<int>(devices.size()))
        throw ConfigError("topology references unknown device " + std::to_string(dev));
}

// -- update rules ------------------------------------------------------------

ParamVector device_step(const ParamVector& theta, const ParamVector& w, double alpha, double lambda,
                        const LossModel& model, const Batch& data) {
  if (theta.size() != w.size()) throw ConfigError("device_step: dimension mismatch");
  ParamVector g;
  model.grad_into(theta, data, g);
  ParamVector out = theta;
  device_update(out, w, g, alpha, lambda);
  require_bounded(out, "device model");
  return out;
}

ParamVector device_solve(const ParamVector& w, double alpha, double lambda, int steps,
                         const LossModel& model, const Batch& data) {
  return device_solve(w, w, alpha, lambda, steps, model, data);
}

ParamVector device_solve(const ParamVector& init, const ParamVector& w, double alpha, double lambda,
                         int steps, const LossModel& model, const Batch& data) {
  if (steps < 0) throw ConfigError("device_solve: negative step count");
  if (init.size() != w.size()) throw ConfigError("device_solve: dimension mismatch");
  // The update is a pure function of theta, so once an iterate repeats bitwise
  // the sequence is periodic and the state after `steps` steps can be read off
  // the recent history. Round-off often leaves it cycling between two values.
  constexpr int kMaxPeriod = 4;
  std::array<ParamVector, kMaxPeriod + 1> hist;
  hist[0] = init;
  ParamVector g(init.size());
  for (int l = 1; l <= steps; ++l) {
    ParamVector& theta = hist[static_cast<std::size_t>(l % (kMaxPeriod + 1))];
    theta = hist[static_cast<std::size_t>((l - 1) % (kMaxPeriod + 1))];
    model.grad_into(theta, data, g);
    device_update(theta, w, g, alpha, lambda);
    if (!(theta.squaredNorm() <= kDivergenceNorm * kDivergenceNorm))
      require_bounded(theta, "device model at local step " + std::to_string(l - 1));
    for (int p = 1; p <= kMaxPeriod && p <= l; ++p) {
      if (theta != hist[static_cast<std::size_t>((l - p) % (kMaxPeriod + 1))]) continue;
      const int offset = (steps - l) % p;
      return hist[static_cast<std::size_t>((l - p + offset) % (kMaxPeriod + 1))];
    }
  }
  return hist[static_cast<std::size_t>(steps % (kMaxPeriod + 1))];
}

ParamVector team_aggregate(std::span<const IdParams> members) { return ordered_mean(members, "team_aggregate"); }

ParamVector global_aggregate(std::span<const IdParams> teams) { return ordered_mean(teams, "global_aggregate"); }

ParamVector team_step(const ParamVector& w, const ParamVector& x, const ParamVector& theta_bar, double eta,
                      double lambda, double gamma) {
  if (w.size() != x.size() || w.size() != theta_bar.size()) throw ConfigError("team_step: dimension mismatch");
  ParamVector out = (1.0 - eta * (lambda + gamma)) * w + (eta * gamma) * x + (lambda * eta) * theta_bar;
  require_bounded(out, "team model");
  return out;
}

ParamVector global_step(const ParamVector& x, const ParamVector& w_bar, double beta, double gamma) {
  if (x.size() != w_bar.size()) throw ConfigError("global_step: dimension mismatch");
  ParamVector out = (1.0 - beta * gamma) * x + (beta * gamma) * w_bar;
  require_bounded(out, "global model");
  return out;
}

// -- runs --------------------------------------------------------------------

RunResult run_permfl(const Federation& fed, const Hyperparams& hp, const ParamVector& x0,
                     const EngineOptions& opts, const RoundCallback& on_round) {
  auto team_round = [&](int t, const RoundSample& sample, const ParamVector& x,
                        std::vector<ParamVector>& team_models, std::vector<ParamVector>& thetas) {
    struct Job {
      int team;
      int device;
    };
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < sample.teams.size(); ++s)
      for (int d : sample.devices[s]) jobs.push_back({sample.teams[s], d});

    for (int k = 0; k < hp.K; ++k) {
      parallel_for(jobs.size(), opts.workers, [&](std::size_t j) {
        const auto [team, d] = jobs[j];
        const auto& dev = fed.devices[static_cast<std::size_t>(d)];
        const auto& w = team_models[static_cast<std::size_t>(team)];
        auto& theta = thetas[static_cast<std::size_t>(d)];
        try {
          theta = device_solve(opts.warm_start_devices ? theta : w, w, hp.alpha_for(d), hp.lambda, hp.L,
                               *dev.model, dev.train);
        } catch (const NumericError& e) {
          rethrow_with_context(e, where(t, k, team, d));
        } catch (const ConfigError& e) {
          rethrow_with_context(e, where(t, k, team, d));
        }
      });
      for (std::size_t s = 0; s < sample.teams.size(); ++s) {
        const int team = sample.teams[s];
        std::vector<IdParams> members;
        for (int d : sample.devices[s]) members.push_back({d, &thetas[static_cast<std::size_t>(d)]});
        const auto theta_bar = team_aggregate(members);
        auto& w = team_models[static_cast<std::size_t>(team)];
        try {
          w = team_step(w, x, theta_bar, hp.eta_for(team), hp.lambda, hp.gamma);
        } catch (const NumericError& e) {
          rethrow_with_context(e, where(t, k, team, -1));
        }
      }
    }
  };
  return outer_loop(fed, hp, x0, opts, on_round, team_round);
}

RunResult exact_prox_run(const Federation& fed, const Hyperparams& hp, const ParamVector& x0,
                         const EngineOptions& opts, const RoundCallback& on_round) {
  for (const auto& dev : fed.devices) as_quadratic(dev);
  auto team_round = [&](int, const RoundSample& sample, const ParamVector& x,
                        std::vector<ParamVector>& team_models, std::vector<ParamVector>& thetas) {
    for (std::size_t s = 0; s < sample.teams.size(); ++s) {
      // F_i(w) = mean_j (b_j/2)||w - c_j||^2 with b_j = a_j lambda / (a_j + lambda).
      double curvature = 0.0;
      ParamVector moment = ParamVector::Zero(x.size());
      for (int d : sample.devices[s]) {
        const auto& q = as_quadratic(fed.devices[static_cast<std::size_t>(d)]).spec();
        const double b = q.curvature * hp.lambda / (q.curvature + hp.lambda);
        curvature += b;
        moment += b * q.center;
      }
      const auto n = static_cast<double>(sample.devices[s].size());
      auto& w = team_models[static_cast<std::size_t>(sample.teams[s])];
      w = (moment / n + hp.gamma * x) / (curvature / n + hp.gamma);
      for (int d : sample.devices[s])
        thetas[static_cast<std::size_t>(d)] =
            closed_form_prox(as_quadratic(fed.devices[static_cast<std::size_t>(d)]).spec(), hp.lambda, w);
    }
  };
  return outer_loop(fed, hp, x0, opts, on_round, team_round);
}

ParamVector quadratic_global_minimizer(const Federation& fed, double lambda, double gamma) {
  fed.validate();
  ParamVector num = ParamVector::Zero(fed.dim());
  double den = 0.0;
  for (const auto& team : fed.topology.teams) {
    double a_sum = 0.0;
    ParamVector m = ParamVector::Zero(fed.dim());
    for (int d : team) {
      const auto& q = as_quadratic(fed.devices[static_cast<std::size_t>(d)]).spec();
      const double b = q.curvature * lambda / (q.curvature + lambda);
      a_sum += b;
      m += b * q.center;
    }
    const double a = a_sum / static_cast<double>(team.size());
    const ParamVector z = m / a_sum;
    const double weight = a * gamma / (a + gamma);
    num += weight * z;
    den += weight;
  }
  return num / den;
}

double personalized_objective(const Federation& fed, const ParamVector& x,
                              std::span<const ParamVector> team_models,
                              std::span<const ParamVector> thetas, double lambda, double gamma) {
  double total = 0.0;
  for (std::size_t i = 0; i < fed.topology.teams.size(); ++i) {
    const auto& team = fed.topology.teams[i];
    const auto& w = team_models[i];
    double team_sum = 0.0;
    for (int d : team) {
      const auto& dev = fed.devices[static_cast<std::size_t>(d)];
      const auto& th = thetas[static_cast<std::size_t>(d)];
      team_sum += dev.model->loss(th, dev.train) + 0.5 * lambda * (th - w).squaredNorm() +
                  0.5 * gamma * (w - x).squaredNorm();
    }
    total += team_sum / static_cast<double>(team.size());
  }
  return total / static_cast<double>(fed.topology.teams.size());
}

}  // namespace permfl
