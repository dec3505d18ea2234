#pragma once

// Three-tier personalized training loop: devices run L proximal gradient steps
// toward their team model, teams take K inexact envelope-gradient steps toward
// the global model, and the server takes one step per global round.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "permfl/metrics.hpp"
#include "permfl/models.hpp"
#include "permfl/topology.hpp"

namespace permfl {

struct Hyperparams {
  std::vector<double> alpha{0.01};  // one value (broadcast) or one per device id
  std::vector<double> eta{0.03};    // one value (broadcast) or one per team id
  double beta = 0.1;
  double gamma = 3.0;
  double lambda = 0.5;
  int T = 10;
  int K = 10;
  int L = 20;

  double alpha_for(int device) const;
  double eta_for(int team) const;
  double eta_min() const;
  /// Positivity of all rates and counts; broadcast sizes against the federation.
  void validate(int n_devices, int n_teams) const;
};

/// Devices indexed by id (devices[d].id == d) plus their team assignment.
struct Federation {
  Topology topology;
  std::vector<DeviceData> devices;

  Eigen::Index dim() const;
  void validate() const;
};

struct EngineOptions {
  ParticipationPolicy participation;
  std::size_t workers = 1;
  /// w_i^{t,0} = x^t at every global round; false keeps w_i from the previous round.
  bool reanchor_each_round = true;
  /// Start each device solve from its previous theta instead of w_i.
  bool warm_start_devices = false;
  bool evaluate = true;
  bool record_x_history = false;
};

struct RoundStats {
  int round = 0;
  /// ||gamma (x^t - wbar^t)||^2, the server's inexact gradient of phi.
  double grad_proxy_sq = 0.0;
};

struct RunResult {
  ParamVector x;
  std::vector<ParamVector> thetas;        // per device id
  std::vector<ParamVector> team_models;   // per team id
  std::vector<MetricsRecord> metrics;     // one per global round when evaluating
  std::vector<RoundStats> rounds;
  std::vector<ParamVector> x_history;     // x^0 .. x^T when recorded
  std::uint64_t seed = 0;
};

using RoundCallback = std::function<void(const MetricsRecord&)>;

// -- update rules ------------------------------------------------------------

/// theta - alpha grad f(theta) - alpha lambda (theta - w)
ParamVector device_step(const ParamVector& theta, const ParamVector& w, double alpha, double lambda,
                        const LossModel& model, const Batch& data);

/// `steps` device steps starting from `init` (theta^{t,k,0}; w unless warm-starting).
ParamVector device_solve(const ParamVector& w, double alpha, double lambda, int steps,
                         const LossModel& model, const Batch& data);
ParamVector device_solve(const ParamVector& init, const ParamVector& w, double alpha, double lambda,
                         int steps, const LossModel& model, const Batch& data);

struct IdParams {
  int id;
  const ParamVector* params;
};

/// Arithmetic mean summed in ascending id order, independent of input order.
ParamVector team_aggregate(std::span<const IdParams> members);
ParamVector global_aggregate(std::span<const IdParams> teams);

/// (1 - eta (lambda + gamma)) w + eta gamma x + lambda eta theta_bar
ParamVector team_step(const ParamVector& w, const ParamVector& x, const ParamVector& theta_bar,
                      double eta, double lambda, double gamma);

/// (1 - beta gamma) x + beta gamma w_bar
ParamVector global_step(const ParamVector& x, const ParamVector& w_bar, double beta, double gamma);

// -- full runs ---------------------------------------------------------------

RunResult run_permfl(const Federation& fed, const Hyperparams& hp, const ParamVector& x0,
                     const EngineOptions& opts, const RoundCallback& on_round = {});

/// Same outer recursion with device and team subproblems solved in closed
/// form. Every device model must be quadratic.
RunResult exact_prox_run(const Federation& fed, const Hyperparams& hp, const ParamVector& x0,
                         const EngineOptions& opts, const RoundCallback& on_round = {});

/// Minimizer of phi(x) = mean_i F~_i^gamma(x) for an all-quadratic
/// federation, from the nested closed-form envelopes.
ParamVector quadratic_global_minimizer(const Federation& fed, double lambda, double gamma);

/// Value of the triple-regularized personalized objective on training data:
/// mean_i mean_j f_ij(theta_ij) + lambda/2 ||theta_ij - w_i||^2 + gamma/2 ||w_i - x||^2.
double personalized_objective(const Federation& fed, const ParamVector& x,
                              std::span<const ParamVector> team_models,
                              std::span<const ParamVector> thetas, double lambda, double gamma);

}  // namespace permfl
