#pragma once

// Hyperparameter regions under which the convergence guarantees hold, the
// envelope strong-convexity constants, and sizing of the inner loop counts.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "permfl/engine.hpp"

namespace permfl {

struct ConvexityConstants {
  double mu_f = 0.0;
  double L_f = 0.0;
  bool estimated = false;  // empirical rather than analytic

  void validate() const;
};

struct BoundCheck {
  std::string name;      // e.g. "beta"
  std::string relation;  // e.g. "beta <= mu_F~/(4 gamma)"
  double actual = 0.0;
  double limit = 0.0;
  bool pass = false;
};

struct BoundReport {
  std::string regime;  // "strongly-convex" | "non-convex"
  std::vector<BoundCheck> checks;
  bool estimated_constants = false;

  bool certified() const noexcept;
  std::vector<BoundCheck> failures() const;
  /// Human-readable table, one line per relation.
  std::string to_text() const;
  /// "bound.<name>.pass=1" style block for run logs.
  std::string to_key_values() const;
};

/// Strong convexity of the device envelope: lambda mu_f / (lambda + mu_f).
double mu_tilde_f(double lambda, double mu_f);

/// Strong convexity of the team envelope:
/// lambda gamma mu_f / (lambda mu_f + gamma mu_f + lambda gamma).
double mu_tilde_F(double lambda, double gamma, double mu_f);

/// beta <= mu_F~/(4 gamma), eta_i <= 1/(2(lambda+gamma)), alpha <= 1/(L_f+lambda), gamma > 2 lambda > 4 L_f.
BoundReport check_strongly_convex(const Hyperparams& hp, const ConvexityConstants& cc);

/// beta <= 1/(4 gamma), eta_i <= 1/(lambda+gamma), alpha <= 1/lambda, gamma > 2 lambda > 4 L_f.
BoundReport check_nonconvex(const Hyperparams& hp, double L_f);

/// Team and device iteration counts from the log-ratio relations, with the
/// run-dependent additive offsets dropped and replaced by `slack` (>= 1):
///   K = ceil(slack * ln(1 - beta mu_F~/2) / ln(1 - eta_min (mu_F + gamma)/2) * T)
///   L = ceil(slack * ln(1 - eta_min (mu_F + gamma)/2) / ln(1 - alpha mu_f) * K)
/// Both are at least 1.
std::pair<int, int> suggest_inner_iters(int T, const Hyperparams& hp, const ConvexityConstants& cc,
                                        double slack = 2.0);

/// Squared-distance contraction factors of the strongly convex rate: the
/// stated (1 - beta) and the tighter pre-substitution (1 - beta mu_F~/2).
struct RateFactors {
  double stated = 0.0;
  double derived = 0.0;
};
RateFactors strongly_convex_rate(const Hyperparams& hp, const ConvexityConstants& cc);

/// Empirical smoothness / strong convexity from gradient differences over
/// random pairs: L = max ||g(a) - g(b)|| / ||a - b||,
/// mu = min <g(a) - g(b), a - b> / ||a - b||^2. Points are drawn around
/// `center` with per-coordinate spread `radius`, partners at distance `offset`.
ConvexityConstants estimate_constants(const LossModel& model, std::span<const Batch> batches,
                                      const ParamVector& center, double radius, double offset,
                                      int pairs, std::uint64_t seed);

/// Exact constants when every device model is quadratic (mu = min a, L = max a).
ConvexityConstants quadratic_constants(const Federation& fed);

}  // namespace permfl
