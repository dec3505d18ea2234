#include "permfl/validate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "permfl/error.hpp"
#include "permfl/rng.hpp"

namespace permfl {
namespace {

BoundCheck at_most(std::string name, std::string relation, double actual, double limit) {
  return {std::move(name), std::move(relation), actual, limit, actual <= limit};
}

BoundCheck greater_than(std::string name, std::string relation, double actual, double limit) {
  return {std::move(name), std::move(relation), actual, limit, actual > limit};
}

void add_rate_checks(BoundReport& r, const Hyperparams& hp, double eta_limit, double alpha_limit_base,
                     const char* alpha_relation, const char* eta_relation) {
  for (std::size_t i = 0; i < hp.eta.size(); ++i) {
    const std::string name = hp.eta.size() == 1 ? "eta" : "eta[" + std::to_string(i) + "]";
    r.checks.push_back(at_most(name, eta_relation, hp.eta[i], eta_limit));
  }
  for (std::size_t i = 0; i < hp.alpha.size(); ++i) {
    const std::string name = hp.alpha.size() == 1 ? "alpha" : "alpha[" + std::to_string(i) + "]";
    r.checks.push_back(at_most(name, alpha_relation, hp.alpha[i], 1.0 / alpha_limit_base));
  }
}

void add_ordering_checks(BoundReport& r, const Hyperparams& hp, double L_f) {
  r.checks.push_back(greater_than("gamma_vs_lambda", "gamma > 2 lambda", hp.gamma, 2.0 * hp.lambda));
  r.checks.push_back(greater_than("lambda_vs_Lf", "2 lambda > 4 L_f", 2.0 * hp.lambda, 4.0 * L_f));
}

}  // namespace

void ConvexityConstants::validate() const {
  if (!(mu_f > 0.0) || !(L_f >= mu_f))
    throw ConfigError("convexity constants need 0 < mu_f <= L_f");
}

bool BoundReport::certified() const noexcept {
  return std::all_of(checks.begin(), checks.end(), [](const BoundCheck& c) { return c.pass; });
}

std::vector<BoundCheck> BoundReport::failures() const {
  std::vector<BoundCheck> out;
  for (const auto& c : checks)
    if (!c.pass) out.push_back(c);
  return out;
}

std::string BoundReport::to_text() const {
  std::ostringstream out;
  out << "bound check (" << regime << (estimated_constants ? ", estimated constants" : "") << "): "
      << (certified() ? "CERTIFIED" : "NOT CERTIFIED") << '\n';
  char buf[256];
  for (const auto& c : checks) {
    std::snprintf(buf, sizeof buf, "  [%s] %-18s %-34s actual=%.6g limit=%.6g\n", c.pass ? "pass" : "FAIL",
                  c.name.c_str(), c.relation.c_str(), c.actual, c.limit);
    out << buf;
  }
  return out.str();
}

std::string BoundReport::to_key_values() const {
  std::ostringstream out;
  out.precision(17);
  out << "bound.regime=" << regime << '\n'
      << "bound.estimated_constants=" << (estimated_constants ? 1 : 0) << '\n'
      << "bound.certified=" << (certified() ? 1 : 0) << '\n';
  for (const auto& c : checks)
    out << "bound." << c.name << ".pass=" << (c.pass ? 1 : 0) << '\n'
        << "bound." << c.name << ".actual=" << c.actual << '\n'
        << "bound." << c.name << ".limit=" << c.limit << '\n';
  return out.str();
}

double mu_tilde_f(double lambda, double mu_f) {
  if (mu_f == 0.0) return 0.0;
  return lambda * mu_f / (lambda + mu_f);
}

double mu_tilde_F(double lambda, double gamma, double mu_f) {
  if (mu_f == 0.0) return 0.0;
  return lambda * gamma * mu_f / (lambda * mu_f + gamma * mu_f + lambda * gamma);
}

BoundReport check_strongly_convex(const Hyperparams& hp, const ConvexityConstants& cc) {
  cc.validate();
  BoundReport r;
  r.regime = "strongly-convex";
  r.estimated_constants = cc.estimated;
  const double mu_F = mu_tilde_F(hp.lambda, hp.gamma, cc.mu_f);
  r.checks.push_back(at_most("beta", "beta <= mu_F~/(4 gamma)", hp.beta, mu_F / (4.0 * hp.gamma)));
  add_rate_checks(r, hp, 1.0 / (2.0 * (hp.lambda + hp.gamma)), cc.L_f + hp.lambda, "alpha <= 1/(L_f + lambda)",
                  "eta <= 1/(2(lambda + gamma))");
  add_ordering_checks(r, hp, cc.L_f);
  return r;
}

BoundReport check_nonconvex(const Hyperparams& hp, double L_f) {
  if (!(L_f > 0.0)) throw ConfigError("L_f must be positive");
  BoundReport r;
  r.regime = "non-convex";
  r.checks.push_back(at_most("beta", "beta <= 1/(4 gamma)", hp.beta, 1.0 / (4.0 * hp.gamma)));
  add_rate_checks(r, hp, 1.0 / (hp.lambda + hp.gamma), hp.lambda, "alpha <= 1/lambda", "eta <= 1/(lambda + gamma)");
  add_ordering_checks(r, hp, L_f);
  return r;
}

std::pair<int, int> suggest_inner_iters(int T, const Hyperparams& hp, const ConvexityConstants& cc,
                                        double slack) {
  if (!(slack >= 1.0)) throw ConfigError("slack must be at least 1");
  if (T <= 0) return {1, 1};
  const double mu_F = mu_tilde_f(hp.lambda, cc.mu_f);
  const double mu_Ft = mu_tilde_F(hp.lambda, hp.gamma, cc.mu_f);
  const double alpha = *std::max_element(hp.alpha.begin(), hp.alpha.end());

  const double outer = 1.0 - hp.beta * mu_Ft / 2.0;
  const double team = 1.0 - hp.eta_min() * (mu_F + hp.gamma) / 2.0;
  const double device = 1.0 - alpha * cc.mu_f;
  auto check = [](double v, const char* what) {
    if (!(v > 0.0 && v < 1.0))
      throw ConfigError(std::string("inner-iteration sizing: ") + what +
                        " contraction factor outside (0, 1); step size too large");
  };
  check(outer, "server");
  check(team, "team");
  check(device, "device");

  const double k_ratio = std::log(outer) / std::log(team);
  const double k_real = std::ceil(slack * k_ratio * T - 1e-9);
  const int K = std::max(1, static_cast<int>(std::min<double>(k_real, std::numeric_limits<int>::max())));
  const double l_ratio = std::log(team) / std::log(device);
  const double l_real = std::ceil(slack * l_ratio * K - 1e-9);
  const int L = std::max(1, static_cast<int>(std::min<double>(l_real, std::numeric_limits<int>::max())));
  return {K, L};
}

RateFactors strongly_convex_rate(const Hyperparams& hp, const ConvexityConstants& cc) {
  const double mu_Ft = mu_tilde_F(hp.lambda, hp.gamma, cc.mu_f);
  return {1.0 - hp.beta, 1.0 - hp.beta * mu_Ft / 2.0};
}

ConvexityConstants estimate_constants(const LossModel& model, std::span<const Batch> batches,
                                      const ParamVector& center, double radius, double offset,
                                      int pairs, std::uint64_t seed) {
  if (batches.empty() || pairs < 1) throw ConfigError("estimate_constants needs batches and pairs");
  if (center.size() != model.dim()) throw ConfigError("estimate_constants: center dimension mismatch");
  Rng rng(seed, "estimate-constants");
  double l_max = 0.0;
  double mu_min = std::numeric_limits<double>::infinity();
  for (const auto& batch : batches) {
    for (int p = 0; p < pairs; ++p) {
      ParamVector a(center.size()), dir(center.size());
      for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = center(i) + radius * rng.normal();
      for (Eigen::Index i = 0; i < dir.size(); ++i) dir(i) = rng.normal();
      const ParamVector b = a + offset * dir / dir.norm();
      const ParamVector dg = model.grad(a, batch) - model.grad(b, batch);
      const ParamVector dx = a - b;
      l_max = std::max(l_max, dg.norm() / dx.norm());
      mu_min = std::min(mu_min, dg.dot(dx) / dx.squaredNorm());
    }
  }
  return {mu_min, l_max, true};
}

ConvexityConstants quadratic_constants(const Federation& fed) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& dev : fed.devices) {
    const auto* q = dynamic_cast<const QuadraticModel*>(dev.model.get());
    if (!q) throw UnsupportedError("quadratic_constants: device " + std::to_string(dev.id) + " is not quadratic");
    lo = std::min(lo, q->spec().curvature);
    hi = std::max(hi, q->spec().curvature);
  }
  return {lo, hi, false};
}

}  // namespace permfl
