#include "permfl/envelope.hpp"

#include <string>

#include "permfl/error.hpp"

namespace permfl {

ParamVector prox_gd(const ProxProblem& p, int steps, double step_size, const ParamVector& init) {
  if (steps < 0) throw ConfigError("prox_gd: negative step count");
  if (!(step_size > 0.0)) throw ConfigError("prox_gd: step size must be positive");
  if (!(p.sigma > 0.0)) throw ConfigError("prox_gd: sigma must be positive");
  if (init.size() != p.objective.dim() || p.anchor.size() != init.size())
    throw ConfigError("prox_gd: dimension mismatch");

  ParamVector u = init;
  ParamVector g(u.size());
  for (int s = 0; s < steps; ++s) {
    p.objective.grad_into(u, p.data, g);
    u -= step_size * (g + p.sigma * (u - p.anchor));
    if (!u.allFinite() || u.norm() > kDivergenceNorm)
      throw NumericError("prox_gd diverged at step " + std::to_string(s));
  }
  return u;
}

ParamVector closed_form_prox(const QuadraticSpec& q, double sigma, const ParamVector& z) {
  if (!(sigma > 0.0)) throw ConfigError("closed_form_prox: sigma must be positive");
  if (z.size() != q.center.size()) throw ConfigError("closed_form_prox: dimension mismatch");
  return (q.curvature * q.center + sigma * z) / (q.curvature + sigma);
}

double envelope_value(const ProxProblem& p, const ParamVector& u_star) {
  return p.objective.loss(u_star, p.data) + 0.5 * p.sigma * (u_star - p.anchor).squaredNorm();
}

ParamVector inexact_envelope_grad(double sigma, const ParamVector& z, const ParamVector& u_approx) {
  if (z.size() != u_approx.size()) throw ConfigError("inexact_envelope_grad: dimension mismatch");
  return sigma * (z - u_approx);
}

}  // namespace permfl
