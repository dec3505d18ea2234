#pragma once

// Moreau-envelope utilities. For an objective g and smoothing sigma > 0,
//   env(z)  = min_u g(u) + (sigma/2) ||u - z||^2
//   prox(z) = the minimizer,  grad env(z) = sigma (z - prox(z)).
// The device level uses sigma = lambda, the team level sigma = gamma.

#include "permfl/models.hpp"

namespace permfl {

/// Iterates above this norm are treated as divergence.
inline constexpr double kDivergenceNorm = 1e12;

struct ProxProblem {
  const LossModel& objective;
  const Batch& data;
  double sigma;
  ParamVector anchor;
};

/// `steps` iterations of u <- u - step_size (grad g(u) + sigma (u - anchor)).
ParamVector prox_gd(const ProxProblem& p, int steps, double step_size, const ParamVector& init);

/// Exact prox of a quadratic: (a c + sigma z) / (a + sigma).
ParamVector closed_form_prox(const QuadraticSpec& q, double sigma, const ParamVector& z);

/// g(u) + (sigma/2) ||u - anchor||^2 evaluated at an (approximate) prox point.
double envelope_value(const ProxProblem& p, const ParamVector& u_star);

/// sigma (z - u): the envelope gradient formed from an approximate prox point.
ParamVector inexact_envelope_grad(double sigma, const ParamVector& z, const ParamVector& u_approx);

}  // namespace permfl
