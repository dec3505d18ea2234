#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "permfl/error.hpp"
#include "permfl/validate.hpp"

using namespace permfl;

namespace {

Hyperparams strongly_convex_example() {
  Hyperparams hp;
  hp.lambda = 2.5;
  hp.gamma = 6.0;
  hp.beta = mu_tilde_F(2.5, 6.0, 1.0) / 24.0;
  hp.eta = {1.0 / 17.0};
  hp.alpha = {1.0 / 3.5};
  return hp;
}

bool passes(const BoundReport& r, const std::string& name) {
  for (const auto& c : r.checks)
    if (c.name == name) return c.pass;
  FAIL("no check named " << name);
  return false;
}

}  // namespace

TEST_CASE("envelope constants by hand") {
  CHECK(mu_tilde_f(1.0, 1.0) == 0.5);
  CHECK(mu_tilde_f(3.0, 0.0) == 0.0);
  CHECK(mu_tilde_F(1.0, 1.0, 1.0) == 1.0 / 3.0);
  CHECK(mu_tilde_F(2.0, 5.0, 0.0) == 0.0);
}

TEST_CASE("constants compose and stay below their inputs") {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(1e-3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double l = u(gen), g = u(gen), m = u(gen);
    const double composed = mu_tilde_f(g, mu_tilde_f(l, m));
    CHECK(std::abs(mu_tilde_F(l, g, m) - composed) <= 1e-12 * std::max(1.0, composed));
    CHECK(mu_tilde_f(l, m) < std::min(l, m));
  }
}

TEST_CASE("strongly convex region") {
  const ConvexityConstants cc{1.0, 1.0, false};
  const auto r = check_strongly_convex(strongly_convex_example(), cc);
  CHECK(r.certified());
  CHECK(r.failures().empty());

  auto boundary = strongly_convex_example();
  boundary.gamma = 2.0 * boundary.lambda;
  CHECK_FALSE(passes(check_strongly_convex(boundary, cc), "gamma_vs_lambda"));

  auto big_beta = strongly_convex_example();
  big_beta.beta = 1.0;
  const auto rb = check_strongly_convex(big_beta, cc);
  CHECK_FALSE(passes(rb, "beta"));
  CHECK_FALSE(rb.certified());
  CHECK(rb.failures().size() == 1);
}

TEST_CASE("non-convex region") {
  Hyperparams hp;
  hp.lambda = 2.5;
  hp.gamma = 6.0;
  hp.beta = 1.0 / 24.0;
  hp.eta = {1.0 / 8.5};
  hp.alpha = {0.4};
  CHECK(check_nonconvex(hp, 1.0).certified());
  auto a = hp;
  a.alpha = {2.0 / a.lambda};
  CHECK_FALSE(passes(check_nonconvex(a, 1.0), "alpha"));
  auto g = hp;
  g.gamma = g.lambda;
  CHECK_FALSE(passes(check_nonconvex(g, 1.0), "gamma_vs_lambda"));
}

TEST_CASE("reports are pure and render every check") {
  const ConvexityConstants cc{1.0, 1.0, false};
  const auto a = check_strongly_convex(strongly_convex_example(), cc);
  const auto b = check_strongly_convex(strongly_convex_example(), cc);
  CHECK(a.to_text() == b.to_text());
  CHECK(a.to_key_values() == b.to_key_values());
  CHECK(a.to_key_values().find("bound.certified=1") != std::string::npos);
  CHECK(a.to_text().find("CERTIFIED") != std::string::npos);
}

TEST_CASE("inner iteration sizing") {
  // Worked ratio with mu_F~ = 0.2 and mu_F = 0.4 plugged in directly.
  const double ratio = std::log(1.0 - 0.01 * 0.2 / 2.0) / std::log(1.0 - 0.05 * (0.4 + 6.0) / 2.0);
  CHECK(ratio == doctest::Approx(0.00574).epsilon(0.002));

  // Those two constants cannot come from one (lambda, gamma, mu_f), so the
  // function itself is checked on realizable ones.
  Hyperparams hp;
  hp.beta = 0.01;
  hp.eta = {0.05};
  hp.gamma = 6.0;
  hp.lambda = 1.0;
  hp.alpha = {0.1};
  const ConvexityConstants cc{1.0, 1.0, false};
  const double muF = mu_tilde_f(1.0, 1.0), muFt = mu_tilde_F(1.0, 6.0, 1.0);
  const double k_ratio = std::log(1.0 - 0.01 * muFt / 2.0) / std::log(1.0 - 0.05 * (muF + 6.0) / 2.0);
  const double l_ratio = std::log(1.0 - 0.05 * (muF + 6.0) / 2.0) / std::log(1.0 - 0.1 * 1.0);
  for (int T : {1, 10, 200, 5000}) {
    const auto [K, L] = suggest_inner_iters(T, hp, cc, 1.0);
    CHECK(K == std::max(1, static_cast<int>(std::ceil(k_ratio * T - 1e-9))));
    CHECK(L == std::max(1, static_cast<int>(std::ceil(l_ratio * K - 1e-9))));
  }
  CHECK(suggest_inner_iters(0, hp, cc, 2.0) == std::pair<int, int>{1, 1});
  int prev_k = 0, prev_l = 0;
  for (double slack : {1.0, 1.5, 2.0, 4.0, 10.0}) {
    const auto [K, L] = suggest_inner_iters(300, hp, cc, slack);
    CHECK(K >= prev_k);
    CHECK(L >= prev_l);
    prev_k = K;
    prev_l = L;
  }
  auto too_big = hp;
  too_big.alpha = {1.5};
  CHECK_THROWS_AS(suggest_inner_iters(10, too_big, cc, 2.0), ConfigError);
}

TEST_CASE("rate factors") {
  const auto hp = strongly_convex_example();
  const auto r = strongly_convex_rate(hp, {1.0, 1.0, false});
  CHECK(r.stated == 1.0 - hp.beta);
  CHECK(r.derived == 1.0 - hp.beta * mu_tilde_F(2.5, 6.0, 1.0) / 2.0);
}

TEST_CASE("empirical constants of a quadratic are its curvature") {
  QuadraticSpec s;
  s.center = Eigen::VectorXd::Ones(4);
  s.curvature = 2.5;
  const QuadraticModel q(s);
  std::vector<Batch> batches(1);
  const auto cc = estimate_constants(q, batches, Eigen::VectorXd::Zero(4), 1.0, 1e-2, 100, 3);
  CHECK(cc.estimated);
  CHECK(cc.L_f == doctest::Approx(2.5).epsilon(1e-9));
  CHECK(cc.mu_f == doctest::Approx(2.5).epsilon(1e-9));
}

TEST_CASE("quadratic constants span the curvatures") {
  const auto q = oracle::make_quadratic(2, 2, 3, 5, 0.5, 3.0);
  const auto cc = quadratic_constants(q.federation());
  CHECK(cc.mu_f == *std::min_element(q.curvatures.begin(), q.curvatures.end()));
  CHECK(cc.L_f == *std::max_element(q.curvatures.begin(), q.curvatures.end()));
}
