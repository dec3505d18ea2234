#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "permfl/engine.hpp"
#include "permfl/envelope.hpp"
#include "permfl/error.hpp"
#include "permfl/validate.hpp"

using namespace permfl;

namespace {

ParamVector vec(std::initializer_list<double> v) {
  ParamVector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

QuadraticModel quad(std::vector<double> c, double a) {
  QuadraticSpec s;
  s.center = Eigen::Map<Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  s.curvature = a;
  return QuadraticModel(s);
}

EngineOptions quiet() {
  EngineOptions o;
  o.evaluate = false;
  return o;
}

// Strongly convex region for unit curvature: gamma > 2 lambda > 4.
Hyperparams certified(int T, int K, int L) {
  Hyperparams hp;
  hp.lambda = 2.5;
  hp.gamma = 6.0;
  hp.beta = mu_tilde_F(2.5, 6.0, 1.0) / (4.0 * 6.0);
  hp.eta = {1.0 / (2.0 * (2.5 + 6.0))};
  hp.alpha = {1.0 / (1.0 + 2.5)};
  hp.T = T;
  hp.K = K;
  hp.L = L;
  return hp;
}

// Two separable clusters in 2-D, the same on every device.
Federation homogeneous_classifier(int devices, int teams) {
  auto model = std::make_shared<MclrModel>(MclrSpec{2, 2, 1e-3});
  FeatureMatrix x(8, 2);
  x << 2, 2, 2.5, 1.5, 1.5, 2.5, 3, 3, -2, -2, -2.5, -1.5, -1.5, -2.5, -3, -3;
  std::vector<int> y{0, 0, 0, 0, 1, 1, 1, 1};
  Federation fed;
  for (int d = 0; d < devices; ++d) fed.devices.push_back({d, model, Batch(x, y, 2), Batch(x, y, 2)});
  fed.topology.teams.resize(static_cast<std::size_t>(teams));
  for (int d = 0; d < devices; ++d) fed.topology.teams[static_cast<std::size_t>(d % teams)].push_back(d);
  return fed;
}

}  // namespace

TEST_CASE("device_step") {
  const auto f = quad({0.0}, 1.0);
  const Batch none;
  CHECK(device_step(vec({1.0}), vec({0.0}), 0.1, 0.5, f, none)(0) == doctest::Approx(0.85));
  CHECK(device_step(vec({0.0}), vec({0.0}), 0.3, 0.5, f, none)(0) == 0.0);
  CHECK(device_step(vec({1.7}), vec({-2.0}), 0.0, 0.5, f, none)(0) == 1.7);
}

TEST_CASE("device_solve") {
  const auto f = quad({1.0, -3.0}, 2.0);
  const Batch none;
  const auto w = vec({4.0, 4.0});
  CHECK(device_solve(w, 0.1, 0.5, 0, f, none) == w);
  CHECK(device_solve(w, 0.1, 0.5, 1, f, none) == device_step(w, w, 0.1, 0.5, f, none));
  const auto exact = closed_form_prox(f.spec(), 0.5, w);
  CHECK((device_solve(w, 0.2, 0.5, 2000, f, none) - exact).norm() < 1e-6);
}

TEST_CASE("device_solve equals stepping one step at a time, bit for bit") {
  // Step size 1/(a + lambda) lands on the prox in one step and then round-off
  // cycles, so the shortcut for repeating iterates is exercised.
  const auto q = oracle::make_quadratic(10, 4, 5, 20240601);
  const auto fed = q.federation();
  const auto w = ParamVector::Constant(10, 3.0).eval();
  for (const auto& dev : fed.devices) {
    for (double alpha : {1.0 / 3.5, 0.05}) {
      ParamVector stepped = w;
      for (int l = 1; l <= 41; ++l) {
        stepped = device_step(stepped, w, alpha, 2.5, *dev.model, dev.train);
        if (l == 1 || l == 2 || l == 3 || l == 40 || l == 41)
          CHECK(device_solve(w, alpha, 2.5, l, *dev.model, dev.train) == stepped);
      }
    }
  }
}

TEST_CASE("aggregation is an id-ordered mean") {
  const auto a = vec({1.0}), b = vec({3.0});
  std::vector<IdParams> m{{0, &a}, {1, &b}};
  CHECK(team_aggregate(m)(0) == 2.0);
  std::vector<IdParams> one{{5, &a}};
  CHECK(team_aggregate(one) == a);

  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd(0.0, 1e3);
  std::vector<ParamVector> ps;
  for (int i = 0; i < 7; ++i) ps.push_back(vec({nd(gen), nd(gen)}));
  std::vector<IdParams> fwd, rev;
  for (int i = 0; i < 7; ++i) fwd.push_back({i, &ps[static_cast<std::size_t>(i)]});
  for (int i = 6; i >= 0; --i) rev.push_back({i, &ps[static_cast<std::size_t>(i)]});
  const auto x = team_aggregate(fwd), y = team_aggregate(rev);
  CHECK(std::memcmp(x.data(), y.data(), sizeof(double) * 2) == 0);

  const auto z = vec({0.0}), t = vec({2.0});
  std::vector<IdParams> g{{0, &z}, {1, &t}};
  CHECK(global_aggregate(g)(0) == 1.0);
  std::vector<IdParams> same{{0, &t}, {1, &t}};
  CHECK(global_aggregate(same) == t);
}

TEST_CASE("team_step") {
  CHECK(team_step(vec({1.0}), vec({0.0}), vec({1.0}), 0.1, 0.5, 1.5)(0) == doctest::Approx(0.85));
  const auto c = vec({2.0, -1.0});
  CHECK((team_step(c, c, c, 0.2, 0.5, 1.5) - c).norm() < 1e-15);
  CHECK(team_step(vec({3.0}), vec({0.0}), vec({1.0}), 0.0, 0.5, 1.5)(0) == 3.0);
}

TEST_CASE("global_step") {
  CHECK(global_step(vec({1.0}), vec({1.0}), 0.3, 2.0)(0) == 1.0);
  CHECK(global_step(vec({0.0}), vec({1.0}), 0.2, 1.5)(0) == doctest::Approx(0.3));
  CHECK(global_step(vec({4.0}), vec({1.0}), 0.0, 1.5)(0) == 4.0);
}

TEST_CASE("single device at its minimizer stays put") {
  Federation fed;
  fed.devices.push_back({0, std::make_shared<QuadraticModel>(quad({1.0, 2.0}, 1.0)), {}, {}});
  fed.topology.teams = {{0}};
  Hyperparams hp;
  hp.T = hp.K = hp.L = 1;
  const auto res = run_permfl(fed, hp, vec({1.0, 2.0}), quiet());
  CHECK(res.x == vec({1.0, 2.0}));
  CHECK(res.thetas[0] == vec({1.0, 2.0}));
  CHECK(res.team_models[0] == vec({1.0, 2.0}));
}

TEST_CASE("run_permfl reproduces the literal nested loops") {
  const auto q = oracle::make_quadratic(3, 2, 3, 17, 0.5, 2.0);
  const auto fed = q.federation();
  Hyperparams hp;
  hp.alpha = {0.1};
  hp.eta = {0.05};
  hp.beta = 0.2;
  hp.gamma = 3.0;
  hp.lambda = 1.0;
  hp.T = 6;
  hp.K = 4;
  hp.L = 5;
  auto opts = quiet();
  opts.record_x_history = true;
  const auto res = run_permfl(fed, hp, vec({1.0, -1.0, 0.5}), opts);
  const auto ref = oracle::naive_permfl_quadratic(q, {1.0, -1.0, 0.5}, 0.1, 0.05, 0.2, 1.0, 3.0, 6, 4, 5);
  REQUIRE(res.x_history.size() == ref.size());
  for (std::size_t t = 0; t < ref.size(); ++t) CHECK(oracle::dist(oracle::to_vec(res.x_history[t]), ref[t]) < 1e-12);
}

TEST_CASE("quadratic minimizer agrees with the joint linear solve") {
  const auto q = oracle::make_quadratic(4, 3, 2, 5, 0.5, 3.0);
  const auto fed = q.federation();
  const auto nested = quadratic_global_minimizer(fed, 1.3, 4.0);
  CHECK(oracle::dist(oracle::to_vec(nested), oracle::joint_quadratic_minimizer(q, 1.3, 4.0)) < 1e-10);
}

TEST_CASE("certified quadratic run moves strictly toward the minimizer") {
  const auto q = oracle::make_quadratic(10, 4, 5, 3);
  const auto fed = q.federation();
  const auto hp = certified(40, 30, 30);
  auto opts = quiet();
  opts.record_x_history = true;
  const auto res = run_permfl(fed, hp, ParamVector::Zero(10), opts);
  const auto star = oracle::joint_quadratic_minimizer(q, hp.lambda, hp.gamma);
  double prev = oracle::dist(oracle::to_vec(res.x_history[0]), star);
  for (std::size_t t = 1; t < res.x_history.size(); ++t) {
    const double cur = oracle::dist(oracle::to_vec(res.x_history[t]), star);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("personalized objective does not increase in the certified run") {
  const auto q = oracle::make_quadratic(5, 3, 4, 21);
  const auto fed = q.federation();
  auto hp = certified(1, 30, 30);
  auto x = ParamVector::Zero(5).eval();
  std::vector<ParamVector> w(3, x), th(12, x);
  double prev = personalized_objective(fed, x, w, th, hp.lambda, hp.gamma);
  for (int t = 0; t < 25; ++t) {
    const auto res = run_permfl(fed, hp, x, quiet());
    x = res.x;
    // Pair x^{t+1} with the blocks that produced it.
    const double cur = personalized_objective(fed, x, res.team_models, res.thetas, hp.lambda, hp.gamma);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
}

TEST_CASE("exact prox matches long inner loops") {
  const auto q = oracle::make_quadratic(5, 2, 2, 8);
  const auto fed = q.federation();
  auto hp = certified(3, 2000, 2000);
  const auto inexact = run_permfl(fed, hp, ParamVector::Zero(5), quiet());
  const auto exact = exact_prox_run(fed, hp, ParamVector::Zero(5), quiet());
  CHECK((inexact.x - exact.x).norm() < 1e-6);
}

TEST_CASE("beta = 1/gamma makes x the team average") {
  const auto q = oracle::make_quadratic(3, 3, 2, 4);
  const auto fed = q.federation();
  Hyperparams hp;
  hp.gamma = 2.0;
  hp.beta = 0.5;
  hp.lambda = 0.5;
  hp.T = 1;
  const auto res = exact_prox_run(fed, hp, vec({1.0, 2.0, 3.0}), quiet());
  std::vector<IdParams> teams;
  for (int i = 0; i < 3; ++i) teams.push_back({i, &res.team_models[static_cast<std::size_t>(i)]});
  CHECK((res.x - global_aggregate(teams)).norm() == 0.0);
}

TEST_CASE("one device in one team follows the scalar recursion") {
  Federation fed;
  fed.devices.push_back({0, std::make_shared<QuadraticModel>(quad({4.0}, 1.0)), {}, {}});
  fed.topology.teams = {{0}};
  Hyperparams hp;
  hp.lambda = 1.0;
  hp.gamma = 3.0;
  hp.beta = 0.1;
  hp.T = 3;
  auto opts = quiet();
  opts.record_x_history = true;
  const auto res = exact_prox_run(fed, hp, vec({0.0}), opts);
  // Team envelope curvature 1*1/(1+1) = 0.5; w = (0.5*4 + 3x)/3.5; x' = 0.7x + 0.3w.
  double x = 0.0;
  for (int t = 1; t <= 3; ++t) {
    const double w = (2.0 + 3.0 * x) / 3.5;
    x = 0.7 * x + 0.3 * w;
    CHECK(res.x_history[static_cast<std::size_t>(t)](0) == doctest::Approx(x).epsilon(1e-14));
  }
}

TEST_CASE("exact prox rejects non-quadratic models") {
  auto fed = homogeneous_classifier(2, 1);
  CHECK_THROWS_AS(exact_prox_run(fed, Hyperparams{}, ParamVector::Zero(fed.dim()), quiet()), UnsupportedError);
}

TEST_CASE("worker count does not change a single bit") {
  const auto fed = homogeneous_classifier(6, 2);
  Hyperparams hp;
  hp.T = 4;
  hp.K = 3;
  hp.L = 4;
  auto one = quiet(), four = quiet();
  one.evaluate = four.evaluate = true;
  four.workers = 4;
  one.participation = four.participation = ParticipationPolicy::from_fractions(0.5, 0.5, 99);
  const auto a = run_permfl(fed, hp, ParamVector::Zero(fed.dim()), one);
  const auto b = run_permfl(fed, hp, ParamVector::Zero(fed.dim()), four);
  CHECK(std::memcmp(a.x.data(), b.x.data(), sizeof(double) * static_cast<std::size_t>(a.x.size())) == 0);
  for (std::size_t d = 0; d < a.thetas.size(); ++d) CHECK(a.thetas[d] == b.thetas[d]);
  for (std::size_t t = 0; t < a.metrics.size(); ++t) {
    CHECK(a.metrics[t].pm_loss == b.metrics[t].pm_loss);
    CHECK(a.metrics[t].gm_acc == b.metrics[t].gm_acc);
  }
}

TEST_CASE("consensus at a shared stationary point is invariant") {
  Federation fed;
  for (int d = 0; d < 4; ++d) fed.devices.push_back({d, std::make_shared<QuadraticModel>(quad({0.5, -0.5}, 1.0 + d)), {}, {}});
  fed.topology.teams = {{0, 1}, {2, 3}};
  Hyperparams hp;
  hp.T = 1;
  const auto res = run_permfl(fed, hp, vec({0.5, -0.5}), quiet());
  CHECK(res.x == vec({0.5, -0.5}));
  for (const auto& w : res.team_models) CHECK(w == vec({0.5, -0.5}));
}

TEST_CASE("homogeneous data collapses personalization") {
  const auto fed = homogeneous_classifier(4, 2);
  Hyperparams hp;
  hp.alpha = {0.1};
  hp.eta = {0.05};
  hp.T = 30;
  EngineOptions opts;
  const auto res = run_permfl(fed, hp, ParamVector::Zero(fed.dim()), opts);
  CHECK(res.metrics.back().pm_acc == res.metrics.back().gm_acc);
  CHECK(res.metrics.back().pm_acc == 1.0);
}

TEST_CASE("idle devices keep stale parameters") {
  const auto q = oracle::make_quadratic(2, 2, 3, 6);
  const auto fed = q.federation();
  Hyperparams hp;
  hp.T = 1;
  auto opts = quiet();
  opts.participation = ParticipationPolicy::from_fractions(0.5, 1.0, 3);
  const auto sample = sample_round(opts.participation, fed.topology, 0);
  REQUIRE(sample.teams.size() == 1);
  const auto x0 = vec({0.25, 0.75});
  const auto res = run_permfl(fed, hp, x0, opts);
  const int idle = 1 - sample.teams[0];
  CHECK(res.team_models[static_cast<std::size_t>(idle)] == x0);
  for (int d : fed.topology.teams[static_cast<std::size_t>(idle)]) CHECK(res.thetas[static_cast<std::size_t>(d)] == x0);
}

TEST_CASE("once-only anchoring keeps team models across rounds") {
  const auto q = oracle::make_quadratic(2, 2, 2, 6);
  const auto fed = q.federation();
  Hyperparams hp;
  hp.T = 2;
  auto a = quiet(), b = quiet();
  b.reanchor_each_round = false;
  const auto ra = run_permfl(fed, hp, ParamVector::Zero(2), a);
  const auto rb = run_permfl(fed, hp, ParamVector::Zero(2), b);
  CHECK((ra.x - rb.x).norm() > 0.0);
  hp.T = 1;
  CHECK(run_permfl(fed, hp, ParamVector::Zero(2), a).x == run_permfl(fed, hp, ParamVector::Zero(2), b).x);
}

TEST_CASE("divergence reports where it happened") {
  const auto q = oracle::make_quadratic(2, 1, 2, 6, 10.0, 10.0);
  const auto fed = q.federation();
  Hyperparams hp;
  hp.alpha = {5.0};
  hp.L = 50;
  try {
    run_permfl(fed, hp, ParamVector::Zero(2), quiet());
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("t=0") != std::string::npos);
    CHECK(msg.find("device=") != std::string::npos);
  }
}

TEST_CASE("bad hyperparameters and federations are configuration errors") {
  const auto q = oracle::make_quadratic(2, 2, 2, 6);
  const auto fed = q.federation();
  Hyperparams hp;
  hp.beta = -1.0;
  CHECK_THROWS_AS(run_permfl(fed, hp, ParamVector::Zero(2), quiet()), ConfigError);
  hp = Hyperparams{};
  hp.eta = {0.1, 0.2, 0.3};
  CHECK_THROWS_AS(run_permfl(fed, hp, ParamVector::Zero(2), quiet()), ConfigError);
  CHECK_THROWS_AS(run_permfl(fed, Hyperparams{}, ParamVector::Zero(3), quiet()), ConfigError);
}
