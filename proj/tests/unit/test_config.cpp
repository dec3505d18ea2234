#include <doctest.h>

#include "permfl/config.hpp"
#include "permfl/error.hpp"
#include "permfl/runner.hpp"

using namespace permfl;

namespace {

std::string error_of(std::string_view text) {
  try {
    (void)parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("empty config gets documented defaults") {
  const auto c = parse_config("");
  CHECK(c.data.source == DataSource::Mnist);
  CHECK(c.data.subset == 2000);
  CHECK(c.data.n_devices == 40);
  CHECK(c.model.kind == ModelKind::Mclr);
  CHECK(c.model.l2 == 1e-4);
  CHECK(c.hyper.alpha == std::vector<double>{0.01});
  CHECK(c.hyper.eta == std::vector<double>{0.03});
  CHECK(c.hyper.beta == 0.1);
  CHECK(c.hyper.K == 10);
  CHECK(c.hyper.L == 20);
  CHECK(c.n_teams == 4);
  CHECK(c.bound_check == BoundCheckMode::Warn);
  CHECK(c.algorithm == Algorithm::PerMFL);
  CHECK(c.reanchor);
}

TEST_CASE("values, lists and comments parse") {
  const auto c = parse_config(R"(
# leading comment
[hyper]
beta = 0.3   # trailing comment
eta = 0.01, 0.02, 0.03, 0.04
T = 7
[run]
algorithm = fedavg
bound_check = enforce
)");
  CHECK(c.hyper.beta == 0.3);
  CHECK(c.hyper.eta == std::vector<double>{0.01, 0.02, 0.03, 0.04});
  CHECK(c.hyper.T == 7);
  CHECK(c.algorithm == Algorithm::FedAvg);
  CHECK(c.bound_check == BoundCheckMode::Enforce);
}

TEST_CASE("errors name the key and the constraint") {
  const auto e = error_of("[hyper]\nbeta = -1\n");
  CHECK(e.find("hyper.beta") != std::string::npos);
  CHECK(e.find("> 0") != std::string::npos);
}

TEST_CASE("every problem is reported, not just the first") {
  const auto e = error_of("[hyper]\nbeta = -1\ngamma = x\nbogus = 1\n[run]\nalgorithm = sgd\n");
  CHECK(e.find("hyper.beta") != std::string::npos);
  CHECK(e.find("hyper.gamma: expected a number") != std::string::npos);
  CHECK(e.find("hyper.bogus: unknown key") != std::string::npos);
  CHECK(e.find("run.algorithm") != std::string::npos);
}

TEST_CASE("inconsistent combinations are rejected") {
  CHECK_FALSE(error_of("[model]\nkind = quadratic\n").empty());
  CHECK_FALSE(error_of("[run]\nalgorithm = permfl-exact-prox\n").empty());
  CHECK_FALSE(error_of("[topology]\nn_teams = 50\n").empty());
  CHECK_FALSE(error_of("[participation]\ndevice_fraction = 1.5\n").empty());
  CHECK_FALSE(error_of("[hyper]\neta = 0.1, 0.2\n").empty());
}

TEST_CASE("config hash is stable and sensitive") {
  const std::string text = "[hyper]\nbeta = 0.2\n";
  CHECK(parse_config(text).hash() == parse_config(text).hash());
  CHECK(parse_config(text).hash().size() == 40);
  CHECK(parse_config(text).hash() == parse_config("[hyper]\n  beta=0.20\n# same\n").hash());
  CHECK(parse_config(text).hash() != parse_config("[hyper]\nbeta = 0.3\n").hash());
  // Output location and worker count do not change results, so not the hash either.
  CHECK(parse_config(text).hash() == parse_config(text + "[run]\nout = elsewhere\nworkers = 3\n").hash());
}

TEST_CASE("canonical text parses back to the same config") {
  const auto c = parse_config("[data]\nsource = quadratic\n[model]\nkind = quadratic\n[hyper]\nalpha = 0.125\n");
  CHECK(parse_config(c.canonical_text()).canonical_text() == c.canonical_text());
}

TEST_CASE("sweepable parameters") {
  auto c = parse_config("");
  set_parameter(c, "gamma", "8");
  CHECK(c.hyper.gamma == 8.0);
  set_parameter(c, "K", "12");
  CHECK(c.hyper.K == 12);
  set_parameter(c, "device_fraction", "0.2");
  CHECK(c.device_fraction == 0.2);
  CHECK_THROWS_AS(set_parameter(c, "seed", "3"), ConfigError);
  CHECK_THROWS_AS(set_parameter(c, "beta", "-1"), ConfigError);
  CHECK(sweep_label("beta", "0.10") == "0.1");
  CHECK(sweep_label("gamma", "2") == "2.0");
  CHECK(sweep_label("K", "10") == "10");
}
