#pragma once

// Run configuration: a small INI-like grammar.
//
//   # comment
//   [section]
//   key = value
//
// Sections and keys (defaults in parentheses):
//   [data]          source (mnist) = mnist | synthetic | quadratic
//                   images, labels (data/mnist5k/...)  IDX paths, gzip allowed
//                   subset (2000)  n_devices (40)  classes_per_device (2)
//                   alpha_bar, beta_bar (0.5)  n_features (60)  n_classes (10)
//                   min_size (50)  max_size (500)          synthetic only
//                   dim (10)  curvature_min, curvature_max (1)  center_scale (1)
//                                                          quadratic only
//   [model]         kind (mclr) = mclr | mlp | quadratic   l2 (1e-4)
//                   hidden (64,32)                         two mlp widths
//   [hyper]         alpha (0.01)  eta (0.03)  lists allowed: "0.01,0.02"
//                   beta (0.1)  gamma (3)  lambda (0.5)  T (10)  K (10)  L (20)
//                   auto_inner (false): size K, L from the rate relations
//                   slack (2)
//   [topology]      n_teams (4)  formation (random) = random | worst | average
//   [participation] team_fraction (1)  device_fraction (1)
//   [run]           algorithm (permfl) = permfl | permfl-exact-prox | fedavg
//                   seed (1)  out (runs/default)  workers (1)
//                   bound_check (warn) = enforce | warn | off
//                   reanchor (true)  warm_start (false)  x0_scale (0)
//   [fedavg]        local_steps (0 = L*K)  step_size (0 = alpha)
//                   participation (0 = team_fraction * device_fraction)

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "permfl/engine.hpp"
#include "permfl/topology.hpp"

namespace permfl {

enum class DataSource { Mnist, Synthetic, Quadratic };
enum class ModelKind { Mclr, Mlp, Quadratic };
enum class TeamFormation { Random, Worst, Average };
enum class Algorithm { PerMFL, PerMFLExactProx, FedAvg };
enum class BoundCheckMode { Enforce, Warn, Off };

std::string_view to_string(DataSource v) noexcept;
std::string_view to_string(ModelKind v) noexcept;
std::string_view to_string(TeamFormation v) noexcept;
std::string_view to_string(Algorithm v) noexcept;
std::string_view to_string(BoundCheckMode v) noexcept;

struct DataConfig {
  DataSource source = DataSource::Mnist;
  std::string images = "data/mnist5k/train-images-idx3-ubyte.gz";
  std::string labels = "data/mnist5k/train-labels-idx1-ubyte.gz";
  int subset = 2000;
  int n_devices = 40;
  int classes_per_device = 2;
  double alpha_bar = 0.5;
  double beta_bar = 0.5;
  int n_features = 60;
  int n_classes = 10;
  int min_size = 50;
  int max_size = 500;
  int dim = 10;
  double curvature_min = 1.0;
  double curvature_max = 1.0;
  double center_scale = 1.0;
};

struct ModelConfig {
  ModelKind kind = ModelKind::Mclr;
  double l2 = 1e-4;
  std::vector<int> hidden{64, 32};
};

struct FedAvgOverrides {
  int local_steps = 0;
  double step_size = 0.0;
  double participation = 0.0;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  Hyperparams hyper;
  bool auto_inner = false;
  double slack = 2.0;
  int n_teams = 4;
  TeamFormation formation = TeamFormation::Random;
  double team_fraction = 1.0;
  double device_fraction = 1.0;
  Algorithm algorithm = Algorithm::PerMFL;
  std::uint64_t seed = 1;
  std::string out = "runs/default";
  std::size_t workers = 1;
  BoundCheckMode bound_check = BoundCheckMode::Warn;
  bool reanchor = true;
  bool warm_start = false;
  double x0_scale = 0.0;
  FedAvgOverrides fedavg;

  /// Every key in a fixed order. Excludes out and workers, which cannot change results.
  std::string canonical_text() const;
  /// SHA-1 of the canonical text.
  std::string hash() const;
  /// All consistency problems, empty when valid.
  std::vector<std::string> problems() const;
};

/// Parses and validates. Throws ConfigError listing every problem found,
/// one per line, each naming the offending key.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

/// Sets one sweepable parameter (beta, gamma, lambda, eta, alpha, K, L,
/// team_fraction, device_fraction) from its textual value.
void set_parameter(RunConfig& cfg, std::string_view name, std::string_view value);
bool is_sweepable(std::string_view name) noexcept;

}  // namespace permfl
