#pragma once

// Orchestration behind the CLI: builds a federation from a RunConfig, checks
// bounds, runs the selected algorithm and writes the output directory.
//
// Output directory layout:
//   metrics.dat      per-round PM/GM accuracy and loss
//   wall_time.dat    per-round elapsed seconds (the only non-reproducible file)
//   certificate.dat  quadratic runs: ||x^t - x*||^2 against the rate bounds
//   bounds.txt       the bound report
//   topology.txt     team membership
//   config.txt       canonical configuration
//   manifest.txt     key=value: config hash, seed, input content hashes, ...

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "permfl/config.hpp"
#include "permfl/data.hpp"
#include "permfl/engine.hpp"
#include "permfl/metrics.hpp"
#include "permfl/validate.hpp"

namespace permfl {

struct BuiltFederation {
  Federation fed;
  ParamVector x0;
  /// Files read to build the data, for content hashing.
  std::vector<std::string> inputs;
  /// Constants used for the bound check; L_f only in the non-convex regime.
  ConvexityConstants constants;
  bool strongly_convex = true;
};

/// Relative data paths are resolved against `base_dir` when not found as given.
BuiltFederation build_federation(const RunConfig& cfg, const std::string& base_dir = ".");

BoundReport bound_report(const RunConfig& cfg, const BuiltFederation& built);

/// Applies auto_inner sizing when requested. Returns the hyperparameters to run with.
Hyperparams effective_hyperparams(const RunConfig& cfg, const BuiltFederation& built);

struct RunOutcome {
  std::string out_dir;
  BoundReport report;
  Hyperparams hyper;
  std::vector<MetricsRecord> metrics;
  ParamVector x;
  bool has_certificate = false;
  bool certificate_holds = false;
};

/// Runs one configuration and writes its output directory. In enforce mode a
/// failing bound check throws ConfigError carrying the report text; in warn
/// mode the report goes to `log`.
RunOutcome execute_run(const RunConfig& cfg, const std::string& base_dir, std::ostream& log);

/// Python-repr style label for a sweep value: "0.1", "2.0", "10" for K and L.
std::string sweep_label(const std::string& parameter, const std::string& value);

/// One run per value into <out>/<parameter>_<label>/ plus combined
/// <out>/<parameter>_loss.dat (and _acc.dat for classifiers) with columns
/// p<parameter>_<label> (PM) and g<parameter>_<label> (GM).
std::vector<RunOutcome> execute_sweep(const RunConfig& cfg, const std::string& parameter,
                                      const std::vector<std::string>& values, const std::string& base_dir,
                                      std::ostream& log);

/// `repeats` runs with seeds seed, seed+1, ... into <out>/seed_<s>/ plus
/// <out>/repeats.dat holding per-round mean and std of the PM/GM metrics.
std::vector<RunOutcome> execute_repeats(const RunConfig& cfg, int repeats, const std::string& base_dir,
                                        std::ostream& log);

/// Downloads `url` (http, https or file) into `out_dir`. Gzip payloads are also
/// written decompressed; IDX payloads are validated. Returns written paths.
std::vector<std::string> fetch_data(const std::string& url, const std::string& out_dir);

}  // namespace permfl
