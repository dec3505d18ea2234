// permfl: run, sweep, validate and fetch-data entry points.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "permfl/config.hpp"
#include "permfl/error.hpp"
#include "permfl/runner.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  bool enforce = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "configuration file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed (overrides [run] seed)");
  cmd->add_option("--out", c.out, "output directory (overrides [run] out)");
  cmd->add_option("--workers", c.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--enforce-bounds", c.enforce, "abort when the bound check fails");
}

permfl::RunConfig load(const Common& c) {
  auto cfg = permfl::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.out) cfg.out = *c.out;
  if (c.workers) cfg.workers = static_cast<std::size_t>(*c.workers);
  if (c.enforce) cfg.bound_check = permfl::BoundCheckMode::Enforce;
  return cfg;
}

std::string base_dir(const Common& c) {
  const auto parent = std::filesystem::path(c.config).parent_path();
  return parent.empty() ? "." : parent.string();
}

void summarize(const permfl::RunOutcome& o) {
  std::cout << "wrote " << o.out_dir;
  if (!o.metrics.empty()) {
    const auto& m = o.metrics.back();
    if (m.has_accuracy) std::cout << "  final pm_acc=" << m.pm_acc << " gm_acc=" << m.gm_acc;
    std::cout << " pm_loss=" << m.pm_loss << " gm_loss=" << m.gm_loss;
  }
  if (o.has_certificate) std::cout << "  certificate=" << (o.certificate_holds ? "holds" : "violated");
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized multi-tier federated learning simulator"};
  app.require_subcommand(1);

  Common run_opts;
  int repeats = 1;
  auto* run = app.add_subcommand("run", "run one configuration");
  add_common(run, run_opts);
  run->add_option("--repeats", repeats, "consecutive seeds to run; writes repeats.dat with mean/std")
      ->check(CLI::PositiveNumber);

  Common sweep_opts;
  std::string parameter;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "one run per parameter value");
  add_common(sweep, sweep_opts);
  sweep->add_option("--param", parameter, "beta gamma lambda eta alpha K L team_fraction device_fraction")
      ->required();
  sweep->add_option("--values", values, "values to sweep")->required();

  Common validate_opts;
  auto* validate = app.add_subcommand("validate", "check bounds and suggest inner iteration counts");
  add_common(validate, validate_opts);

  std::string url, fetch_out = "data";
  auto* fetch = app.add_subcommand("fetch-data", "download (and gunzip) an IDX file");
  fetch->add_option("--url", url, "http(s) or file URL")->required();
  fetch->add_option("--out", fetch_out, "destination directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) {
      const auto cfg = load(run_opts);
      if (repeats > 1) {
        for (const auto& o : permfl::execute_repeats(cfg, repeats, base_dir(run_opts), std::cerr)) summarize(o);
      } else {
        summarize(permfl::execute_run(cfg, base_dir(run_opts), std::cerr));
      }
    } else if (sweep->parsed()) {
      const auto cfg = load(sweep_opts);
      for (const auto& o : permfl::execute_sweep(cfg, parameter, values, base_dir(sweep_opts), std::cerr))
        summarize(o);
    } else if (validate->parsed()) {
      const auto cfg = load(validate_opts);
      const auto built = permfl::build_federation(cfg, base_dir(validate_opts));
      const auto report = permfl::bound_report(cfg, built);
      std::cout << "config_hash=" << cfg.hash() << '\n' << report.to_text();
      std::cout << "constants: mu_f=" << built.constants.mu_f << " L_f=" << built.constants.L_f
                << (built.constants.estimated ? " (estimated)" : "") << '\n';
      if (built.strongly_convex) {
        try {
          const auto [K, L] = permfl::suggest_inner_iters(cfg.hyper.T, cfg.hyper, built.constants, cfg.slack);
          std::cout << "suggested K=" << K << " L=" << L << " (slack " << cfg.slack << ")\n";
        } catch (const permfl::ConfigError& e) {
          std::cout << "no inner-iteration suggestion: " << e.what() << '\n';
        }
      }
      if (cfg.bound_check == permfl::BoundCheckMode::Enforce && !report.certified()) return 2;
    } else if (fetch->parsed()) {
      for (const auto& p : permfl::fetch_data(url, fetch_out)) std::cout << "wrote " << p << '\n';
    }
  } catch (const permfl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return permfl::exit_code(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
