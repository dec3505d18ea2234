#include "permfl/runner.hpp"

#include <curl/curl.h>
#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "permfl/baselines.hpp"
#include "permfl/error.hpp"
#include "permfl/hash.hpp"
#include "permfl/rng.hpp"

namespace fs = std::filesystem;

namespace permfl {
namespace {

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (fs::path(path).is_absolute() || fs::exists(path)) return path;
  const auto joined = fs::path(base_dir) / path;
  return fs::exists(joined) ? joined.string() : path;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<DeviceData> labeled_devices(const LabeledDataset& ds, const Partition& part, std::uint64_t seed,
                                        const std::shared_ptr<const LossModel>& model) {
  const auto [train, val] = split_train_val(part, ds.labels, derive_seed(seed, "split"));
  std::vector<DeviceData> devices(part.n_devices());
  for (std::size_t d = 0; d < part.n_devices(); ++d) {
    devices[d].id = static_cast<int>(d);
    devices[d].model = model;
    devices[d].train = make_batch(ds, train.devices[d]);
    devices[d].val = make_batch(ds, val.devices[d]);
  }
  return devices;
}

std::shared_ptr<const LossModel> classifier(const RunConfig& cfg, int n_features, int n_classes) {
  if (cfg.model.kind == ModelKind::Mclr)
    return std::make_shared<MclrModel>(MclrSpec{n_features, n_classes, cfg.model.l2});
  MlpSpec spec;
  spec.widths = {n_features, cfg.model.hidden[0], cfg.model.hidden[1], n_classes};
  spec.l2_strength = cfg.model.l2;
  return std::make_shared<MlpModel>(spec);
}

Topology make_topology(const RunConfig& cfg, const Partition* part, std::span<const int> labels, int n_classes) {
  if (cfg.formation == TeamFormation::Random) {
    std::vector<int> ids(static_cast<std::size_t>(cfg.data.n_devices));
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    return form_teams_random(ids, cfg.n_teams, derive_seed(cfg.seed, "teams"));
  }
  const auto mode = cfg.formation == TeamFormation::Worst ? LabelTeaming::Worst : LabelTeaming::Average;
  return form_teams_by_label(*part, labels, n_classes, cfg.n_teams, mode);
}

// Upper bound on the softmax-regression smoothness: the logit Hessian has
// eigenvalues at most 1/2, so L <= mean ||[x, 1]||^2 / 2 + l2.
double mclr_smoothness(const Federation& fed, double l2) {
  double worst = 0.0;
  for (const auto& dev : fed.devices) {
    const auto& x = dev.train.features();
    if (x.rows() == 0) continue;
    const double mean_sq = (x.rowwise().squaredNorm().array() + 1.0).mean();
    worst = std::max(worst, 0.5 * mean_sq);
  }
  return worst + l2;
}

std::string python_float(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, p);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

DatTable certificate_table(const RunResult& res, const ParamVector& x_star, const Hyperparams& hp,
                           const ConvexityConstants& cc, bool& holds) {
  const auto rate = strongly_convex_rate(hp, cc);
  const double d0 = (res.x_history.front() - x_star).squaredNorm();
  DatTable t{{"GR", "dist_sq", "bound", "bound_derived", "holds"}, {}};
  holds = true;
  for (std::size_t i = 0; i < res.x_history.size(); ++i) {
    const double d = (res.x_history[i] - x_star).squaredNorm();
    const double b = 2.0 * std::pow(rate.stated, static_cast<double>(i)) * d0;
    const double bd = 2.0 * std::pow(rate.derived, static_cast<double>(i)) * d0;
    const bool ok = d <= b;
    holds = holds && ok;
    t.rows.push_back({static_cast<double>(i), d, b, bd, ok ? 1.0 : 0.0});
  }
  return t;
}

size_t curl_sink(char* data, size_t size, size_t n, void* user) {
  static_cast<std::string*>(user)->append(data, size * n);
  return size * n;
}

std::string gunzip(const std::string& bytes) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw IoError("zlib init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::string out;
  char buf[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("corrupt gzip stream", zs.total_in);
    }
    out.append(buf, sizeof buf - zs.avail_out);
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw FormatError("truncated gzip stream", zs.total_in);
    }
  }
  inflateEnd(&zs);
  return out;
}

}  // namespace

BuiltFederation build_federation(const RunConfig& cfg, const std::string& base_dir) {
  BuiltFederation b;
  switch (cfg.data.source) {
    case DataSource::Quadratic: {
      const auto d = static_cast<Eigen::Index>(cfg.data.dim);
      b.fed.devices.resize(static_cast<std::size_t>(cfg.data.n_devices));
      for (int i = 0; i < cfg.data.n_devices; ++i) {
        Rng rng(cfg.seed, "quadratic-device", {static_cast<std::uint64_t>(i)});
        QuadraticSpec q;
        q.center = ParamVector(d);
        for (Eigen::Index j = 0; j < d; ++j) q.center(j) = cfg.data.center_scale * rng.normal();
        q.curvature = cfg.data.curvature_min + (cfg.data.curvature_max - cfg.data.curvature_min) * rng.uniform();
        auto& dev = b.fed.devices[static_cast<std::size_t>(i)];
        dev.id = i;
        dev.model = std::make_shared<QuadraticModel>(std::move(q));
      }
      b.fed.topology = make_topology(cfg, nullptr, {}, 0);
      b.constants = quadratic_constants(b.fed);
      break;
    }
    case DataSource::Mnist:
    case DataSource::Synthetic: {
      LabeledDataset ds;
      Partition part;
      if (cfg.data.source == DataSource::Mnist) {
        const auto images = resolve(cfg.data.images, base_dir);
        const auto labels = resolve(cfg.data.labels, base_dir);
        b.inputs = {images, labels};
        const auto full = load_idx_dataset(images, labels, "mnist");
        ds = static_cast<std::size_t>(cfg.data.subset) >= full.size()
                 ? full
                 : stratified_subset(full, static_cast<std::size_t>(cfg.data.subset), derive_seed(cfg.seed, "subset"));
        const int blocks = cfg.formation == TeamFormation::Worst ? cfg.n_teams : 1;
        part = partition_non_iid(ds.labels, cfg.data.n_devices, cfg.data.classes_per_device,
                                 derive_seed(cfg.seed, "partition"), blocks);
      } else {
        SyntheticSpec spec;
        spec.alpha_bar = cfg.data.alpha_bar;
        spec.beta_bar = cfg.data.beta_bar;
        spec.n_devices = cfg.data.n_devices;
        spec.n_features = cfg.data.n_features;
        spec.n_classes = cfg.data.n_classes;
        spec.min_size = cfg.data.min_size;
        spec.max_size = cfg.data.max_size;
        spec.classes_per_device = cfg.data.classes_per_device;
        spec.seed = derive_seed(cfg.seed, "synthetic");
        auto syn = gen_synthetic(spec);
        ds = std::move(syn.dataset);
        part = std::move(syn.partition);
      }
      auto model = classifier(cfg, static_cast<int>(ds.features.cols()), ds.n_classes);
      b.fed.devices = labeled_devices(ds, part, cfg.seed, model);
      b.fed.topology = make_topology(cfg, &part, ds.labels, ds.n_classes);
      if (cfg.model.kind == ModelKind::Mclr && cfg.model.l2 > 0.0) {
        b.constants = {cfg.model.l2, mclr_smoothness(b.fed, cfg.model.l2), false};
      } else {
        b.strongly_convex = false;
      }
      break;
    }
  }
  b.fed.validate();

  const auto dim = b.fed.dim();
  if (cfg.x0_scale > 0.0) {
    Rng rng(cfg.seed, "x0");
    b.x0 = ParamVector(dim);
    for (Eigen::Index i = 0; i < dim; ++i) b.x0(i) = cfg.x0_scale * rng.normal();
  } else if (const auto* mlp = dynamic_cast<const MlpModel*>(b.fed.devices.front().model.get())) {
    b.x0 = mlp->initial_params(derive_seed(cfg.seed, "x0"));
  } else {
    b.x0 = ParamVector::Zero(dim);
  }

  if (!b.strongly_convex) {
    // Empirical smoothness around the start point over a handful of devices.
    std::vector<Batch> batches;
    for (std::size_t i = 0; i < b.fed.devices.size() && batches.size() < 5; ++i)
      if (!b.fed.devices[i].train.empty()) batches.push_back(b.fed.devices[i].train);
    const auto& model = *b.fed.devices.front().model;
    b.constants = estimate_constants(model, batches, b.x0, 0.05, 1e-3, 20, derive_seed(cfg.seed, "constants"));
  }
  return b;
}

BoundReport bound_report(const RunConfig& cfg, const BuiltFederation& built) {
  const auto hp = effective_hyperparams(cfg, built);
  auto r = built.strongly_convex ? check_strongly_convex(hp, built.constants)
                                 : check_nonconvex(hp, built.constants.L_f);
  r.estimated_constants = built.constants.estimated;
  return r;
}

Hyperparams effective_hyperparams(const RunConfig& cfg, const BuiltFederation& built) {
  Hyperparams hp = cfg.hyper;
  if (cfg.auto_inner) {
    if (!built.strongly_convex) throw ConfigError("hyper.auto_inner: needs a strongly convex model");
    std::tie(hp.K, hp.L) = suggest_inner_iters(hp.T, hp, built.constants, cfg.slack);
  }
  return hp;
}

RunOutcome execute_run(const RunConfig& cfg, const std::string& base_dir, std::ostream& log) {
  const auto built = build_federation(cfg, base_dir);
  RunOutcome out;
  out.hyper = effective_hyperparams(cfg, built);
  out.report = bound_report(cfg, built);
  if (cfg.bound_check == BoundCheckMode::Enforce && !out.report.certified())
    throw ConfigError("bound check failed in enforce mode\n" + out.report.to_text());
  if (cfg.bound_check == BoundCheckMode::Warn && !out.report.certified()) log << out.report.to_text();

  const fs::path dir(cfg.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.out + ": " + ec.message());
  out.out_dir = dir.string();

  EngineOptions opts;
  opts.participation = ParticipationPolicy::from_fractions(cfg.team_fraction, cfg.device_fraction,
                                                           derive_seed(cfg.seed, "participation"));
  opts.workers = cfg.workers;
  opts.reanchor_each_round = cfg.reanchor;
  opts.warm_start_devices = cfg.warm_start;
  const bool quadratic = cfg.data.source == DataSource::Quadratic;
  opts.record_x_history = quadratic;

  RunResult res;
  if (cfg.algorithm == Algorithm::FedAvg) {
    FedAvgConfig fa;
    fa.rounds = out.hyper.T;
    fa.local_steps = cfg.fedavg.local_steps > 0 ? cfg.fedavg.local_steps : out.hyper.L * out.hyper.K;
    fa.step_size = cfg.fedavg.step_size > 0.0 ? cfg.fedavg.step_size : out.hyper.alpha.front();
    fa.participation = cfg.fedavg.participation > 0.0 ? cfg.fedavg.participation
                                                      : cfg.team_fraction * cfg.device_fraction;
    fa.seed = derive_seed(cfg.seed, "fedavg");
    fa.workers = cfg.workers;
    auto fr = run_fedavg(fa, built.fed.devices, built.x0);
    res.x = std::move(fr.x);
    res.metrics = std::move(fr.metrics);
  } else if (cfg.algorithm == Algorithm::PerMFLExactProx) {
    res = exact_prox_run(built.fed, out.hyper, built.x0, opts);
  } else {
    res = run_permfl(built.fed, out.hyper, built.x0, opts);
  }
  out.metrics = res.metrics;
  out.x = res.x;

  write_dat(metrics_table(res.metrics), (dir / "metrics.dat").string());
  DatTable timing{{"GR", "wall_time"}, {}};
  for (const auto& m : res.metrics) timing.rows.push_back({static_cast<double>(m.round), m.wall_time});
  write_dat(timing, (dir / "wall_time.dat").string());
  write_text(dir / "bounds.txt", out.report.to_text());
  write_text(dir / "topology.txt", built.fed.topology.to_text());
  write_text(dir / "config.txt", cfg.canonical_text());

  if (quadratic && cfg.algorithm != Algorithm::FedAvg) {
    const auto x_star = quadratic_global_minimizer(built.fed, out.hyper.lambda, out.hyper.gamma);
    bool holds = false;
    write_dat(certificate_table(res, x_star, out.hyper, built.constants, holds),
              (dir / "certificate.dat").string());
    out.has_certificate = true;
    out.certificate_holds = holds;
  }

  std::ostringstream m;
  m << "config_hash=" << cfg.hash() << '\n'
    << "seed=" << cfg.seed << '\n'
    << "algorithm=" << to_string(cfg.algorithm) << '\n'
    << "T=" << out.hyper.T << '\n'
    << "K=" << out.hyper.K << '\n'
    << "L=" << out.hyper.L << '\n';
  for (std::size_t i = 0; i < built.inputs.size(); ++i)
    m << "input." << i << ".path=" << built.inputs[i] << '\n'
      << "input." << i << ".blob=" << git_blob_hash_file(built.inputs[i]) << '\n';
  m << out.report.to_key_values();
  if (out.has_certificate) m << "certificate.holds=" << (out.certificate_holds ? 1 : 0) << '\n';
  write_text(dir / "manifest.txt", m.str());
  return out;
}

std::string sweep_label(const std::string& parameter, const std::string& value) {
  if (parameter == "K" || parameter == "L") return value;
  const auto list_start = value.find(',');
  if (list_start != std::string::npos) {
    std::string out;
    std::string_view rest = value;
    while (true) {
      const auto c = rest.find(',');
      if (!out.empty()) out += '-';
      out += sweep_label(parameter, std::string(rest.substr(0, c)));
      if (c == std::string_view::npos) break;
      rest.remove_prefix(c + 1);
    }
    return out;
  }
  double v = 0.0;
  const auto b = value.find_first_not_of(" \t");
  const auto e = value.find_last_not_of(" \t");
  if (b == std::string::npos) throw ConfigError("empty sweep value");
  const auto [p, ec] = std::from_chars(value.data() + b, value.data() + e + 1, v);
  if (ec != std::errc() || p != value.data() + e + 1)
    throw ConfigError("sweep value '" + value + "' is not a number");
  return python_float(v);
}

std::vector<RunOutcome> execute_sweep(const RunConfig& cfg, const std::string& parameter,
                                      const std::vector<std::string>& values, const std::string& base_dir,
                                      std::ostream& log) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (!is_sweepable(parameter)) {
    RunConfig probe = cfg;
    set_parameter(probe, parameter, values.front());  // throws with the allowed list
  }
  std::vector<RunOutcome> outs;
  std::vector<std::string> labels;
  for (const auto& v : values) {
    RunConfig point = cfg;
    set_parameter(point, parameter, v);
    labels.push_back(sweep_label(parameter, v));
    point.out = (fs::path(cfg.out) / (parameter + "_" + labels.back())).string();
    log << "sweep " << parameter << "=" << labels.back() << " -> " << point.out << '\n';
    outs.push_back(execute_run(point, base_dir, log));
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (labels[i] == labels[j]) throw ConfigError("duplicate sweep value " + labels[i]);

  const bool acc = !outs.front().metrics.empty() && outs.front().metrics.front().has_accuracy;
  auto combined = [&](bool accuracy) {
    DatTable t;
    t.columns.push_back("GR");
    for (const auto& l : labels) {
      t.columns.push_back("p" + parameter + "_" + l);
      t.columns.push_back("g" + parameter + "_" + l);
    }
    std::size_t rows = outs.front().metrics.size();
    for (const auto& o : outs) rows = std::min(rows, o.metrics.size());
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<double> row{static_cast<double>(outs.front().metrics[r].round)};
      for (const auto& o : outs) {
        const auto& m = o.metrics[r];
        row.push_back(accuracy ? m.pm_acc : m.pm_loss);
        row.push_back(accuracy ? m.gm_acc : m.gm_loss);
      }
      t.rows.push_back(std::move(row));
    }
    return t;
  };
  fs::create_directories(cfg.out);
  write_dat(combined(false), (fs::path(cfg.out) / (parameter + "_loss.dat")).string());
  if (acc) write_dat(combined(true), (fs::path(cfg.out) / (parameter + "_acc.dat")).string());
  return outs;
}

std::vector<RunOutcome> execute_repeats(const RunConfig& cfg, int repeats, const std::string& base_dir,
                                        std::ostream& log) {
  if (repeats < 1) throw ConfigError("repeats must be at least 1");
  std::vector<RunOutcome> outs;
  for (int r = 0; r < repeats; ++r) {
    RunConfig point = cfg;
    point.seed = cfg.seed + static_cast<std::uint64_t>(r);
    point.out = (fs::path(cfg.out) / ("seed_" + std::to_string(point.seed))).string();
    log << "repeat seed=" << point.seed << " -> " << point.out << '\n';
    outs.push_back(execute_run(point, base_dir, log));
  }
  const bool acc = !outs.front().metrics.empty() && outs.front().metrics.front().has_accuracy;
  DatTable t;
  t.columns = {"GR"};
  const std::vector<std::string> names = acc ? std::vector<std::string>{"pm_acc", "gm_acc", "pm_loss", "gm_loss"}
                                             : std::vector<std::string>{"pm_loss", "gm_loss"};
  for (const auto& n : names) {
    t.columns.push_back(n + "_mean");
    t.columns.push_back(n + "_std");
  }
  std::size_t rows = outs.front().metrics.size();
  for (const auto& o : outs) rows = std::min(rows, o.metrics.size());
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> row{static_cast<double>(outs.front().metrics[r].round)};
    for (const auto& n : names) {
      std::vector<double> xs;
      for (const auto& o : outs) {
        const auto& m = o.metrics[r];
        xs.push_back(n == "pm_acc" ? m.pm_acc : n == "gm_acc" ? m.gm_acc : n == "pm_loss" ? m.pm_loss : m.gm_loss);
      }
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      var /= static_cast<double>(xs.size());
      row.push_back(mean);
      row.push_back(std::sqrt(var));
    }
    t.rows.push_back(std::move(row));
  }
  write_dat(t, (fs::path(cfg.out) / "repeats.dat").string());
  return outs;
}

std::vector<std::string> fetch_data(const std::string& url, const std::string& out_dir) {
  CURL* curl = curl_easy_init();
  if (!curl) throw IoError("libcurl initialization failed");
  std::string body;
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, curl_sink);
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, &body);
  const CURLcode rc = curl_easy_perform(curl);
  curl_easy_cleanup(curl);
  if (rc != CURLE_OK) throw IoError("download of " + url + " failed: " + curl_easy_strerror(rc));

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  std::string name = url.substr(url.find_last_of('/') + 1);
  if (const auto q = name.find('?'); q != std::string::npos) name.resize(q);
  if (name.empty()) name = "download";

  std::vector<std::string> written;
  const auto raw_path = fs::path(out_dir) / name;
  write_text(raw_path, body);
  written.push_back(raw_path.string());

  fs::path idx_path = raw_path;
  if (body.size() >= 2 && static_cast<unsigned char>(body[0]) == 0x1f && static_cast<unsigned char>(body[1]) == 0x8b) {
    const auto plain = gunzip(body);
    idx_path = fs::path(out_dir) / (raw_path.extension() == ".gz" ? raw_path.stem() : raw_path.filename().concat(".raw"));
    write_text(idx_path, plain);
    written.push_back(idx_path.string());
  }
  read_idx(idx_path.string());  // throws FormatError on anything but well-formed IDX
  return written;
}

}  // namespace permfl
