#include "permfl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "permfl/error.hpp"
#include "permfl/hash.hpp"

namespace permfl {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Errors thrown by value parsers; the caller prefixes the key.
struct BadValue {
  std::string message;
};

double to_double(std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) throw BadValue{"expected a number, got '" + std::string(v) + "'"};
  return out;
}

long long to_integer(std::string_view v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) throw BadValue{"expected an integer, got '" + std::string(v) + "'"};
  return out;
}

int to_int(std::string_view v) {
  const auto x = to_integer(v);
  if (x < -2147483647LL || x > 2147483647LL) throw BadValue{"integer out of range"};
  return static_cast<int>(x);
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw BadValue{"expected true or false, got '" + std::string(v) + "'"};
}

template <class T>
std::vector<T> to_list(std::string_view v, T (*one)(std::string_view)) {
  std::vector<T> out;
  while (true) {
    const auto comma = v.find(',');
    out.push_back(one(trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

template <class E>
E to_enum(std::string_view v, std::initializer_list<E> options) {
  std::string allowed;
  for (E e : options) {
    if (to_string(e) == v) return e;
    allowed += (allowed.empty() ? "" : " | ") + std::string(to_string(e));
  }
  throw BadValue{"expected one of " + allowed + ", got '" + std::string(v) + "'"};
}

std::string num(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) out += num(xs[i]);
    else out += std::to_string(xs[i]);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"data.source", [](RunConfig& c, std::string_view v) {
         c.data.source = to_enum(v, {DataSource::Mnist, DataSource::Synthetic, DataSource::Quadratic});
       }},
      {"data.images", [](RunConfig& c, std::string_view v) { c.data.images = std::string(v); }},
      {"data.labels", [](RunConfig& c, std::string_view v) { c.data.labels = std::string(v); }},
      {"data.subset", [](RunConfig& c, std::string_view v) { c.data.subset = to_int(v); }},
      {"data.n_devices", [](RunConfig& c, std::string_view v) { c.data.n_devices = to_int(v); }},
      {"data.classes_per_device", [](RunConfig& c, std::string_view v) { c.data.classes_per_device = to_int(v); }},
      {"data.alpha_bar", [](RunConfig& c, std::string_view v) { c.data.alpha_bar = to_double(v); }},
      {"data.beta_bar", [](RunConfig& c, std::string_view v) { c.data.beta_bar = to_double(v); }},
      {"data.n_features", [](RunConfig& c, std::string_view v) { c.data.n_features = to_int(v); }},
      {"data.n_classes", [](RunConfig& c, std::string_view v) { c.data.n_classes = to_int(v); }},
      {"data.min_size", [](RunConfig& c, std::string_view v) { c.data.min_size = to_int(v); }},
      {"data.max_size", [](RunConfig& c, std::string_view v) { c.data.max_size = to_int(v); }},
      {"data.dim", [](RunConfig& c, std::string_view v) { c.data.dim = to_int(v); }},
      {"data.curvature_min", [](RunConfig& c, std::string_view v) { c.data.curvature_min = to_double(v); }},
      {"data.curvature_max", [](RunConfig& c, std::string_view v) { c.data.curvature_max = to_double(v); }},
      {"data.center_scale", [](RunConfig& c, std::string_view v) { c.data.center_scale = to_double(v); }},
      {"model.kind", [](RunConfig& c, std::string_view v) {
         c.model.kind = to_enum(v, {ModelKind::Mclr, ModelKind::Mlp, ModelKind::Quadratic});
       }},
      {"model.l2", [](RunConfig& c, std::string_view v) { c.model.l2 = to_double(v); }},
      {"model.hidden", [](RunConfig& c, std::string_view v) { c.model.hidden = to_list<int>(v, to_int); }},
      {"hyper.alpha", [](RunConfig& c, std::string_view v) { c.hyper.alpha = to_list<double>(v, to_double); }},
      {"hyper.eta", [](RunConfig& c, std::string_view v) { c.hyper.eta = to_list<double>(v, to_double); }},
      {"hyper.beta", [](RunConfig& c, std::string_view v) { c.hyper.beta = to_double(v); }},
      {"hyper.gamma", [](RunConfig& c, std::string_view v) { c.hyper.gamma = to_double(v); }},
      {"hyper.lambda", [](RunConfig& c, std::string_view v) { c.hyper.lambda = to_double(v); }},
      {"hyper.T", [](RunConfig& c, std::string_view v) { c.hyper.T = to_int(v); }},
      {"hyper.K", [](RunConfig& c, std::string_view v) { c.hyper.K = to_int(v); }},
      {"hyper.L", [](RunConfig& c, std::string_view v) { c.hyper.L = to_int(v); }},
      {"hyper.auto_inner", [](RunConfig& c, std::string_view v) { c.auto_inner = to_bool(v); }},
      {"hyper.slack", [](RunConfig& c, std::string_view v) { c.slack = to_double(v); }},
      {"topology.n_teams", [](RunConfig& c, std::string_view v) { c.n_teams = to_int(v); }},
      {"topology.formation", [](RunConfig& c, std::string_view v) {
         c.formation = to_enum(v, {TeamFormation::Random, TeamFormation::Worst, TeamFormation::Average});
       }},
      {"participation.team_fraction", [](RunConfig& c, std::string_view v) { c.team_fraction = to_double(v); }},
      {"participation.device_fraction", [](RunConfig& c, std::string_view v) { c.device_fraction = to_double(v); }},
      {"run.algorithm", [](RunConfig& c, std::string_view v) {
         c.algorithm = to_enum(v, {Algorithm::PerMFL, Algorithm::PerMFLExactProx, Algorithm::FedAvg});
       }},
      {"run.seed", [](RunConfig& c, std::string_view v) {
         const auto s = to_integer(v);
         if (s < 0) throw BadValue{"must be non-negative"};
         c.seed = static_cast<std::uint64_t>(s);
       }},
      {"run.out", [](RunConfig& c, std::string_view v) { c.out = std::string(v); }},
      {"run.workers", [](RunConfig& c, std::string_view v) {
         const int w = to_int(v);
         if (w < 1) throw BadValue{"must be at least 1"};
         c.workers = static_cast<std::size_t>(w);
       }},
      {"run.bound_check", [](RunConfig& c, std::string_view v) {
         c.bound_check = to_enum(v, {BoundCheckMode::Enforce, BoundCheckMode::Warn, BoundCheckMode::Off});
       }},
      {"run.reanchor", [](RunConfig& c, std::string_view v) { c.reanchor = to_bool(v); }},
      {"run.warm_start", [](RunConfig& c, std::string_view v) { c.warm_start = to_bool(v); }},
      {"run.x0_scale", [](RunConfig& c, std::string_view v) { c.x0_scale = to_double(v); }},
      {"fedavg.local_steps", [](RunConfig& c, std::string_view v) { c.fedavg.local_steps = to_int(v); }},
      {"fedavg.step_size", [](RunConfig& c, std::string_view v) { c.fedavg.step_size = to_double(v); }},
      {"fedavg.participation", [](RunConfig& c, std::string_view v) { c.fedavg.participation = to_double(v); }},
  };
  return table;
}

const std::map<std::string, std::string, std::less<>> kSweepKeys = {
    {"beta", "hyper.beta"},   {"gamma", "hyper.gamma"}, {"lambda", "hyper.lambda"},
    {"eta", "hyper.eta"},     {"alpha", "hyper.alpha"}, {"K", "hyper.K"},
    {"L", "hyper.L"},         {"team_fraction", "participation.team_fraction"},
    {"device_fraction", "participation.device_fraction"},
};

}  // namespace

std::string_view to_string(DataSource v) noexcept {
  switch (v) {
    case DataSource::Mnist: return "mnist";
    case DataSource::Synthetic: return "synthetic";
    case DataSource::Quadratic: return "quadratic";
  }
  return "?";
}

std::string_view to_string(ModelKind v) noexcept {
  switch (v) {
    case ModelKind::Mclr: return "mclr";
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Quadratic: return "quadratic";
  }
  return "?";
}

std::string_view to_string(TeamFormation v) noexcept {
  switch (v) {
    case TeamFormation::Random: return "random";
    case TeamFormation::Worst: return "worst";
    case TeamFormation::Average: return "average";
  }
  return "?";
}

std::string_view to_string(Algorithm v) noexcept {
  switch (v) {
    case Algorithm::PerMFL: return "permfl";
    case Algorithm::PerMFLExactProx: return "permfl-exact-prox";
    case Algorithm::FedAvg: return "fedavg";
  }
  return "?";
}

std::string_view to_string(BoundCheckMode v) noexcept {
  switch (v) {
    case BoundCheckMode::Enforce: return "enforce";
    case BoundCheckMode::Warn: return "warn";
    case BoundCheckMode::Off: return "off";
  }
  return "?";
}

std::string RunConfig::canonical_text() const {
  std::ostringstream o;
  o << "[data]\n"
    << "source=" << to_string(data.source) << '\n'
    << "images=" << data.images << '\n'
    << "labels=" << data.labels << '\n'
    << "subset=" << data.subset << '\n'
    << "n_devices=" << data.n_devices << '\n'
    << "classes_per_device=" << data.classes_per_device << '\n'
    << "alpha_bar=" << num(data.alpha_bar) << '\n'
    << "beta_bar=" << num(data.beta_bar) << '\n'
    << "n_features=" << data.n_features << '\n'
    << "n_classes=" << data.n_classes << '\n'
    << "min_size=" << data.min_size << '\n'
    << "max_size=" << data.max_size << '\n'
    << "dim=" << data.dim << '\n'
    << "curvature_min=" << num(data.curvature_min) << '\n'
    << "curvature_max=" << num(data.curvature_max) << '\n'
    << "center_scale=" << num(data.center_scale) << '\n'
    << "[model]\n"
    << "kind=" << to_string(model.kind) << '\n'
    << "l2=" << num(model.l2) << '\n'
    << "hidden=" << join(model.hidden) << '\n'
    << "[hyper]\n"
    << "alpha=" << join(hyper.alpha) << '\n'
    << "eta=" << join(hyper.eta) << '\n'
    << "beta=" << num(hyper.beta) << '\n'
    << "gamma=" << num(hyper.gamma) << '\n'
    << "lambda=" << num(hyper.lambda) << '\n'
    << "T=" << hyper.T << '\n'
    << "K=" << hyper.K << '\n'
    << "L=" << hyper.L << '\n'
    << "auto_inner=" << (auto_inner ? "true" : "false") << '\n'
    << "slack=" << num(slack) << '\n'
    << "[topology]\n"
    << "n_teams=" << n_teams << '\n'
    << "formation=" << to_string(formation) << '\n'
    << "[participation]\n"
    << "team_fraction=" << num(team_fraction) << '\n'
    << "device_fraction=" << num(device_fraction) << '\n'
    << "[run]\n"
    << "algorithm=" << to_string(algorithm) << '\n'
    << "seed=" << seed << '\n'
    << "bound_check=" << to_string(bound_check) << '\n'
    << "reanchor=" << (reanchor ? "true" : "false") << '\n'
    << "warm_start=" << (warm_start ? "true" : "false") << '\n'
    << "x0_scale=" << num(x0_scale) << '\n'
    << "[fedavg]\n"
    << "local_steps=" << fedavg.local_steps << '\n'
    << "step_size=" << num(fedavg.step_size) << '\n'
    << "participation=" << num(fedavg.participation) << '\n';
  return o.str();
}

std::string RunConfig::hash() const { return sha1_hex(canonical_text()); }

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> p;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) p.push_back(msg);
  };
  for (double a : hyper.alpha) need(a > 0.0, "hyper.alpha: must be > 0");
  for (double e : hyper.eta) need(e > 0.0, "hyper.eta: must be > 0");
  need(hyper.beta > 0.0, "hyper.beta: must be > 0");
  need(hyper.gamma > 0.0, "hyper.gamma: must be > 0");
  need(hyper.lambda > 0.0, "hyper.lambda: must be > 0");
  need(hyper.T >= 1, "hyper.T: must be >= 1");
  need(hyper.K >= 1, "hyper.K: must be >= 1");
  need(hyper.L >= 1, "hyper.L: must be >= 1");
  need(slack >= 1.0, "hyper.slack: must be >= 1");
  need(n_teams >= 1, "topology.n_teams: must be >= 1");
  need(team_fraction > 0.0 && team_fraction <= 1.0, "participation.team_fraction: must be in (0, 1]");
  need(device_fraction > 0.0 && device_fraction <= 1.0, "participation.device_fraction: must be in (0, 1]");
  need(x0_scale >= 0.0, "run.x0_scale: must be >= 0");
  need(model.l2 >= 0.0, "model.l2: must be >= 0");
  need(data.n_devices >= 1, "data.n_devices: must be >= 1");
  need(data.n_devices >= n_teams, "topology.n_teams: more teams than data.n_devices");
  need(hyper.alpha.size() == 1 || hyper.alpha.size() == static_cast<std::size_t>(data.n_devices),
       "hyper.alpha: needs one value or one per device");
  need(hyper.eta.size() == 1 || hyper.eta.size() == static_cast<std::size_t>(n_teams),
       "hyper.eta: needs one value or one per team");
  need(fedavg.local_steps >= 0, "fedavg.local_steps: must be >= 0");
  need(fedavg.step_size >= 0.0, "fedavg.step_size: must be >= 0");
  need(fedavg.participation >= 0.0 && fedavg.participation <= 1.0, "fedavg.participation: must be in [0, 1]");

  const bool quad_data = data.source == DataSource::Quadratic;
  const bool quad_model = model.kind == ModelKind::Quadratic;
  need(quad_data == quad_model, "model.kind: quadratic models go with data.source = quadratic and only with it");
  need(algorithm != Algorithm::PerMFLExactProx || quad_model,
       "run.algorithm: permfl-exact-prox needs model.kind = quadratic");
  need(formation == TeamFormation::Random || !quad_data, "topology.formation: label teaming needs labeled data");
  if (quad_data) {
    need(data.dim >= 1, "data.dim: must be >= 1");
    need(data.curvature_min > 0.0 && data.curvature_max >= data.curvature_min,
         "data.curvature_min/max: need 0 < min <= max");
    need(data.center_scale >= 0.0, "data.center_scale: must be >= 0");
  } else {
    need(data.classes_per_device >= 1, "data.classes_per_device: must be >= 1");
  }
  if (data.source == DataSource::Mnist) need(data.subset >= data.n_devices, "data.subset: fewer samples than devices");
  if (data.source == DataSource::Synthetic) {
    need(data.n_features >= 1, "data.n_features: must be >= 1");
    need(data.n_classes >= 2, "data.n_classes: must be >= 2");
    need(data.min_size >= 4 && data.max_size >= data.min_size, "data.min_size/max_size: need 4 <= min <= max");
    need(data.alpha_bar >= 0.0 && data.beta_bar >= 0.0, "data.alpha_bar/beta_bar: must be >= 0");
  }
  if (model.kind == ModelKind::Mlp) {
    need(model.hidden.size() == 2, "model.hidden: needs exactly two widths");
    for (int h : model.hidden) need(h >= 1, "model.hidden: widths must be >= 1");
  }
  return p;
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::vector<std::string> errors;
  std::string section;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    const auto hash = line.find('#');
    line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') {
        errors.push_back(where + "unterminated section header");
        continue;
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      errors.push_back(where + "expected key = value");
      continue;
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const std::string full = section + "." + std::string(key);
    const auto it = setters().find(full);
    if (it == setters().end()) {
      errors.push_back(where + full + ": unknown key");
      continue;
    }
    try {
      it->second(cfg, value);
    } catch (const BadValue& e) {
      errors.push_back(where + full + ": " + e.message);
    }
  }
  for (auto& p : cfg.problems()) errors.push_back(std::move(p));
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

bool is_sweepable(std::string_view name) noexcept { return kSweepKeys.find(name) != kSweepKeys.end(); }

void set_parameter(RunConfig& cfg, std::string_view name, std::string_view value) {
  const auto it = kSweepKeys.find(name);
  if (it == kSweepKeys.end())
    throw ConfigError("cannot sweep '" + std::string(name) +
                      "'; choose beta, gamma, lambda, eta, alpha, K, L, team_fraction or device_fraction");
  try {
    setters().at(it->second)(cfg, trim(value));
  } catch (const BadValue& e) {
    throw ConfigError(it->second + ": " + e.message);
  }
  const auto p = cfg.problems();
  if (!p.empty()) {
    std::string msg = "invalid sweep value " + std::string(name) + "=" + std::string(value) + ":";
    for (const auto& e : p) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

}  // namespace permfl
