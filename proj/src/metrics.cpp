#include "permfl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "permfl/error.hpp"
#include "permfl/parallel.hpp"

namespace permfl {
namespace {

struct DeviceScore {
  double loss = 0.0;
  double correct = 0.0;
  double samples = 0.0;
};

DeviceScore score_device(const DeviceData& dev, const ParamVector& theta) {
  const auto& model = *dev.model;
  if (!model.has_classifier()) return {model.loss(theta, dev.val), 0.0, 1.0};
  if (dev.val.empty())
    throw EvaluationError("device " + std::to_string(dev.id) + " has an empty validation set");
  DeviceScore s;
  s.samples = static_cast<double>(dev.val.size());
  s.loss = model.loss(theta, dev.val);
  const auto pred = model.predict(theta, dev.val.features());
  const auto labels = dev.val.labels();
  for (std::size_t i = 0; i < pred.size(); ++i) s.correct += pred[i] == labels[i] ? 1.0 : 0.0;
  return s;
}

bool all_classifiers(std::span<const DeviceData> devices) {
  for (const auto& d : devices)
    if (!d.model->has_classifier()) return false;
  return true;
}

}  // namespace

Evaluation evaluate_pm(std::span<const DeviceData> devices, std::span<const ParamVector> thetas,
                       std::size_t workers) {
  if (devices.empty()) throw EvaluationError("no devices to evaluate");
  if (thetas.size() != devices.size()) throw EvaluationError("one parameter vector per device required");
  std::vector<DeviceScore> scores(devices.size());
  parallel_for(devices.size(), workers, [&](std::size_t d) { scores[d] = score_device(devices[d], thetas[d]); });

  const bool acc = all_classifiers(devices);
  Evaluation e;
  double n_total = 0.0, correct_total = 0.0, loss_total = 0.0;
  for (const auto& s : scores) {
    e.loss += s.loss;
    if (acc) e.accuracy += s.correct / s.samples;
    n_total += s.samples;
    correct_total += s.correct;
    loss_total += s.loss * s.samples;
  }
  const auto n = static_cast<double>(scores.size());
  e.loss /= n;
  e.loss_weighted = loss_total / n_total;
  if (acc) {
    e.accuracy /= n;
    e.accuracy_weighted = correct_total / n_total;
  } else {
    e.accuracy = e.accuracy_weighted = std::numeric_limits<double>::quiet_NaN();
  }
  return e;
}

Evaluation evaluate_gm(const ParamVector& x, std::span<const DeviceData> devices, std::size_t workers) {
  if (devices.empty()) throw EvaluationError("no devices to evaluate");
  std::vector<DeviceScore> scores(devices.size());
  parallel_for(devices.size(), workers, [&](std::size_t d) { scores[d] = score_device(devices[d], x); });
  double n_total = 0.0, correct_total = 0.0, loss_total = 0.0;
  for (const auto& s : scores) {
    n_total += s.samples;
    correct_total += s.correct;
    loss_total += s.loss * s.samples;
  }
  Evaluation e;
  e.loss = e.loss_weighted = loss_total / n_total;
  e.accuracy = e.accuracy_weighted = all_classifiers(devices)
                                         ? correct_total / n_total
                                         : std::numeric_limits<double>::quiet_NaN();
  return e;
}

// -- .dat --------------------------------------------------------------------

std::string format_dat(const DatTable& table) {
  std::set<std::string> seen;
  for (const auto& c : table.columns) {
    if (c.empty() || c.find_first_of(" \t\r\n") != std::string::npos)
      throw ConfigError("dat column name '" + c + "' is empty or contains whitespace");
    if (!seen.insert(c).second) throw ConfigError("duplicate dat column '" + c + "'");
  }
  std::string out;
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    if (i) out += ' ';
    out += table.columns[i];
  }
  out += '\n';
  char buf[64];
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) throw ConfigError("dat row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ' ';
      if (table.columns[i] == "GR")
        std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(std::llround(row[i])));
      else
        std::snprintf(buf, sizeof buf, "%.6f", row[i]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

DatTable parse_dat(const std::string& text) {
  DatTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("dat text has no header");
  {
    std::istringstream hs(line);
    std::string c;
    while (hs >> c) t.columns.push_back(c);
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        if (tok == "nan" || tok == "-nan") {
          row.push_back(std::numeric_limits<double>::quiet_NaN());
          continue;
        }
        throw IoError("dat line " + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
    }
    if (row.size() != t.columns.size())
      throw IoError("dat line " + std::to_string(lineno) + " has " + std::to_string(row.size()) +
                    " fields, header has " + std::to_string(t.columns.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_dat(const DatTable& table, const std::string& path) {
  const auto text = format_dat(table);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

DatTable read_dat(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dat(buf.str());
}

DatTable metrics_table(std::span<const MetricsRecord> records) {
  const bool acc = records.empty() || records.front().has_accuracy;
  DatTable t;
  t.columns = acc ? std::vector<std::string>{"GR", "pm_acc", "gm_acc", "pm_loss", "gm_loss", "pm_acc_w", "pm_loss_w"}
                  : std::vector<std::string>{"GR", "pm_loss", "gm_loss", "pm_loss_w"};
  for (const auto& r : records) {
    if (acc)
      t.rows.push_back({static_cast<double>(r.round), r.pm_acc, r.gm_acc, r.pm_loss, r.gm_loss,
                        r.pm_acc_weighted, r.pm_loss_weighted});
    else
      t.rows.push_back({static_cast<double>(r.round), r.pm_loss, r.gm_loss, r.pm_loss_weighted});
  }
  return t;
}

}  // namespace permfl
