#pragma once

// PM/GM evaluation and the whitespace-separated .dat tables used for plots.

#include <span>
#include <string>
#include <vector>

#include "permfl/models.hpp"

namespace permfl {

/// One device as seen by training and evaluation.
struct DeviceData {
  int id = 0;
  std::shared_ptr<const LossModel> model;
  Batch train;
  Batch val;
};

struct Evaluation {
  double accuracy = 0.0;  // NaN when the model has no classifier
  double loss = 0.0;
  double accuracy_weighted = 0.0;  // sample-weighted variants (PM only)
  double loss_weighted = 0.0;
};

struct MetricsRecord {
  int round = 0;
  bool has_accuracy = true;
  double pm_acc = 0.0;
  double gm_acc = 0.0;
  double pm_loss = 0.0;
  double gm_loss = 0.0;
  double pm_acc_weighted = 0.0;
  double pm_loss_weighted = 0.0;
  double wall_time = 0.0;
};

/// Unweighted mean over devices of validation accuracy/loss, each device
/// using its own parameters. `thetas[d]` belongs to `devices[d]`.
Evaluation evaluate_pm(std::span<const DeviceData> devices, std::span<const ParamVector> thetas,
                       std::size_t workers = 1);

/// Accuracy and mean per-sample loss of x on the pooled validation sets.
Evaluation evaluate_gm(const ParamVector& x, std::span<const DeviceData> devices,
                       std::size_t workers = 1);

// -- .dat tables -------------------------------------------------------------

/// Column "GR" is the integer round index; every other column is printed with
/// six digits after the decimal point.
struct DatTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  bool operator==(const DatTable&) const = default;
};

std::string format_dat(const DatTable& table);
DatTable parse_dat(const std::string& text);
void write_dat(const DatTable& table, const std::string& path);
DatTable read_dat(const std::string& path);

/// Table with columns GR, pm_acc, gm_acc, pm_loss, gm_loss, pm_acc_w, pm_loss_w
/// (accuracy columns omitted for loss-only models). Wall time is excluded.
DatTable metrics_table(std::span<const MetricsRecord> records);

}  // namespace permfl
