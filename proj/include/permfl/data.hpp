#pragma once

// Dataset ingestion (IDX), non-IID partitioning, a synthetic heterogeneous
// generator and per-device train/validation splitting.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "permfl/models.hpp"

namespace permfl {

struct LabeledDataset {
  FeatureMatrix features;
  std::vector<int> labels;
  int n_classes = 0;
  std::string provenance;  // mnist | fmnist | emnist10 | synthetic

  std::size_t size() const noexcept { return labels.size(); }
  void validate() const;
};

/// Per-device sample index lists into one LabeledDataset.
struct Partition {
  std::vector<std::vector<std::size_t>> devices;
  int classes_per_device = 0;

  std::size_t n_devices() const noexcept { return devices.size(); }
  bool operator==(const Partition&) const = default;
};

// -- IDX ---------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 2051;
inline constexpr std::uint32_t kIdxLabelsMagic = 2049;

/// Raw unsigned-byte IDX tensor.
struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  bool operator==(const IdxArray&) const = default;
};

/// Reads an IDX file; gzip-compressed input is detected and inflated.
/// Throws FormatError (with byte offset) on a bad header or truncation.
IdxArray read_idx(const std::string& path);
/// Writes an IDX file, gzip-compressed when the path ends in ".gz".
void write_idx(const std::string& path, const IdxArray& array);

/// Images as rows of pixels scaled to [0, 1].
FeatureMatrix load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);

LabeledDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                                std::string provenance);

/// Label-stratified random subset of `n` samples (largest-remainder quotas).
LabeledDataset stratified_subset(const LabeledDataset& ds, std::size_t n, std::uint64_t seed);

// -- partitioning ------------------------------------------------------------

/// Non-IID split. Classes are dealt round-robin over a shuffled class list so
/// every device owns `classes_per_device` classes. Each class's samples go
/// first as an equal base quota to every device owning it, the rest to
/// uniformly random owners. With `label_blocks` > 1 the classes and devices are
/// cut into that many contiguous blocks and dealt within blocks, so each
/// device's classes stay inside one block. Classes owned by no device are left
/// unassigned.
Partition partition_non_iid(std::span<const int> labels, int n_devices, int classes_per_device,
                            std::uint64_t seed, int label_blocks = 1);

/// Sorted distinct labels held by each device.
std::vector<std::vector<int>> device_label_sets(const Partition& partition,
                                                std::span<const int> labels);

/// Per-device, label-stratified 3:1 split. Validation gets round(n/4)
/// samples per device, allotted across labels by largest remainder.
std::pair<Partition, Partition> split_train_val(const Partition& partition,
                                                std::span<const int> labels, std::uint64_t seed);

Batch make_batch(const LabeledDataset& ds, std::span<const std::size_t> indices);

// -- synthetic ---------------------------------------------------------------

struct SyntheticSpec {
  double alpha_bar = 0.5;
  double beta_bar = 0.5;
  int n_devices = 40;
  int n_features = 60;
  int n_classes = 10;
  int min_size = 50;
  int max_size = 500;
  int classes_per_device = 2;
  std::uint64_t seed = 1;
};

struct SyntheticData {
  LabeledDataset dataset;
  Partition partition;
  std::vector<double> rule_means;     // u_k per device
  std::vector<double> feature_means;  // B_k per device
};

/// Per device k: u_k ~ N(0, alpha_bar), W_k, b_k ~ N(u_k, 1); B_k ~ N(0, beta_bar),
/// v_k ~ N(B_k, 1); x ~ N(v_k, diag(j^-1.2)); y = argmax(W_k x + b_k). Device
/// sizes follow a rank power law from max_size down to min_size, and each
/// device keeps only samples of its `classes_per_device` most frequent labels.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

}  // namespace permfl
