#include "permfl/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "permfl/error.hpp"
#include "permfl/rng.hpp"

namespace permfl {
namespace {

std::vector<std::uint8_t> read_all_bytes(const std::string& path) {
  // gzread passes uncompressed files through unchanged.
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes;
  std::vector<std::uint8_t> chunk(1 << 16);
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      int errnum = 0;
      const std::string msg = gzerror(f, &errnum);
      gzclose(f);
      throw FormatError("cannot decompress " + path + ": " + msg, bytes.size());
    }
    if (n == 0) break;
    bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return bytes;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Splits `total` into integer parts proportional to `weights` (largest
// remainder, ties to the lower index).
std::vector<std::size_t> apportion(std::size_t total, std::span<const std::size_t> weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> parts(weights.size(), 0);
  if (sum <= 0.0) return parts;
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * static_cast<double>(weights[i]) / sum;
    parts[i] = static_cast<std::size_t>(std::floor(exact));
    given += parts[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; given < total && r < rem.size(); ++r, ++given) ++parts[rem[r].second];
  return parts;
}

std::map<int, std::vector<std::size_t>> group_by_label(std::span<const std::size_t> indices,
                                                       std::span<const int> labels) {
  std::map<int, std::vector<std::size_t>> groups;
  for (auto i : indices) groups[labels[i]].push_back(i);
  return groups;
}

}  // namespace

void LabeledDataset::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw ConfigError("dataset rows and labels disagree");
  for (int l : labels)
    if (l < 0 || l >= n_classes) throw ConfigError("dataset label out of range");
}

// -- IDX ---------------------------------------------------------------------

IdxArray read_idx(const std::string& path) {
  const auto bytes = read_all_bytes(path);
  if (bytes.size() < 4) throw FormatError(path + ": truncated IDX header", bytes.size());
  if (bytes[0] != 0 || bytes[1] != 0) throw FormatError(path + ": bad IDX magic", 0);
  if (bytes[2] != 0x08) throw FormatError(path + ": only unsigned-byte IDX data is supported", 2);
  IdxArray out;
  out.magic = read_be32(bytes, 0);
  const std::size_t ndims = bytes[3];
  if (ndims == 0) throw FormatError(path + ": IDX with zero dimensions", 3);
  std::size_t off = 4;
  std::size_t count = 1;
  for (std::size_t k = 0; k < ndims; ++k, off += 4) {
    if (off + 4 > bytes.size()) throw FormatError(path + ": truncated IDX dimensions", bytes.size());
    out.dims.push_back(read_be32(bytes, off));
    count *= out.dims.back();
  }
  if (bytes.size() < off + count)
    throw FormatError(path + ": truncated IDX payload, expected " + std::to_string(count) + " bytes",
                      bytes.size());
  if (bytes.size() > off + count) throw FormatError(path + ": trailing bytes after IDX payload", off + count);
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.end());
  return out;
}

void write_idx(const std::string& path, const IdxArray& array) {
  std::size_t count = 1;
  for (auto d : array.dims) count *= d;
  if (count != array.data.size()) throw ConfigError("IDX dims do not match payload size");
  if (array.dims.size() != (array.magic & 0xffu) || (array.magic >> 8) != 0x08u)
    throw ConfigError("IDX magic does not encode unsigned bytes with the given rank");

  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * array.dims.size() + array.data.size());
  put_be32(out, array.magic);
  for (auto d : array.dims) put_be32(out, d);
  out.insert(out.end(), array.data.begin(), array.data.end());

  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb9");
    if (!f) throw IoError("cannot write " + path);
    const int n = gzwrite(f, out.data(), static_cast<unsigned>(out.size()));
    if (gzclose(f) != Z_OK || n != static_cast<int>(out.size())) throw IoError("failed writing " + path);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing " + path);
}

FeatureMatrix load_idx_images(const std::string& path) {
  const auto arr = read_idx(path);
  if (arr.magic != kIdxImagesMagic)
    throw FormatError(path + ": expected image magic 2051, found " + std::to_string(arr.magic), 0);
  const Eigen::Index rows = arr.dims[0];
  const Eigen::Index cols = static_cast<Eigen::Index>(arr.dims[1]) * arr.dims[2];
  FeatureMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = arr.data[static_cast<std::size_t>(i)] / 255.0;
  return m;
}

std::vector<int> load_idx_labels(const std::string& path) {
  const auto arr = read_idx(path);
  if (arr.magic != kIdxLabelsMagic)
    throw FormatError(path + ": expected label magic 2049, found " + std::to_string(arr.magic), 0);
  return {arr.data.begin(), arr.data.end()};
}

LabeledDataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                                std::string provenance) {
  LabeledDataset ds;
  ds.features = load_idx_images(images_path);
  ds.labels = load_idx_labels(labels_path);
  if (static_cast<std::size_t>(ds.features.rows()) != ds.labels.size())
    throw IoError(images_path + " and " + labels_path + " hold different sample counts");
  ds.n_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.provenance = std::move(provenance);
  return ds;
}

LabeledDataset stratified_subset(const LabeledDataset& ds, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n > ds.size())
    throw ConfigError("subset size " + std::to_string(n) + " outside [1, " + std::to_string(ds.size()) + "]");
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto groups = group_by_label(all, ds.labels);
  std::vector<std::size_t> sizes;
  for (const auto& [label, idx] : groups) sizes.push_back(idx.size());
  const auto quota = apportion(n, sizes);

  std::vector<std::size_t> chosen;
  std::size_t g = 0;
  for (const auto& [label, idx] : groups) {
    Rng rng(seed, "subset", {static_cast<std::uint64_t>(label)});
    for (auto k : rng.sample_without_replacement(idx.size(), quota[g])) chosen.push_back(idx[k]);
    ++g;
  }
  std::sort(chosen.begin(), chosen.end());

  LabeledDataset out;
  out.features.resize(static_cast<Eigen::Index>(chosen.size()), ds.features.cols());
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    out.features.row(static_cast<Eigen::Index>(r)) = ds.features.row(static_cast<Eigen::Index>(chosen[r]));
    out.labels.push_back(ds.labels[chosen[r]]);
  }
  out.n_classes = ds.n_classes;
  out.provenance = ds.provenance;
  return out;
}

// -- partitioning ------------------------------------------------------------

Partition partition_non_iid(std::span<const int> labels, int n_devices, int classes_per_device,
                            std::uint64_t seed, int label_blocks) {
  if (n_devices < 1) throw ConfigError("partition needs at least one device");
  if (classes_per_device < 1) throw ConfigError("classes_per_device must be at least 1");
  if (label_blocks < 1 || label_blocks > n_devices)
    throw ConfigError("label_blocks must be in [1, n_devices]");

  std::vector<int> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < static_cast<std::size_t>(label_blocks))
    throw ConfigError("fewer classes than label blocks");

  // Deal classes to devices, block by block.
  std::vector<std::vector<int>> owned(static_cast<std::size_t>(n_devices));
  const auto nb = static_cast<std::size_t>(label_blocks);
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t c_lo = b * classes.size() / nb, c_hi = (b + 1) * classes.size() / nb;
    const std::size_t d_lo = b * static_cast<std::size_t>(n_devices) / nb;
    const std::size_t d_hi = (b + 1) * static_cast<std::size_t>(n_devices) / nb;
    const std::vector<int> block(classes.begin() + static_cast<std::ptrdiff_t>(c_lo),
                                 classes.begin() + static_cast<std::ptrdiff_t>(c_hi));
    if (static_cast<std::size_t>(classes_per_device) > block.size())
      throw ConfigError("classes_per_device exceeds the " + std::to_string(block.size()) +
                        " classes available to a device");

    // Round-robin over a class list that is reshuffled at every pass.
    std::vector<int> pass;
    std::size_t pos = 0, pass_index = 0;
    for (std::size_t d = d_lo; d < d_hi; ++d) {
      for (int k = 0; k < classes_per_device; ++k) {
        if (pos == pass.size()) {
          pass = block;
          Rng rng(seed, "partition-classes", {b, pass_index++});
          rng.shuffle(pass);
          pos = 0;
        }
        auto& mine = owned[d];
        // A device straddling two passes could draw a class twice; swap in
        // the next unused class of the current pass instead.
        for (std::size_t q = pos; q < pass.size(); ++q) {
          if (std::find(mine.begin(), mine.end(), pass[q]) == mine.end()) {
            std::swap(pass[pos], pass[q]);
            break;
          }
        }
        if (std::find(mine.begin(), mine.end(), pass[pos]) != mine.end())
          throw PartitionError("device " + std::to_string(d) + " cannot receive distinct classes");
        mine.push_back(pass[pos++]);
      }
    }
  }

  std::map<int, std::vector<std::size_t>> owners;  // class -> owning devices (ascending)
  for (std::size_t d = 0; d < owned.size(); ++d)
    for (int c : owned[d]) owners[c].push_back(d);

  std::vector<std::size_t> all(labels.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto groups = group_by_label(all, labels);

  Partition part;
  part.classes_per_device = classes_per_device;
  part.devices.resize(static_cast<std::size_t>(n_devices));
  for (auto& [c, devs] : owners) {
    auto& idx = groups[c];
    Rng rng(seed, "partition-samples", {static_cast<std::uint64_t>(c)});
    rng.shuffle(idx);
    const std::size_t m = devs.size();
    std::size_t base = idx.size() / (2 * m);
    if (base == 0 && idx.size() >= m) base = 1;
    std::size_t next = 0;
    for (std::size_t r = 0; r < base; ++r)
      for (auto d : devs) part.devices[d].push_back(idx[next++]);
    for (std::size_t o = 0; next < idx.size() && o < m && base == 0; ++o)
      part.devices[devs[o]].push_back(idx[next++]);  // fewer samples than owners
    for (; next < idx.size(); ++next) part.devices[devs[rng.below(m)]].push_back(idx[next]);
  }
  for (std::size_t d = 0; d < part.devices.size(); ++d) {
    if (part.devices[d].empty())
      throw PartitionError("device " + std::to_string(d) + " would receive zero samples");
    std::sort(part.devices[d].begin(), part.devices[d].end());
  }
  return part;
}

std::vector<std::vector<int>> device_label_sets(const Partition& partition,
                                                std::span<const int> labels) {
  std::vector<std::vector<int>> out;
  for (const auto& dev : partition.devices) {
    std::vector<int> s;
    for (auto i : dev) s.push_back(labels[i]);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<Partition, Partition> split_train_val(const Partition& partition,
                                                std::span<const int> labels, std::uint64_t seed) {
  Partition train, val;
  train.classes_per_device = val.classes_per_device = partition.classes_per_device;
  for (std::size_t d = 0; d < partition.devices.size(); ++d) {
    const auto& dev = partition.devices[d];
    if (dev.size() < 4)
      throw PartitionError("device " + std::to_string(d) + " has " + std::to_string(dev.size()) +
                           " samples; a 3:1 split needs at least 4");
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(dev.size()) / 4.0));
    auto groups = group_by_label(dev, labels);
    std::vector<std::size_t> sizes;
    for (const auto& [l, idx] : groups) sizes.push_back(idx.size());
    const auto quota = apportion(n_val, sizes);

    std::vector<std::size_t> tr, va;
    std::size_t g = 0;
    Rng rng(seed, "split", {d});
    for (auto& [l, idx] : groups) {
      rng.shuffle(idx);
      va.insert(va.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[g]));
      tr.insert(tr.end(), idx.begin() + static_cast<std::ptrdiff_t>(quota[g]), idx.end());
      ++g;
    }
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    train.devices.push_back(std::move(tr));
    val.devices.push_back(std::move(va));
  }
  return {std::move(train), std::move(val)};
}

Batch make_batch(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  FeatureMatrix x(static_cast<Eigen::Index>(indices.size()), ds.features.cols());
  std::vector<int> y;
  y.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)) = ds.features.row(static_cast<Eigen::Index>(indices[r]));
    y.push_back(ds.labels[indices[r]]);
  }
  return Batch(std::move(x), std::move(y), ds.n_classes);
}

// -- synthetic ---------------------------------------------------------------

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
  if (spec.n_devices < 1) throw ConfigError("synthetic data needs at least one device");
  if (spec.n_features < 1 || spec.n_classes < 2) throw ConfigError("synthetic: bad feature/class counts");
  if (spec.min_size < 1 || spec.max_size < spec.min_size) throw ConfigError("synthetic: bad size bounds");
  if (spec.alpha_bar < 0.0 || spec.beta_bar < 0.0) throw ConfigError("synthetic: negative hyperprior variance");
  if (spec.classes_per_device < 1) throw ConfigError("synthetic: classes_per_device must be positive");

  const int n = spec.n_devices, f = spec.n_features, c = spec.n_classes;

  // Rank power law: size_r = max * (r+1)^-s, with s chosen so the last rank hits min.
  std::vector<int> sizes(static_cast<std::size_t>(n));
  const double s = n > 1 ? std::log(static_cast<double>(spec.max_size) / spec.min_size) / std::log(n) : 0.0;
  for (int r = 0; r < n; ++r) {
    const double v = std::floor(spec.max_size * std::pow(r + 1.0, -s) + 1e-9);
    sizes[static_cast<std::size_t>(r)] = std::clamp(static_cast<int>(v), spec.min_size, spec.max_size);
  }

  Eigen::VectorXd feature_sd(f);
  for (int j = 0; j < f; ++j) feature_sd(j) = std::sqrt(std::pow(j + 1.0, -1.2));

  SyntheticData out;
  std::vector<Eigen::VectorXd> rows;
  std::vector<int> ys;
  for (int k = 0; k < n; ++k) {
    Rng rng(spec.seed, "synthetic-device", {static_cast<std::uint64_t>(k)});
    const double u = std::sqrt(spec.alpha_bar) * rng.normal();
    const double big_b = std::sqrt(spec.beta_bar) * rng.normal();
    Eigen::MatrixXd w(c, f);
    Eigen::VectorXd b(c), v(f);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(u, 1.0);
    for (int i = 0; i < c; ++i) b(i) = rng.normal(u, 1.0);
    for (int j = 0; j < f; ++j) v(j) = rng.normal(big_b, 1.0);
    out.rule_means.push_back(u);
    out.feature_means.push_back(big_b);

    auto draw = [&](Eigen::VectorXd& x) {
      x.resize(f);
      for (int j = 0; j < f; ++j) x(j) = v(j) + feature_sd(j) * rng.normal();
      const Eigen::VectorXd z = w * x + b;
      Eigen::Index best = 0;
      for (Eigen::Index i = 1; i < z.size(); ++i)
        if (z(i) > z(best)) best = i;
      return static_cast<int>(best);
    };

    const auto target = static_cast<std::size_t>(sizes[static_cast<std::size_t>(k)]);
    std::vector<Eigen::VectorXd> px(target);
    std::vector<int> py(target);
    std::vector<std::size_t> counts(static_cast<std::size_t>(c), 0);
    for (std::size_t i = 0; i < target; ++i) {
      py[i] = draw(px[i]);
      ++counts[static_cast<std::size_t>(py[i])];
    }
    std::vector<int> order(static_cast<std::size_t>(c));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int bb) {
      return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(bb)];
    });
    std::vector<bool> keep(static_cast<std::size_t>(c), false);
    for (int i = 0; i < std::min(spec.classes_per_device, c); ++i)
      if (counts[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] > 0)
        keep[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

    std::vector<std::size_t> dev_idx;
    auto accept = [&](Eigen::VectorXd x, int y) {
      dev_idx.push_back(rows.size());
      rows.push_back(std::move(x));
      ys.push_back(y);
    };
    for (std::size_t i = 0; i < target; ++i)
      if (keep[static_cast<std::size_t>(py[i])]) accept(std::move(px[i]), py[i]);
    // Top up with fresh draws restricted to the kept labels.
    Eigen::VectorXd x;
    for (std::size_t tries = 0; dev_idx.size() < target && tries < 200 * target; ++tries) {
      const int y = draw(x);
      if (keep[static_cast<std::size_t>(y)]) accept(x, y);
    }
    if (dev_idx.size() < static_cast<std::size_t>(spec.min_size))
      throw PartitionError("synthetic device " + std::to_string(k) + " could not reach its minimum size");
    out.partition.devices.push_back(std::move(dev_idx));
  }
  out.partition.classes_per_device = spec.classes_per_device;

  auto& ds = out.dataset;
  ds.features.resize(static_cast<Eigen::Index>(rows.size()), f);
  for (std::size_t r = 0; r < rows.size(); ++r) ds.features.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
  ds.labels = std::move(ys);
  ds.n_classes = c;
  ds.provenance = "synthetic";
  return out;
}

}  // namespace permfl
