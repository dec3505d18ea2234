#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "permfl/data.hpp"
#include "permfl/error.hpp"

using namespace permfl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "permfl_unit_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 8),
          static_cast<unsigned char>(v)};
}

std::vector<unsigned char> image_file(int n, bool truncate = false) {
  std::vector<unsigned char> b{0, 0, 8, 3};
  for (std::uint32_t d : {static_cast<std::uint32_t>(n), 28u, 28u}) {
    const auto e = be32(d);
    b.insert(b.end(), e.begin(), e.end());
  }
  for (int i = 0; i < n * 784 - (truncate ? 1 : 0); ++i) b.push_back(static_cast<unsigned char>(i % 256));
  return b;
}

}  // namespace

TEST_CASE("IDX images and labels from hand-written bytes") {
  const auto img = scratch("img.idx");
  write_bytes(img, image_file(2));
  const auto x = load_idx_images(img.string());
  CHECK(x.rows() == 2);
  CHECK(x.cols() == 784);
  CHECK(x(0, 255) == doctest::Approx(1.0));
  CHECK(x(1, 0) == doctest::Approx((784 % 256) / 255.0));

  const auto lab = scratch("lab.idx");
  std::vector<unsigned char> b{0, 0, 8, 1, 0, 0, 0, 2, 3, 7};
  write_bytes(lab, b);
  CHECK(load_idx_labels(lab.string()) == std::vector<int>{3, 7});
}

TEST_CASE("IDX format errors carry offsets") {
  const auto bad = scratch("bad.idx");
  std::vector<unsigned char> b{0, 0, 8, 4, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 5};  // magic 2052
  write_bytes(bad, b);
  CHECK_THROWS_AS(load_idx_images(bad.string()), FormatError);

  const auto trunc = scratch("trunc.idx");
  write_bytes(trunc, image_file(2, true));
  try {
    (void)read_idx(trunc.string());
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() > 0);
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
  CHECK_THROWS_AS(read_idx(scratch("missing.idx").string()), IoError);
}

TEST_CASE("IDX round trip, plain and gzip") {
  IdxArray a;
  a.magic = kIdxImagesMagic;
  a.dims = {3, 2, 2};
  for (int i = 0; i < 12; ++i) a.data.push_back(static_cast<std::uint8_t>(i * 20));
  for (const char* name : {"rt.idx", "rt.idx.gz"}) {
    const auto p = scratch(name);
    write_idx(p.string(), a);
    CHECK(read_idx(p.string()) == a);
  }
  std::ifstream gz(scratch("rt.idx.gz"), std::ios::binary);
  CHECK(gz.get() == 0x1f);
}

TEST_CASE("partition of the six-sample example") {
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  const auto p = partition_non_iid(labels, 3, 2, 7);
  REQUIRE(p.n_devices() == 3);
  for (std::size_t d = 0; d < 3; ++d) {
    CHECK(p.devices[d].size() == 2);
    std::set<int> cls;
    for (auto i : p.devices[d]) cls.insert(labels[i]);
    CHECK(cls.size() == 2);
  }
  CHECK(partition_non_iid(labels, 3, 2, 7) == p);
}

TEST_CASE("one device takes everything when it can own every class") {
  const std::vector<int> labels{1, 0, 1, 0, 0};
  const auto p = partition_non_iid(labels, 1, 2, 3);
  auto idx = p.devices[0];
  std::sort(idx.begin(), idx.end());
  CHECK(idx == std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("partition invariants over 100 seeds") {
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c)
    for (int i = 0; i < 30 + 3 * c; ++i) labels.push_back(c);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = partition_non_iid(labels, 20, 2, seed);
    std::vector<int> owner(labels.size(), -1);
    for (std::size_t d = 0; d < p.n_devices(); ++d) {
      CHECK_FALSE(p.devices[d].empty());
      std::set<int> cls;
      for (auto i : p.devices[d]) {
        CHECK(owner[i] == -1);
        owner[i] = static_cast<int>(d);
        cls.insert(labels[i]);
      }
      CHECK(cls.size() <= 2);
    }
  }
}

TEST_CASE("label blocks keep each device inside one block") {
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c)
    for (int i = 0; i < 20; ++i) labels.push_back(c);
  const auto p = partition_non_iid(labels, 8, 2, 4, 2);
  for (const auto& set : device_label_sets(p, labels)) CHECK(set.front() / 5 == set.back() / 5);
}

TEST_CASE("train/validation split sizes") {
  std::vector<int> labels(8, 0);
  labels[5] = labels[6] = labels[7] = 1;
  Partition p;
  p.devices = {{0, 1, 2, 3, 4, 5, 6, 7}, {0, 1, 2, 5}};
  const auto [train, val] = split_train_val(p, labels, 1);
  CHECK(train.devices[0].size() == 6);
  CHECK(val.devices[0].size() == 2);
  CHECK(train.devices[1].size() == 3);
  CHECK(val.devices[1].size() == 1);
  for (std::size_t d = 0; d < 2; ++d) {
    std::vector<std::size_t> all = train.devices[d];
    all.insert(all.end(), val.devices[d].begin(), val.devices[d].end());
    std::sort(all.begin(), all.end());
    auto orig = p.devices[d];
    std::sort(orig.begin(), orig.end());
    CHECK(all == orig);
  }
  Partition tiny;
  tiny.devices = {{0, 1, 2}};
  CHECK_THROWS_AS(split_train_val(tiny, labels, 1), PartitionError);
}

TEST_CASE("stratified subset keeps class proportions") {
  LabeledDataset ds;
  ds.n_classes = 2;
  ds.features = FeatureMatrix::Zero(100, 1);
  for (int i = 0; i < 100; ++i) ds.labels.push_back(i < 70 ? 0 : 1);
  const auto s = stratified_subset(ds, 10, 5);
  CHECK(s.size() == 10);
  CHECK(std::count(s.labels.begin(), s.labels.end(), 0) == 7);
}

TEST_CASE("synthetic generator") {
  SyntheticSpec spec;
  spec.n_devices = 4;
  spec.min_size = 50;
  spec.max_size = 500;
  spec.seed = 1;
  const auto a = gen_synthetic(spec);
  REQUIRE(a.partition.n_devices() == 4);
  for (std::size_t d = 0; d < 4; ++d) {
    CHECK_FALSE(a.partition.devices[d].empty());
    CHECK(a.partition.devices[d].size() <= 500);
    CHECK(a.partition.devices[d].size() >= 50);
    if (d > 0) CHECK(a.partition.devices[d].size() <= a.partition.devices[d - 1].size());
  }
  for (const auto& set : device_label_sets(a.partition, a.dataset.labels)) CHECK(set.size() <= 2);
  const auto b = gen_synthetic(spec);
  CHECK(a.dataset.labels == b.dataset.labels);
  CHECK(a.dataset.features == b.dataset.features);

  spec.alpha_bar = spec.beta_bar = 0.0;
  const auto flat = gen_synthetic(spec);
  for (double u : flat.rule_means) CHECK(u == 0.0);
  for (double v : flat.feature_means) CHECK(v == 0.0);

  spec.n_devices = 0;
  CHECK_THROWS_AS(gen_synthetic(spec), ConfigError);
}

TEST_CASE("bundled MNIST subset") {
  const std::string dir = PERMFL_DATA_DIR "/mnist5k/";
  const auto ds = load_idx_dataset(dir + "train-images-idx3-ubyte.gz", dir + "train-labels-idx1-ubyte.gz", "mnist");
  CHECK(ds.size() == 5000);
  CHECK(ds.features.cols() == 784);
  for (int c = 0; c < 10; ++c) CHECK(std::count(ds.labels.begin(), ds.labels.end(), c) == 500);
  CHECK(ds.features.maxCoeff() <= 1.0);
  CHECK(ds.features.minCoeff() >= 0.0);
}
