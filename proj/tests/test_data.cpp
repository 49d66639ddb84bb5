#include <cstdio>
#include <fstream>
#include <sstream>
#include <set>

#include "doctest.h"
#include "ifval/data.hpp"

using namespace ifval;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content)
      : path("tmp_" + name) {
    std::ofstream out(path, std::ios::binary);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

void write_be32(std::ostream& out, std::uint32_t v) {
  out.put(char(v >> 24));
  out.put(char(v >> 16));
  out.put(char(v >> 8));
  out.put(char(v));
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("load_iris reads the canonical file") {
  const Dataset ds = load_iris("data/iris.csv");
  CHECK(ds.size() == 150);
  CHECK(ds.n_features == 4);
  CHECK(ds.n_classes == 3);
  // First-occurrence class mapping: setosa=0, versicolor=1, virginica=2.
  CHECK(ds.instances.front().label == 0);
  CHECK(ds.instances[50].label == 1);
  CHECK(ds.instances[100].label == 2);
  CHECK(ds.instances.front().features[0] == doctest::Approx(5.1));
}

TEST_CASE("load_iris handles headers, maps classes by first occurrence") {
  TempFile f("iris_small.csv",
             "a,b,c,d,species\n"
             "1,2,3,4,zebra\n"
             "5,6,7,8,apple\n"
             "1,1,1,1,zebra\n");
  const Dataset ds = load_iris(f.path);
  CHECK(ds.size() == 3);
  CHECK(ds.n_classes == 2);
  CHECK(ds.instances[0].label == 0);  // zebra first => 0 despite sort order
  CHECK(ds.instances[1].label == 1);
  CHECK(ds.instances[2].label == 0);
}

TEST_CASE("load_iris errors carry line numbers") {
  TempFile bad("iris_bad.csv", "1,2,3,4,x\n1,2,oops,4,y\n");
  CHECK_THROWS_WITH_AS(load_iris(bad.path), doctest::Contains("line 2"),
                       std::runtime_error);
  TempFile empty("iris_empty.csv", "\n\n");
  CHECK_THROWS_WITH_AS(load_iris(empty.path), doctest::Contains("no rows"),
                       std::runtime_error);
  CHECK_THROWS_AS(load_iris("does_not_exist.csv"), std::runtime_error);
}

TEST_CASE("csv round trip preserves a dataset") {
  const Dataset ds = load_iris("data/iris.csv");
  TempFile f("roundtrip.csv", "");
  save_csv(ds, f.path);
  const Dataset back = load_csv(f.path);
  REQUIRE(back.size() == ds.size());
  CHECK(back.n_features == ds.n_features);
  CHECK(back.n_classes == ds.n_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.instances[i].label == ds.instances[i].label);
    for (std::size_t j = 0; j < ds.n_features; ++j) {
      CHECK(back.instances[i].features[j] ==
            doctest::Approx(ds.instances[i].features[j]).epsilon(1e-15));
    }
  }
}

TEST_CASE("load_idx parses big-endian pairs and scales pixels") {
  std::ostringstream img, lab;
  write_be32(img, 0x803);
  write_be32(img, 2);  // 2 images
  write_be32(img, 2);  // 2x2
  write_be32(img, 2);
  const unsigned char px[8] = {0, 255, 128, 64, 10, 20, 30, 40};
  img.write(reinterpret_cast<const char*>(px), 8);
  write_be32(lab, 0x801);
  write_be32(lab, 2);
  lab.put(char(3));
  lab.put(char(9));
  TempFile fi("images.idx", img.str());
  TempFile fl("labels.idx", lab.str());

  const Dataset ds = load_idx(fi.path, fl.path);
  REQUIRE(ds.size() == 2);
  CHECK(ds.n_features == 4);
  CHECK(ds.n_classes == 10);
  CHECK(ds.instances[0].features[1] == doctest::Approx(1.0));
  CHECK(ds.instances[0].features[2] == doctest::Approx(128.0 / 255.0));
  CHECK(ds.instances[0].label == 3);
  CHECK(ds.instances[1].label == 9);

  SUBCASE("limit truncates") {
    CHECK(load_idx(fi.path, fl.path, 1).size() == 1);
    CHECK_THROWS_WITH_AS(load_idx(fi.path, fl.path, 0),
                         doctest::Contains("empty limit"), std::runtime_error);
  }
  SUBCASE("bad magic is rejected") {
    TempFile junk("junk.idx", std::string(16, 'x'));
    CHECK_THROWS_WITH_AS(load_idx(junk.path, fl.path),
                         doctest::Contains("not IDX"), std::runtime_error);
  }
  SUBCASE("count mismatch is rejected") {
    std::ostringstream lab1;
    write_be32(lab1, 0x801);
    write_be32(lab1, 1);
    lab1.put(char(0));
    TempFile fl1("labels1.idx", lab1.str());
    CHECK_THROWS_WITH_AS(load_idx(fi.path, fl1.path),
                         doctest::Contains("image count"), std::runtime_error);
  }
}

TEST_CASE("synth_blobs is balanced, deterministic, separable") {
  RngStream s1(10), s2(10);
  const Dataset a = synth_blobs(100, 3, 4, 0.1, s1);
  const Dataset b = synth_blobs(100, 3, 4, 0.1, s2);
  CHECK(a.n_classes == 4);
  std::vector<int> counts(4, 0);
  for (const auto& z : a.instances) ++counts[z.label];
  for (int c : counts) CHECK(std::abs(c - 25) <= 1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.instances[i].features == b.instances[i].features);
  }
  CHECK_THROWS_AS(synth_blobs(3, 2, 4, 0.1, s1), std::invalid_argument);
}

TEST_CASE("split is disjoint, exhaustive, stratified, deterministic") {
  const Dataset ds = load_iris("data/iris.csv");
  RngStream s1(1), s2(1);
  auto [train, test] = split(ds, 0.2, s1);
  auto [train2, test2] = split(ds, 0.2, s2);
  CHECK(train.size() == 120);
  CHECK(test.size() == 30);
  CHECK(train.size() + test.size() == ds.size());
  // Stratification: 10 test points per class.
  std::vector<int> counts(3, 0);
  for (const auto& z : test.instances) ++counts[z.label];
  for (int c : counts) CHECK(c == 10);
  // Determinism.
  for (std::size_t i = 0; i < train.size(); ++i) {
    CHECK(train.instances[i].features == train2.instances[i].features);
  }
  // Disjointness via exact feature multisets.
  std::multiset<Vec> all, parts;
  for (const auto& z : ds.instances) all.insert(z.features);
  for (const auto& z : train.instances) parts.insert(z.features);
  for (const auto& z : test.instances) parts.insert(z.features);
  CHECK(all == parts);
  CHECK_THROWS_AS(split(ds, 0.0, s1), std::invalid_argument);
  CHECK_THROWS_AS(split(ds, 1.0, s1), std::invalid_argument);
}

TEST_CASE("standardize centers and scales on the train split only") {
  Dataset ds = load_iris("data/iris.csv");
  RngStream s(2);
  auto [train, test] = split(ds, 0.2, s);
  const Vec raw_test0 = test.instances[0].features;
  const StandardizationStats st = standardize(train, {&test});
  const std::size_t d = train.n_features;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0, var = 0;
    for (const auto& z : train.instances) mean += z.features[j];
    mean /= train.size();
    for (const auto& z : train.instances) {
      var += (z.features[j] - mean) * (z.features[j] - mean);
    }
    var /= train.size();
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-10);
    CHECK_FALSE(st.clamped[j]);
    // Test split transformed with the train statistics.
    CHECK(test.instances[0].features[j] ==
          doctest::Approx((raw_test0[j] - st.mean[j]) / st.std[j]));
  }
}

TEST_CASE("standardize clamps constant features") {
  Dataset ds;
  ds.n_features = 2;
  ds.n_classes = 2;
  for (int i = 0; i < 4; ++i) {
    ds.instances.push_back({{5.0, double(i)}, std::size_t(i % 2)});
  }
  const StandardizationStats st = standardize(ds, {});
  CHECK(st.clamped[0]);
  CHECK_FALSE(st.clamped[1]);
  for (const auto& z : ds.instances) CHECK(z.features[0] == doctest::Approx(0.0));
}

TEST_SUITE_END();
