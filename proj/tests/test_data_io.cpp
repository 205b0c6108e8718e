#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "seqgp/data_io.hpp"

using namespace seqgp;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

}  // namespace

TEST_SUITE("data_io") {

TEST_CASE("jsonl records parse into sequences") {
  TempFile f("dio_basic.jsonl");
  write_file(f.path,
             "{\"label\": 1, \"times\": [0.0, 0.5, 2.0], \"values\": [[1,2],[3,4],[5,6]]}\n"
             "{\"label\": 0, \"values\": [[7,8],[9,10]]}\n");
  const std::vector<Sequence> seqs = load_jsonl(f.path);
  REQUIRE(seqs.size() == 2);
  CHECK(seqs[0].length() == 3);
  CHECK(seqs[0].dim == 2);
  CHECK(seqs[0].label == 1);
  CHECK(seqs[0].times[1] == 0.5);
  CHECK(seqs[0].value(2)[1] == 6.0);
  // Missing "times" defaults to the integer grid.
  CHECK(seqs[1].times == std::vector<double>{0.0, 1.0});
}

TEST_CASE("save then load preserves every value bit-exactly") {
  std::vector<Sequence> seqs(2);
  seqs[0].dim = 2;
  seqs[0].label = 3;
  seqs[0].times = {0.0, 1.0 / 3.0, 0.70000000000000007};
  seqs[0].values = {1e-300, -2.5, 0.1, 1.0 / 7.0, 5e17, -0.0};
  seqs[1].dim = 2;
  seqs[1].label = -1;  // unlabeled survives the trip
  seqs[1].times = {42.0};
  seqs[1].values = {3.14159265358979312, 2.71828182845904509};

  TempFile f("dio_roundtrip.jsonl");
  save_jsonl(seqs, f.path);
  const std::vector<Sequence> r = load_jsonl(f.path);
  REQUIRE(r.size() == 2);
  CHECK(r[0].times == seqs[0].times);
  CHECK(r[0].values == seqs[0].values);
  CHECK(r[0].label == 3);
  CHECK(r[1].label == -1);
  CHECK(r[1].values == seqs[1].values);
}

TEST_CASE("malformed input reports the offending line") {
  TempFile f("dio_bad.jsonl");
  write_file(f.path,
             "{\"label\": 0, \"values\": [[1],[2]]}\n"
             "{\"label\": 0, \"values\": [[1],[2]]\n"  // truncated JSON
             "{\"label\": 0, \"values\": [[1],[2]]}\n");
  try {
    load_jsonl(f.path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  TempFile g("dio_baddim.jsonl");
  write_file(g.path, "{\"label\": 0, \"values\": [[1,2],[3]]}\n");
  CHECK_THROWS_AS(load_jsonl(g.path), DataError);

  TempFile h("dio_badtimes.jsonl");
  write_file(h.path, "{\"label\": 0, \"times\": [1.0, 1.0], \"values\": [[1],[2]]}\n");
  CHECK_THROWS_AS(load_jsonl(h.path), DataError);

  CHECK_THROWS_AS(load_jsonl("does_not_exist.jsonl"), DataError);
}

TEST_CASE("gzip-compressed files load transparently") {
  std::vector<Sequence> seqs(1);
  seqs[0].dim = 1;
  seqs[0].label = 1;
  seqs[0].times = {0.0, 1.0};
  seqs[0].values = {0.25, -1.75};
  TempFile plain("dio_gz_src.jsonl");
  save_jsonl(seqs, plain.path);
  TempFile gz("dio_gz_src.jsonl.gz");
  REQUIRE(std::system(("gzip -kf " + plain.path).c_str()) == 0);
  const std::vector<Sequence> r = load_jsonl(gz.path);
  REQUIRE(r.size() == 1);
  CHECK(r[0].values == seqs[0].values);
}

TEST_CASE("dataset loading validates label coverage") {
  TempFile train("dio_train.jsonl"), test("dio_test.jsonl");
  write_file(train.path,
             "{\"label\": 0, \"values\": [[1],[2]]}\n"
             "{\"label\": 1, \"values\": [[2],[1]]}\n");
  write_file(test.path, "{\"label\": 1, \"values\": [[0],[1]]}\n");
  const Dataset ds = load_dataset(train.path, test.path);
  CHECK(ds.n_classes == 2);
  CHECK(ds.dim == 1);
  CHECK(ds.train.size() == 2);
  CHECK(ds.test.size() == 1);

  // A training gap in the label range is rejected.
  TempFile gap("dio_gap.jsonl");
  write_file(gap.path,
             "{\"label\": 0, \"values\": [[1],[2]]}\n"
             "{\"label\": 2, \"values\": [[2],[1]]}\n");
  CHECK_THROWS_AS(load_dataset(gap.path), DataError);
}

TEST_CASE("normalization centers and scales using train statistics only") {
  Dataset ds;
  ds.dim = 2;
  ds.n_classes = 1;
  for (int i = 0; i < 4; ++i) {
    Sequence s;
    s.dim = 2;
    s.label = 0;
    for (int t = 0; t < 3; ++t) {
      s.times.push_back(t);
      s.values.push_back(10.0 + (i + t) % 2);  // mean 10.5, spread 0.5
      s.values.push_back(7.0);                 // constant dimension
    }
    ds.train.push_back(s);
  }
  Sequence shifted = ds.train[0];
  for (std::size_t k = 0; k < shifted.values.size(); k += 2) shifted.values[k] += 100.0;
  ds.test.push_back(shifted);

  normalize(ds);
  CHECK(ds.normalized);
  REQUIRE(ds.mean.size() == 2);
  CHECK(ds.mean[0] == doctest::Approx(10.5).epsilon(1e-12));
  // Zero-variance dimension: centered, unit scale.
  CHECK(ds.mean[1] == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(ds.stdev[1] == 1.0);

  // Train pool is now zero mean, unit variance in the varying dimension.
  double sum = 0.0, sumsq = 0.0;
  int n = 0;
  for (const Sequence& s : ds.train)
    for (int t = 0; t < s.length(); ++t) {
      sum += s.value(t)[0];
      sumsq += s.value(t)[0] * s.value(t)[0];
      ++n;
    }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(sumsq / n == doctest::Approx(1.0).epsilon(1e-10));
  for (const Sequence& s : ds.train)
    for (int t = 0; t < s.length(); ++t) CHECK(s.value(t)[1] == 0.0);

  // Test set was transformed with train statistics, not its own.
  CHECK(ds.test[0].value(0)[0] > 100.0);
}

TEST_CASE("normalization is idempotent when reapplied with its own statistics") {
  Dataset ds;
  ds.dim = 1;
  ds.n_classes = 1;
  for (int i = 0; i < 3; ++i) {
    Sequence s;
    s.dim = 1;
    s.label = 0;
    for (int t = 0; t < 4; ++t) {
      s.times.push_back(t);
      s.values.push_back(std::sin(i + t * 0.7) * 3.0 + 1.0);
    }
    ds.train.push_back(s);
  }
  normalize(ds);
  Dataset again = ds;
  normalize(again);
  for (std::size_t i = 0; i < ds.train.size(); ++i)
    for (std::size_t k = 0; k < ds.train[i].values.size(); ++k)
      CHECK(again.train[i].values[k] ==
            doctest::Approx(ds.train[i].values[k]).epsilon(1e-12));
}

TEST_CASE("synthetic datasets are balanced, bounded and deterministic") {
  for (const char* kind : {"drift2", "phase2", "order3"}) {
    const Dataset ds = make_synthetic(kind, 60, 5);
    const int C = ds.n_classes;
    std::vector<int> counts(static_cast<std::size_t>(C), 0);
    for (const Sequence& s : ds.train) {
      REQUIRE(s.label >= 0);
      REQUIRE(s.label < C);
      ++counts[static_cast<std::size_t>(s.label)];
      CHECK(s.length() >= 10);
      CHECK(s.length() <= 30);
      CHECK_NOTHROW(s.validate());
    }
    for (int c = 0; c < C; ++c)
      CHECK(std::abs(counts[static_cast<std::size_t>(c)] - 60 / C) <= 1);
    CHECK(ds.train.size() == 60);
    CHECK(ds.test.size() == 60);

    const Dataset again = make_synthetic(kind, 60, 5);
    CHECK(again.train[3].values == ds.train[3].values);
    const Dataset other = make_synthetic(kind, 60, 6);
    CHECK(other.train[3].values != ds.train[3].values);
  }
  CHECK_THROWS_AS(make_synthetic("nope", 10, 0), std::invalid_argument);
}

TEST_CASE("order3 classes share value multisets within a template") {
  const Dataset ds = make_synthetic("order3", 30, 9);
  // Group sequences by their sorted point multiset; each group must span
  // multiple classes (the ordering is the only signal).
  std::map<std::vector<double>, std::vector<int>> groups;
  for (const Sequence& s : ds.train) {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < s.length(); ++i) pts.emplace_back(s.value(i)[0], s.value(i)[1]);
    std::sort(pts.begin(), pts.end());
    std::vector<double> key;
    for (const auto& [a, b] : pts) {
      key.push_back(a);
      key.push_back(b);
    }
    groups[key].push_back(s.label);
  }
  int multi_class_groups = 0;
  for (auto& [key, labels] : groups) {
    std::sort(labels.begin(), labels.end());
    if (std::unique(labels.begin(), labels.end()) - labels.begin() >= 2) ++multi_class_groups;
  }
  CHECK(multi_class_groups >= 8);
}

}  // TEST_SUITE
