#include "seqgp/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "seqgp/svgp.hpp"  // mix_seed

namespace seqgp {

namespace {
using nlohmann::json;

// zlib's gz layer reads plain files unchanged, so one reader covers both.
std::string slurp(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("data_io: cannot open " + path);
  std::string out;
  char buf[1 << 16];
  int got;
  while ((got = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(got));
  const bool bad = got < 0;
  gzclose(f);
  if (bad) throw DataError("data_io: read error in " + path);
  return out;
}

Sequence parse_record(const std::string& line, const std::string& path, int lineno) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError("data_io: " + path + ": line " + std::to_string(lineno) +
                    ": malformed JSON: " + e.what());
  }
  try {
    Sequence s;
    const auto& values = j.at("values");
    if (!values.is_array() || values.empty() || !values.front().is_array())
      throw DataError("values must be a non-empty list of observation vectors");
    s.dim = static_cast<int>(values.front().size());
    for (const auto& row : values) {
      if (static_cast<int>(row.size()) != s.dim)
        throw DataError("observation vectors must share one dimension");
      for (const auto& v : row) s.values.push_back(v.get<double>());
    }
    const int len = static_cast<int>(values.size());
    if (j.contains("times")) {
      s.times = j.at("times").get<std::vector<double>>();
      if (static_cast<int>(s.times.size()) != len)
        throw DataError("times and values lengths differ");
    } else {
      for (int i = 0; i < len; ++i) s.times.push_back(static_cast<double>(i));
    }
    s.label = j.value("label", -1);
    s.validate();
    return s;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("data_io: " + path + ": line " + std::to_string(lineno) + ": " + e.what());
  }
}
}  // namespace

std::vector<Sequence> load_jsonl(const std::string& path) {
  const std::string text = slurp(path);
  std::vector<Sequence> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(line, path, lineno));
  }
  if (out.empty()) throw DataError("data_io: " + path + ": no records");
  return out;
}

void save_jsonl(const std::vector<Sequence>& seqs, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("data_io: cannot open " + path + " for writing");
  for (const auto& s : seqs) {
    json row;
    for (int i = 0; i < s.length(); ++i)
      row.push_back(std::vector<double>(s.value(i), s.value(i) + s.dim));
    json j{{"label", s.label}, {"times", s.times}, {"values", row}};
    os << j.dump() << "\n";
  }
  if (!os) throw DataError("data_io: write failed for " + path);
}

Dataset load_dataset(const std::string& train_path, const std::string& test_path) {
  Dataset ds;
  ds.train = load_jsonl(train_path);
  if (!test_path.empty()) ds.test = load_jsonl(test_path);
  ds.dim = ds.train.front().dim;

  int max_label = -1;
  std::vector<int> seen;
  auto scan = [&](const std::vector<Sequence>& seqs, const char* split) {
    for (const auto& s : seqs) {
      if (s.dim != ds.dim) throw DataError("data_io: mixed state dimensions across records");
      if (s.label < 0)
        throw DataError(std::string("data_io: unlabeled record in ") + split + " split");
      max_label = std::max(max_label, s.label);
    }
  };
  scan(ds.train, "train");
  scan(ds.test, "test");
  ds.n_classes = max_label + 1;
  if (ds.n_classes < 2) throw DataError("data_io: need at least two classes");
  std::vector<int> count(static_cast<std::size_t>(ds.n_classes), 0);
  for (const auto& s : ds.train) ++count[static_cast<std::size_t>(s.label)];
  for (int c = 0; c < ds.n_classes; ++c)
    if (count[static_cast<std::size_t>(c)] == 0)
      throw DataError("data_io: class " + std::to_string(c) + " missing from training split");
  return ds;
}

void apply_normalization(std::vector<Sequence>& seqs, const std::vector<double>& mean,
                         const std::vector<double>& stdev) {
  for (auto& s : seqs)
    for (int i = 0; i < s.length(); ++i)
      for (int j = 0; j < s.dim; ++j) {
        double& v = s.values[static_cast<std::size_t>(i) * s.dim + j];
        v = (v - mean[static_cast<std::size_t>(j)]) / stdev[static_cast<std::size_t>(j)];
      }
}

void normalize(Dataset& ds) {
  if (ds.normalized) return;
  const int d = ds.dim;
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  std::vector<double> var(static_cast<std::size_t>(d), 0.0);
  std::size_t n = 0;
  for (const auto& s : ds.train) {
    for (int i = 0; i < s.length(); ++i)
      for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += s.value(i)[j];
    n += static_cast<std::size_t>(s.length());
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (const auto& s : ds.train)
    for (int i = 0; i < s.length(); ++i)
      for (int j = 0; j < d; ++j) {
        const double dv = s.value(i)[j] - mean[static_cast<std::size_t>(j)];
        var[static_cast<std::size_t>(j)] += dv * dv;
      }
  std::vector<double> stdev(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    const double v = var[static_cast<std::size_t>(j)] / static_cast<double>(n);
    stdev[static_cast<std::size_t>(j)] = v > 0.0 ? std::sqrt(v) : 1.0;
  }
  apply_normalization(ds.train, mean, stdev);
  apply_normalization(ds.test, mean, stdev);
  ds.mean = std::move(mean);
  ds.stdev = std::move(stdev);
  ds.normalized = true;
}

// ---- synthetic benchmarks ---------------------------------------------------

namespace {

int draw_len(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(10, 30);
  return d(rng);
}

std::vector<int> class_counts(int n, int n_classes) {
  std::vector<int> c(static_cast<std::size_t>(n_classes), n / n_classes);
  for (int i = 0; i < n % n_classes; ++i) ++c[static_cast<std::size_t>(i)];
  return c;
}

std::vector<Sequence> make_drift2(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.4);
  const double drift = 0.5;
  std::vector<Sequence> out;
  const auto counts = class_counts(n, 2);
  for (int label = 0; label < 2; ++label)
    for (int i = 0; i < counts[static_cast<std::size_t>(label)]; ++i) {
      const int len = draw_len(rng);
      Sequence s;
      s.dim = 1;
      s.label = label;
      double x = noise(rng);
      for (int t = 0; t < len; ++t) {
        s.times.push_back(static_cast<double>(t));
        s.values.push_back(x);
        x += (label == 0 ? drift : -drift) + noise(rng);
      }
      out.push_back(std::move(s));
    }
  return out;
}

std::vector<Sequence> make_phase2(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::uniform_real_distribution<double> jitter(0.0, 0.9);
  const double horizon = 4.0 * 3.14159265358979323846;
  std::vector<Sequence> out;
  const auto counts = class_counts(n, 2);
  for (int label = 0; label < 2; ++label)
    for (int i = 0; i < counts[static_cast<std::size_t>(label)]; ++i) {
      const int len = draw_len(rng);
      const double phase = label == 0 ? 0.0 : 0.5 * 3.14159265358979323846;
      Sequence s;
      s.dim = 1;
      s.label = label;
      for (int t = 0; t < len; ++t) {
        const double time = (t + jitter(rng)) * horizon / len;  // irregular, increasing
        s.times.push_back(time);
        s.values.push_back(std::sin(time + phase) + noise(rng));
      }
      out.push_back(std::move(s));
    }
  return out;
}

// One template of 2-d points yields three sequences with the identical
// value multiset, visited in a class-specific order: ascending in the
// first coordinate, ascending in the second, or descending in the first.
std::vector<Sequence> make_order3(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const int n_templates = (n + 2) / 3;
  std::vector<Sequence> out;
  const auto counts = class_counts(n, 3);
  std::vector<int> emitted(3, 0);
  for (int t = 0; t < n_templates; ++t) {
    const int len = draw_len(rng);
    std::vector<std::pair<double, double>> pts(static_cast<std::size_t>(len));
    for (auto& p : pts) p = {unif(rng), unif(rng)};
    for (int label = 0; label < 3; ++label) {
      if (emitted[static_cast<std::size_t>(label)] >= counts[static_cast<std::size_t>(label)])
        continue;
      auto ordered = pts;
      if (label == 0)
        std::sort(ordered.begin(), ordered.end());
      else if (label == 1)
        std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
          return a.second != b.second ? a.second < b.second : a.first < b.first;
        });
      else
        std::sort(ordered.begin(), ordered.end(), std::greater<>());
      Sequence s;
      s.dim = 2;
      s.label = label;
      for (int i = 0; i < len; ++i) {
        s.times.push_back(static_cast<double>(i));
        s.values.push_back(ordered[static_cast<std::size_t>(i)].first);
        s.values.push_back(ordered[static_cast<std::size_t>(i)].second);
      }
      out.push_back(std::move(s));
      ++emitted[static_cast<std::size_t>(label)];
    }
  }
  return out;
}

std::vector<Sequence> make_split(const std::string& kind, int n, std::uint64_t seed) {
  if (kind == "drift2") return make_drift2(n, seed);
  if (kind == "phase2") return make_phase2(n, seed);
  if (kind == "order3") return make_order3(n, seed);
  throw std::invalid_argument("make_synthetic: unknown kind '" + kind +
                              "' (expected drift2, phase2 or order3)");
}
}  // namespace

Dataset make_synthetic(const std::string& kind, int n, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("make_synthetic: n must be >= 2");
  Dataset ds;
  ds.train = make_split(kind, n, mix_seed(seed, 101));
  ds.test = make_split(kind, n, mix_seed(seed, 202));
  ds.dim = ds.train.front().dim;
  ds.n_classes = kind == "order3" ? 3 : 2;
  return ds;
}

}  // namespace seqgp
