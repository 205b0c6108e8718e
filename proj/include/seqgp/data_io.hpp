#pragma once

// Dataset loading, normalization and synthetic benchmark generators.
//
// On-disk format: one JSON object per line,
//   {"label": 1, "times": [0.0, 0.7, ...], "values": [[...], [...], ...]}
// where values holds one vector per observation.  "times" may be omitted
// (an integer grid 0,1,2,... is assumed) and files may be gzip-compressed;
// both are detected transparently.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqgp/sequence.hpp"

namespace seqgp {

// Raised for malformed files and records; carries the offending line.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dataset {
  std::vector<Sequence> train, test;
  int n_classes = 0;
  int dim = 0;
  bool normalized = false;
  std::vector<double> mean, stdev;  // per-dimension training statistics
};

std::vector<Sequence> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<Sequence>& seqs, const std::string& path);

// Loads train (and optionally test) records and validates labels: they
// must cover 0..C-1 with every class present in the training split.
Dataset load_dataset(const std::string& train_path, const std::string& test_path = "");

// Derives per-dimension mean/stdev from the pooled training observations
// and applies them to both splits.  Dimensions with zero spread are
// centered and left at unit scale.
void normalize(Dataset& ds);
void apply_normalization(std::vector<Sequence>& seqs, const std::vector<double>& mean,
                         const std::vector<double>& stdev);

// Synthetic classification benchmarks (n sequences per split, classes
// balanced, lengths drawn from {10..30}, fully determined by seed):
//   drift2: two classes with increment drift +v / -v plus noise
//   phase2: sine vs cosine observed on irregular time grids
//   order3: three classes sharing identical value multisets per template,
//           differing only in the order the values are visited
Dataset make_synthetic(const std::string& kind, int n, std::uint64_t seed);

}  // namespace seqgp
