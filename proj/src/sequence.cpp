#include "seqgp/sequence.hpp"

#include <algorithm>
#include <cmath>

namespace seqgp {

void Sequence::validate() const {
  if (dim < 1) throw std::invalid_argument("Sequence: dim must be >= 1");
  if (times.empty()) throw std::invalid_argument("Sequence: empty");
  if (values.size() != times.size() * static_cast<std::size_t>(dim))
    throw std::invalid_argument("Sequence: values size does not match times * dim");
  for (std::size_t i = 0; i + 1 < times.size(); ++i)
    if (!(times[i] < times[i + 1]))
      throw std::invalid_argument("Sequence: times must be strictly increasing");
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("Sequence: non-finite value");
  for (double t : times)
    if (!std::isfinite(t)) throw std::invalid_argument("Sequence: non-finite time");
}

AugmentedSequence augment(const Sequence& s, double tau, const std::vector<double>& lags) {
  s.validate();
  if (!(tau >= 0.0)) throw std::invalid_argument("augment: tau must be non-negative");
  for (double lag : lags)
    if (!(lag > 0.0)) throw std::invalid_argument("augment: lags must be positive");

  AugmentedSequence a;
  a.aug_dim = augmented_dim(s.dim, static_cast<int>(lags.size()));
  a.times = s.times;
  a.label = s.label;
  a.values.resize(static_cast<std::size_t>(s.length()) * a.aug_dim);
  detail::build_augmented_states(s.times, s.values.data(), s.length(), s.dim, tau, lags,
                                 a.values.data());
  return a;
}

std::vector<double> increments(const AugmentedSequence& a) {
  const int len = a.length();
  if (len == 0) throw std::invalid_argument("increments: empty sequence");
  std::vector<double> d(static_cast<std::size_t>(len - 1) * a.aug_dim);
  for (int i = 0; i + 1 < len; ++i) {
    const double* lo = a.state(i);
    const double* hi = a.state(i + 1);
    for (int j = 0; j < a.aug_dim; ++j)
      d[static_cast<std::size_t>(i) * a.aug_dim + j] = hi[j] - lo[j];
  }
  return d;
}

SequenceBatch tabulate(const std::vector<AugmentedSequence>& seqs) {
  if (seqs.empty()) throw std::invalid_argument("tabulate: empty batch");
  SequenceBatch b;
  b.n = static_cast<int>(seqs.size());
  b.dim = seqs.front().aug_dim;
  for (const auto& s : seqs) {
    if (s.aug_dim != b.dim) throw std::invalid_argument("tabulate: mixed dimensions");
    if (s.length() == 0) throw std::invalid_argument("tabulate: empty sequence");
    b.len = std::max(b.len, s.length());
  }
  b.states.assign(static_cast<std::size_t>(b.n) * b.len * b.dim, 0.0);
  for (int i = 0; i < b.n; ++i) {
    const auto& s = seqs[static_cast<std::size_t>(i)];
    b.eff_len.push_back(s.length());
    b.labels.push_back(s.label);
    for (int l = 0; l < b.len; ++l) {
      const double* src = s.state(std::min(l, s.length() - 1));  // repeat final state
      double* dst = b.states.data() + (static_cast<std::size_t>(i) * b.len + l) * b.dim;
      std::copy(src, src + b.dim, dst);
    }
  }
  return b;
}

std::vector<int> subsample_indices(int len, int max_len) {
  if (max_len < 2) throw std::invalid_argument("subsample: max_len must be >= 2");
  std::vector<int> idx;
  if (len <= max_len) {
    idx.resize(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
  }
  // Evenly spaced positions on [0, len-1], rounding halves down; this keeps
  // both endpoints and, because gaps exceed one slot, never collides.
  idx.reserve(static_cast<std::size_t>(max_len));
  for (int i = 0; i < max_len; ++i) {
    const double pos = static_cast<double>(i) * (len - 1) / (max_len - 1);
    idx.push_back(static_cast<int>(std::ceil(pos - 0.5)));
  }
  return idx;
}

Sequence subsample(const Sequence& s, int max_len) {
  s.validate();
  if (s.length() <= max_len) return s;
  const std::vector<int> idx = subsample_indices(s.length(), max_len);
  Sequence out;
  out.dim = s.dim;
  out.label = s.label;
  out.times.reserve(idx.size());
  out.values.reserve(idx.size() * static_cast<std::size_t>(s.dim));
  for (int i : idx) {
    out.times.push_back(s.times[static_cast<std::size_t>(i)]);
    const double* v = s.value(i);
    out.values.insert(out.values.end(), v, v + s.dim);
  }
  return out;
}

}  // namespace seqgp
