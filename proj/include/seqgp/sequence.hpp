#pragma once

// Sequence containers and the preprocessing steps shared by every kernel
// evaluation: time-scale augmentation, lagged coordinate augmentation,
// increment extraction, tabulation of ragged batches, and deterministic
// down-sampling of over-long sequences.

#include <stdexcept>
#include <string>
#include <vector>

#include "seqgp/tape.hpp"

namespace seqgp {

// A variable-length multivariate sequence: `len` observations of dimension
// `dim` at strictly increasing time stamps.
struct Sequence {
  std::vector<double> times;   // size len
  std::vector<double> values;  // len * dim, row-major
  int dim = 0;
  int label = -1;  // -1 when unlabeled

  int length() const { return static_cast<int>(times.size()); }
  const double* value(int i) const { return values.data() + static_cast<std::size_t>(i) * dim; }
  void validate() const;
};

// A sequence embedded in the augmented state space of dimension
// 1 + dim * (1 + n_lags): coordinate 0 carries tau * t, coordinates
// 1..dim the raw observations, and one block of dim coordinates per lag.
struct AugmentedSequence {
  std::vector<double> values;  // len * aug_dim
  int aug_dim = 0;
  std::vector<double> times;  // copy of the source time stamps
  int label = -1;

  int length() const { return aug_dim == 0 ? 0 : static_cast<int>(times.size()); }
  const double* state(int i) const {
    return values.data() + static_cast<std::size_t>(i) * aug_dim;
  }
};

// Dense batch of augmented sequences, padded to the longest length by
// repeating each sequence's final state.  Repeated states contribute zero
// increments, so padding never changes a covariance value.
struct SequenceBatch {
  int n = 0, len = 0, dim = 0;
  std::vector<double> states;  // n * len * dim
  std::vector<int> eff_len;    // true lengths
  std::vector<int> labels;

  const double* state(int i, int l) const {
    return states.data() + (static_cast<std::size_t>(i) * len + l) * dim;
  }
};

namespace detail {

// Linear interpolation of a `dim`-valued series at query time q, with flat
// extrapolation to the first observation when q precedes it.  Interpolation
// weights depend on the (fixed) time stamps only, so the value type may be
// a differentiable scalar.
template <class S>
void interpolate_at(const std::vector<double>& times, const S* values, int len, int dim, double q,
                    S* out) {
  if (len == 1 || q <= times.front()) {
    for (int j = 0; j < dim; ++j) out[j] = values[j];
    return;
  }
  if (q >= times.back()) {
    const S* last = values + static_cast<std::size_t>(len - 1) * dim;
    for (int j = 0; j < dim; ++j) out[j] = last[j];
    return;
  }
  int hi = 1;
  while (times[hi] < q) ++hi;
  const double w = (q - times[hi - 1]) / (times[hi] - times[hi - 1]);
  const S* a = values + static_cast<std::size_t>(hi - 1) * dim;
  const S* b = values + static_cast<std::size_t>(hi) * dim;
  for (int j = 0; j < dim; ++j) out[j] = S(1.0 - w) * a[j] + S(w) * b[j];
}

// Shared implementation of the augmentation map for plain and
// differentiable values.  Output layout per observation i:
//   [ tau * t_i | x_i (dim) | lag block per entry of `lags` (dim each) ]
template <class S>
void build_augmented_states(const std::vector<double>& times, const S* values, int len, int dim,
                            const S& tau, const std::vector<double>& lags, S* out) {
  const int aug_dim = 1 + dim * (1 + static_cast<int>(lags.size()));
  std::vector<S> lagv(static_cast<std::size_t>(dim));
  for (int i = 0; i < len; ++i) {
    S* row = out + static_cast<std::size_t>(i) * aug_dim;
    row[0] = tau * S(times[static_cast<std::size_t>(i)]);
    const S* src = values + static_cast<std::size_t>(i) * dim;
    for (int j = 0; j < dim; ++j) row[1 + j] = src[j];
    for (std::size_t c = 0; c < lags.size(); ++c) {
      interpolate_at(times, values, len, dim, times[static_cast<std::size_t>(i)] - lags[c],
                     lagv.data());
      for (int j = 0; j < dim; ++j) row[1 + dim * (1 + static_cast<int>(c)) + j] = lagv[j];
    }
  }
}

}  // namespace detail

// Augmented dimension for raw dimension d with p lags.
inline int augmented_dim(int dim, int n_lags) { return 1 + dim * (1 + n_lags); }

// Maps augmented coordinate index to its source dimension in the raw state
// space, or -1 for the time coordinate.  Lagged copies map to the dimension
// they lag, so they share that dimension's lengthscale.
inline int source_dim(int aug_coord, int dim) {
  return aug_coord == 0 ? -1 : (aug_coord - 1) % dim;
}

AugmentedSequence augment(const Sequence& s, double tau, const std::vector<double>& lags);

// Difference vectors between consecutive augmented states; (len-1) * aug_dim,
// empty for a length-1 sequence.
std::vector<double> increments(const AugmentedSequence& a);

SequenceBatch tabulate(const std::vector<AugmentedSequence>& seqs);

// Keeps first and last observation and an evenly spread interior; identity
// when the sequence is already short enough.
Sequence subsample(const Sequence& s, int max_len);

// Index pattern used by subsample, exposed for reuse and direct testing.
std::vector<int> subsample_indices(int len, int max_len);

}  // namespace seqgp
