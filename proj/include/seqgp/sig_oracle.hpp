#pragma once

// Brute-force reference implementations of the signature covariances.
//
// Everything here enumerates strictly increasing index tuples directly and
// materializes feature tensors densely where possible.  No cumulative-sum
// recursion, no factor planes, no shared assembly code with the fast
// engine: these functions are the ground truth the engine is compared
// against, so they stay deliberately naive and combinatorial.  Guards trip
// well before the enumeration becomes expensive.

#include <vector>

#include "seqgp/sequence.hpp"
#include "seqgp/sig_kernel.hpp"

namespace seqgp {

// Dense truncated signature: level m stored as the full dim^m coefficient
// array (row-major over the m coordinate indices).
struct DenseSignature {
  int dim = 0;
  int depth = 0;
  double level0 = 1.0;
  std::vector<std::vector<double>> levels;  // levels[m-1]: dim^m
};

// Dense signature of an augmented sequence (Euclidean increments; for the
// RBF lift use the enumeration oracles below, which never materialize).
// Guards: depth <= 5, augmented dim <= 5, length <= 12.
DenseSignature brute_signature(const AugmentedSequence& a, int depth);

// Dense materialization of a rank-one inducing tensor (same guards).
DenseSignature materialize_tensor(const InducingTensor& z);

// sum_m sigma_sq[m] * <level_m(a), level_m(b)>, levels compared densely.
double brute_cov(const DenseSignature& a, const DenseSignature& b,
                 const std::vector<double>& sigma_sq);

// ---- enumeration oracles (handle both static kernels, with or without
// per-level normalization, by summing over index tuples) ----------------

// Unnormalized, unscaled level values <F_m(x), F_m(y)> for m = 1..depth.
std::vector<double> oracle_levels_pair(const Sequence& x, const Sequence& y,
                                       const SigKernelParams& p);

// Unnormalized, unscaled level values <z_m, F_m(x)> for m = 1..depth.
std::vector<double> oracle_levels_cross(const InducingTensor& z, const Sequence& x,
                                        const SigKernelParams& p);

// Unnormalized, unscaled level values <z_m, z'_m> for m = 1..depth.
std::vector<double> oracle_levels_inducing(const InducingTensor& a, const InducingTensor& b,
                                           const SigKernelParams& p, int state_dim);

// Full covariance entries with level scalings and (when enabled) per-level
// sequence-side normalization applied, mirroring the engine's contract.
double oracle_cov_sequences(const Sequence& x, const Sequence& y, const SigKernelParams& p);
double oracle_cov_cross(const InducingTensor& z, const Sequence& x, const SigKernelParams& p);
double oracle_cov_inducing(const InducingTensor& a, const InducingTensor& b,
                           const SigKernelParams& p, int state_dim);
double oracle_var(const Sequence& x, const SigKernelParams& p);

}  // namespace seqgp
