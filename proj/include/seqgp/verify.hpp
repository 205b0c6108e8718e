#pragma once

// Self-contained verification suites: each check builds its own inputs,
// compares an implementation path against an independent reference or a
// stated invariant, and reports the worst deviation observed.  They back
// the `verify` CLI subcommand and the acceptance test binary.

#include <cstdint>
#include <string>
#include <vector>

namespace seqgp {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;  // worst-case numbers, thresholds, timings
};

// Covariance paths (tensor/tensor, tensor/sequence, sequence/sequence,
// self) against the brute-force enumeration oracle on random small
// instances covering both static kernels, normalization on/off, lags and
// time augmentation.  Tolerance: relative error 1e-10.
CheckResult verify_oracle_equivalence(int n_cases = 200, std::uint64_t seed = 1);

// Straight-line paths split into N in {2,4,8,16} segments: level-m Gram
// entries must match C(N,m)^2 <v,w>^m / N^(2m) to 1e-12 relative and
// approach <v,w>^m / (m!)^2 monotonically as N grows.
CheckResult verify_refinement();

// Duplicate-point insertion, padding by tabulation, and timestamp
// relabeling (tau = 0, no lags) change no Gram entry by more than 1e-12
// relative; with normalization and the linear kernel, scaling every value
// by c in {0.1, 10} changes entries by at most 1e-10.
CheckResult verify_invariances(std::uint64_t seed = 2);

// Random sequence Grams (n = 8) and joint inducing/sequence blocks have
// min eigenvalue >= -1e-8 * max eigenvalue after 1e-8 diagonal jitter.
CheckResult verify_psd(int n_cases = 50, std::uint64_t seed = 3);

// Tape gradients of the training objective against central finite
// differences over every parameter group at random points, fixed Monte
// Carlo draws.  Tolerance: relative error 1e-4.
CheckResult verify_gradient_check(int n_cases = 20, std::uint64_t seed = 4);

// kl_whitened against the dense Gaussian KL formula on random states
// (tolerance 1e-10) and exactness at the identity initialization.
CheckResult verify_kl(int n_cases = 50, std::uint64_t seed = 5);

// Linear-in-length contract of the tensor/sequence block: doubling the
// sequence length from len_lo to len_hi may grow the wall time of
// cov_cross by at most max_ratio (medians over reps; normalization off,
// since sequence self-norms are quadratic in length by nature).
CheckResult verify_complexity(int len_lo = 500, int len_hi = 1000, int reps = 3,
                              double max_ratio = 2.6, std::uint64_t seed = 6);

// Every check above; `include_timing` drops the wall-clock-sensitive
// complexity check (useful under instrumented builds).
std::vector<CheckResult> run_all_checks(bool include_timing = true);

}  // namespace seqgp
