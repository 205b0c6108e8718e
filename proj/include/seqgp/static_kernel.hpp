#pragma once

// Static kernels on the (augmented) state space.  The sequence covariances
// are assembled from inner products between *increments* of sequences
// lifted through one of these kernels: a linear kernel recovers plain
// Euclidean signatures, the RBF kernel lifts each observation into its
// RKHS first.  Increment inner products under a lift are double
// differences of kernel evaluations.

#include <cstdint>
#include <vector>

#include "seqgp/sequence.hpp"
#include "seqgp/tape.hpp"

namespace seqgp {

enum class KernelKind { linear, rbf };

struct StaticKernelParams {
  KernelKind kind = KernelKind::rbf;
  // One positive lengthscale per raw state dimension (rbf only; ignored for
  // linear).  Amplitude is fixed to 1: the per-level scalings of the
  // sequence kernel already absorb any overall scale.
  std::vector<double> lengthscales;

  void validate(int dim) const;
};

// kappa(x, y) for raw state vectors of dimension `dim`:
//   linear: <x, y>
//   rbf:    exp(-1/2 * sum_j (x_j - y_j)^2 / lengthscale_j^2)
double kappa(const double* x, const double* y, int dim, const StaticKernelParams& p);

// Increment inner product under the lift:
//   kappa(x_hi, y_hi) - kappa(x_lo, y_hi) - kappa(x_hi, y_lo) + kappa(x_lo, y_lo)
// For the linear kernel this telescopes to <x_hi - x_lo, y_hi - y_lo>.
double kappa_double_diff(const double* x_lo, const double* x_hi, const double* y_lo,
                         const double* y_hi, int dim, const StaticKernelParams& p);

// Data-driven initial lengthscales: for each dimension the mean squared
// difference between two independently drawn observations, scaled by the
// dimension count, square-rooted.  At most `max_obs` observations are used
// (a seeded uniform subsample when there are more); degenerate dimensions
// are floored at `eps` with a warning.
//
//   obs: n * dim row-major observation matrix.
std::vector<double> init_lengthscales(const std::vector<double>& obs, int dim, std::uint64_t seed,
                                      int max_obs = 1000, double eps = 1e-6);

// ---- augmented-space evaluation (scalar-generic) -------------------------
//
// In the augmented space the RBF kernel uses inverse squared lengthscales
// ("gammas") per coordinate: the time coordinate gets a fixed gamma of 1
// (the time scale tau already carries that scale), and every lagged copy
// shares the gamma of the dimension it lags.

template <class S>
std::vector<S> augmented_gammas(const std::vector<S>& inv_sq_ls, int dim, int n_lags) {
  const int aug = augmented_dim(dim, n_lags);
  std::vector<S> g(static_cast<std::size_t>(aug), S(1.0));
  for (int j = 1; j < aug; ++j) g[static_cast<std::size_t>(j)] = inv_sq_ls[source_dim(j, dim)];
  return g;
}

template <class S>
S kappa_aug(const S* x, const S* y, int aug_dim, KernelKind kind, const S* gammas) {
  using std::exp;
  if (kind == KernelKind::linear) {
    S acc = S(0);
    for (int j = 0; j < aug_dim; ++j) acc = acc + x[j] * y[j];
    return acc;
  }
  S q = S(0);
  for (int j = 0; j < aug_dim; ++j) {
    const S d = x[j] - y[j];
    q = q + d * d * gammas[j];
  }
  return exp(S(-0.5) * q);
}

}  // namespace seqgp
