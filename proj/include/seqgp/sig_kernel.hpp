#pragma once

// Truncated signature covariances between sequences, between inducing
// tensors, and across the two domains.
//
// A sequence x with augmented states u_0..u_{l-1} is represented by the
// feature tuple (1, F_1(x), ..., F_M(x)) where level m collects iterated
// sums over strictly increasing index tuples of lifted increments
//
//   F_m(x) = sum_{i_1 < ... < i_m} d u_{i_1} (x) ... (x) d u_{i_m}.
//
// Inner products between levels reduce to sums over pairs of increasing
// index tuples of products of increment inner products, and those admit
// a cumulative-sum recursion that is linear in sequence length:
// maintaining A[.., l] = (sum over tuples whose last index is l) and
// folding one factor at a time via an exclusive cumulative sum.
//
// An inducing tensor z = (z_0, v_{1,1}, ..., v_{M,1..M}) lives in the same
// feature space with rank-one levels z_m = v_{m,1} (x) ... (x) v_{m,m}, so
// tensor/tensor covariances are products of factor inner products and
// tensor/sequence covariances replace one side of the recursion by fixed
// factors.  Under the RBF lift, factor vectors act as kernel sections
// kappa(a, .) anchored at points a of the augmented space, and every
// inner product above becomes a kernel evaluation or difference thereof.
//
// Per-level normalization rescales each *sequence* level to unit norm
// (levels of inducing tensors are free parameters and stay unscaled);
// level scalings sigma_m = beta * sigma'_m are applied after that.
//
// Everything is templated on the scalar so the identical recursion can be
// recorded on an ad::Tape; the plain `double` entry points below are thin
// wrappers.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "seqgp/ndarray.hpp"
#include "seqgp/sequence.hpp"
#include "seqgp/static_kernel.hpp"
#include "seqgp/tape.hpp"

namespace seqgp {

struct SigKernelParams {
  int depth = 4;                         // truncation level M
  std::vector<double> sigma_prime;       // per-level scalings sigma'_0..sigma'_M
  double beta = 1.0;                     // shared scale multiplier
  double tau = 0.0;                      // time coordinate scale (0: ignore time)
  std::vector<double> lags;              // lag offsets in absolute time units
  bool normalize_levels = true;
  StaticKernelParams static_kernel;

  std::vector<double> sigma() const;     // effective sigma_m = beta * sigma'_m
  std::vector<double> sigma_sq() const;  // sigma_m^2
  void validate(int state_dim) const;
  std::uint64_t hash(int state_dim) const;  // parameter snapshot fingerprint
};

// Rank-one inducing tensor: scalar level 0 plus m factor vectors per level
// m = 1..M, each of augmented dimension.  Under the RBF lift the factor
// vectors are anchor points in the augmented space.
struct InducingTensor {
  double z0 = 1.0;
  std::vector<std::vector<double>> levels;  // levels[m-1]: m * aug_dim

  int depth() const { return static_cast<int>(levels.size()); }
  int aug_dim() const {
    return levels.empty() ? 0 : static_cast<int>(levels.front().size());
  }
  const double* factor(int m, int k) const {  // level m (1-based), factor k (0-based)
    return levels[static_cast<std::size_t>(m - 1)].data() +
           static_cast<std::size_t>(k) * aug_dim();
  }
  void validate(int expect_aug_dim, int depth_m) const;
};

// Dense covariance block with provenance: which tensors/sequences produced
// the rows and columns, and a fingerprint of the parameters used.
struct GramBlock {
  int rows = 0, cols = 0;
  std::vector<double> data;  // row-major
  std::vector<std::string> row_ids, col_ids;
  std::uint64_t params_hash = 0;

  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
  void write_csv(std::ostream& os) const;
  void validate_finite() const;
};

// ---------------------------------------------------------------------------
// Scalar-generic engine
// ---------------------------------------------------------------------------

namespace engine {

template <class S>
struct Config {
  KernelKind kind = KernelKind::rbf;
  int aug_dim = 0;
  int depth = 0;
  bool normalize = false;
  std::vector<S> gammas;    // aug_dim inverse squared lengthscales (rbf)
  std::vector<S> sigma_sq;  // depth+1 effective squared level scalings
};

template <class S>
struct Batch {
  int n = 0, len = 0, dim = 0;
  std::vector<S> states;  // n * len * dim (padded by repeated final states)

  const S* state(int i, int l) const {
    return states.data() + (static_cast<std::size_t>(i) * len + l) * dim;
  }
};

template <class S>
struct Tensors {
  int n = 0, dim = 0, depth = 0;
  std::vector<S> z0;                      // n
  std::vector<std::vector<S>> factors;    // [m-1]: n * m * dim

  const S* factor(int i, int m, int k) const {
    return factors[static_cast<std::size_t>(m - 1)].data() +
           (static_cast<std::size_t>(i) * m + k) * dim;
  }
};

template <class S>
S increment_ip(const S* x_lo, const S* x_hi, const S* y_lo, const S* y_hi, const Config<S>& cfg) {
  if (cfg.kind == KernelKind::linear) {
    S acc = S(0);
    for (int j = 0; j < cfg.aug_dim; ++j) acc = acc + (x_hi[j] - x_lo[j]) * (y_hi[j] - y_lo[j]);
    return acc;
  }
  const S* g = cfg.gammas.data();
  return kappa_aug(x_hi, y_hi, cfg.aug_dim, cfg.kind, g) -
         kappa_aug(x_lo, y_hi, cfg.aug_dim, cfg.kind, g) -
         kappa_aug(x_hi, y_lo, cfg.aug_dim, cfg.kind, g) +
         kappa_aug(x_lo, y_lo, cfg.aug_dim, cfg.kind, g);
}

template <class S>
S factor_ip(const S* a, const S* b, const Config<S>& cfg) {
  if (cfg.kind == KernelKind::linear) {
    S acc = S(0);
    for (int j = 0; j < cfg.aug_dim; ++j) acc = acc + a[j] * b[j];
    return acc;
  }
  return kappa_aug(a, b, cfg.aug_dim, cfg.kind, cfg.gammas.data());
}

template <class S>
S factor_increment_ip(const S* a, const S* x_lo, const S* x_hi, const Config<S>& cfg) {
  if (cfg.kind == KernelKind::linear) {
    S acc = S(0);
    for (int j = 0; j < cfg.aug_dim; ++j) acc = acc + a[j] * (x_hi[j] - x_lo[j]);
    return acc;
  }
  const S* g = cfg.gammas.data();
  return kappa_aug(a, x_hi, cfg.aug_dim, cfg.kind, g) -
         kappa_aug(a, x_lo, cfg.aug_dim, cfg.kind, g);
}

// Tensor/tensor level values: per level m a (na x nb) array of factorwise
// inner product products.
template <class S>
std::vector<NdArray<S>> levels_inducing(const Tensors<S>& A, const Tensors<S>& B,
                                        const Config<S>& cfg) {
  std::vector<NdArray<S>> out;
  out.reserve(static_cast<std::size_t>(cfg.depth));
  for (int m = 1; m <= cfg.depth; ++m) {
    NdArray<S> G({A.n, B.n}, S(1));
    for (int k = 0; k < m; ++k)
      for (int i = 0; i < A.n; ++i)
        for (int j = 0; j < B.n; ++j)
          G.data[static_cast<std::size_t>(i) * B.n + j] =
              G.data[static_cast<std::size_t>(i) * B.n + j] *
              factor_ip(A.factor(i, m, k), B.factor(j, m, k), cfg);
    out.push_back(std::move(G));
  }
  return out;
}

// Tensor/sequence level values.  For each level m the m factor planes
// P_k[i, j, l] = <v^i_{m,k}, d u_{j,l}> form one slab (stored as m
// contiguous (nZ x nX x len-1) planes, so no axis is ragged); the
// recursion folds the planes with exclusive cumulative sums along l:
//
//   A = P_1;  A <- P_k (.) exclusive-cumsum_l(A)  for k = 2..m
//
// after which A[i, j, l] sums all increasing index tuples ending at l and
// the slice sum over l is the level value.
template <class S>
std::vector<NdArray<S>> levels_cross(const Tensors<S>& Z, const Batch<S>& X,
                                     const Config<S>& cfg) {
  const int L = X.len - 1;
  std::vector<NdArray<S>> out;
  out.reserve(static_cast<std::size_t>(cfg.depth));
  std::vector<S> row(static_cast<std::size_t>(std::max(L + 1, 1)));
  for (int m = 1; m <= cfg.depth; ++m) {
    std::vector<NdArray<S>> slab;  // m factor planes
    slab.reserve(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) {
      NdArray<S> plane({Z.n, X.n, L}, S(0));
      for (int i = 0; i < Z.n; ++i) {
        const S* v = Z.factor(i, m, k);
        for (int j = 0; j < X.n; ++j) {
          S* dst = plane.data.data() + (static_cast<std::size_t>(i) * X.n + j) * L;
          if (cfg.kind == KernelKind::linear) {
            for (int l = 0; l < L; ++l)
              dst[l] = factor_increment_ip(v, X.state(j, l), X.state(j, l + 1), cfg);
          } else {
            // One kernel evaluation per observation, differenced along l.
            for (int l = 0; l <= L; ++l)
              row[static_cast<std::size_t>(l)] =
                  kappa_aug(v, X.state(j, l), cfg.aug_dim, cfg.kind, cfg.gammas.data());
            for (int l = 0; l < L; ++l)
              dst[l] = row[static_cast<std::size_t>(l + 1)] - row[static_cast<std::size_t>(l)];
          }
        }
      }
      slab.push_back(std::move(plane));
    }
    NdArray<S> A = std::move(slab.front());
    for (int k = 1; k < m; ++k) {
      exclusive_cumsum_inplace(A, 2);
      hadamard_inplace(A, slab[static_cast<std::size_t>(k)]);
    }
    out.push_back(slicesum(A, 2));
  }
  return out;
}

// All increment inner products between sequence i of X and sequence j of Y,
// written to dst as one (Lx x Ly) plane. Under the RBF lift this evaluates
// the kernel once per observation pair and double-differences the grid, so
// each evaluation feeds up to four increment entries instead of one.
template <class S>
void increment_plane(const Batch<S>& X, int i, const Batch<S>& Y, int j, const Config<S>& cfg,
                     std::vector<S>& grid, S* dst) {
  const int Lx = X.len - 1, Ly = Y.len - 1;
  if (cfg.kind == KernelKind::linear) {
    for (int lx = 0; lx < Lx; ++lx)
      for (int ly = 0; ly < Ly; ++ly)
        dst[static_cast<std::size_t>(lx) * Ly + ly] =
            increment_ip(X.state(i, lx), X.state(i, lx + 1), Y.state(j, ly), Y.state(j, ly + 1),
                         cfg);
    return;
  }
  grid.assign(static_cast<std::size_t>(Lx + 1) * (Ly + 1), S(0));
  for (int lx = 0; lx <= Lx; ++lx)
    for (int ly = 0; ly <= Ly; ++ly)
      grid[static_cast<std::size_t>(lx) * (Ly + 1) + ly] =
          kappa_aug(X.state(i, lx), Y.state(j, ly), cfg.aug_dim, cfg.kind, cfg.gammas.data());
  for (int lx = 0; lx < Lx; ++lx)
    for (int ly = 0; ly < Ly; ++ly)
      dst[static_cast<std::size_t>(lx) * Ly + ly] =
          grid[static_cast<std::size_t>(lx + 1) * (Ly + 1) + ly + 1] -
          grid[static_cast<std::size_t>(lx) * (Ly + 1) + ly + 1] -
          grid[static_cast<std::size_t>(lx + 1) * (Ly + 1) + ly] +
          grid[static_cast<std::size_t>(lx) * (Ly + 1) + ly];
}

// Sequence/sequence level values via the two-axis variant: with
// E[i, j, lx, ly] = <d u_{i,lx}, d w_{j,ly}>,
//
//   A = E;  A <- E (.) exclusive-cumsum_lx exclusive-cumsum_ly (A)
//
// raises the level by one per step; slice sums over both increment axes
// give the level values.
template <class S>
std::vector<NdArray<S>> levels_pair(const Batch<S>& X, const Batch<S>& Y, const Config<S>& cfg) {
  const int Lx = X.len - 1, Ly = Y.len - 1;
  NdArray<S> E({X.n, Y.n, Lx, Ly}, S(0));
  std::vector<S> grid;
  for (int i = 0; i < X.n; ++i)
    for (int j = 0; j < Y.n; ++j)
      increment_plane(X, i, Y, j, cfg, grid,
                      E.data.data() + (static_cast<std::size_t>(i) * Y.n + j) * Lx * Ly);

  std::vector<NdArray<S>> out;
  out.reserve(static_cast<std::size_t>(cfg.depth));
  NdArray<S> A = E;
  out.push_back(slicesum(slicesum(A, 3), 2));
  for (int m = 2; m <= cfg.depth; ++m) {
    exclusive_cumsum_inplace(A, 2);
    exclusive_cumsum_inplace(A, 3);
    hadamard_inplace(A, E);
    out.push_back(slicesum(slicesum(A, 3), 2));
  }
  return out;
}

// Per-sequence level self values (the diagonal of levels_pair(X, X),
// without forming the full cross block).
template <class S>
std::vector<std::vector<S>> levels_diag(const Batch<S>& X, const Config<S>& cfg) {
  const int L = X.len - 1;
  std::vector<std::vector<S>> out(static_cast<std::size_t>(cfg.depth),
                                  std::vector<S>(static_cast<std::size_t>(X.n), S(0)));
  NdArray<S> E({L, L}, S(0));
  std::vector<S> grid;
  for (int i = 0; i < X.n; ++i) {
    increment_plane(X, i, X, i, cfg, grid, E.data.data());
    NdArray<S> A = E;
    for (int m = 1; m <= cfg.depth; ++m) {
      if (m > 1) {
        exclusive_cumsum_inplace(A, 0);
        exclusive_cumsum_inplace(A, 1);
        hadamard_inplace(A, E);
      }
      S acc = S(0);
      for (const S& v : A.data) acc = acc + v;
      out[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)] = acc;
    }
  }
  return out;
}

// Normalization factors 1 / ||F_m(x)|| from the level self values; a level
// with vanishing norm is left unscaled (factor 1) and reported.
template <class S>
std::vector<std::vector<S>> level_norm_factors(const std::vector<std::vector<S>>& diag,
                                               bool* degenerate) {
  using std::sqrt;
  std::vector<std::vector<S>> inv(diag.size());
  for (std::size_t m = 0; m < diag.size(); ++m) {
    inv[m].reserve(diag[m].size());
    for (const S& v : diag[m]) {
      if (ad::value_of(v) > 0.0) {
        inv[m].push_back(S(1) / sqrt(v));
      } else {
        if (degenerate) *degenerate = true;
        inv[m].push_back(S(1));
      }
    }
  }
  return inv;
}

// ---- assembly -------------------------------------------------------------

template <class S>
NdArray<S> assemble_inducing(const Tensors<S>& Z, const Config<S>& cfg) {
  auto levels = levels_inducing(Z, Z, cfg);
  NdArray<S> K({Z.n, Z.n}, S(0));
  for (int i = 0; i < Z.n; ++i)
    for (int j = 0; j < Z.n; ++j) {
      S acc = cfg.sigma_sq[0] * Z.z0[static_cast<std::size_t>(i)] *
              Z.z0[static_cast<std::size_t>(j)];
      for (int m = 1; m <= cfg.depth; ++m)
        acc = acc + cfg.sigma_sq[static_cast<std::size_t>(m)] *
                        levels[static_cast<std::size_t>(m - 1)]
                            .data[static_cast<std::size_t>(i) * Z.n + j];
      K.data[static_cast<std::size_t>(i) * Z.n + j] = acc;
    }
  return K;
}

template <class S>
NdArray<S> assemble_cross(const Tensors<S>& Z, const Batch<S>& X, const Config<S>& cfg,
                          bool* degenerate = nullptr) {
  auto levels = levels_cross(Z, X, cfg);
  std::vector<std::vector<S>> inv_norm;
  if (cfg.normalize) inv_norm = level_norm_factors(levels_diag(X, cfg), degenerate);
  NdArray<S> K({Z.n, X.n}, S(0));
  for (int i = 0; i < Z.n; ++i)
    for (int j = 0; j < X.n; ++j) {
      S acc = cfg.sigma_sq[0] * Z.z0[static_cast<std::size_t>(i)];
      for (int m = 1; m <= cfg.depth; ++m) {
        S lv = levels[static_cast<std::size_t>(m - 1)].data[static_cast<std::size_t>(i) * X.n + j];
        if (cfg.normalize)
          lv = lv * inv_norm[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
        acc = acc + cfg.sigma_sq[static_cast<std::size_t>(m)] * lv;
      }
      K.data[static_cast<std::size_t>(i) * X.n + j] = acc;
    }
  return K;
}

// Sequence/sequence block, optionally returning the per-level scaled
// contributions (levels_out[m] then sums to the returned block).
template <class S>
NdArray<S> assemble_pair(const Batch<S>& X, const Batch<S>& Y, const Config<S>& cfg,
                         bool* degenerate = nullptr,
                         std::vector<NdArray<S>>* levels_out = nullptr) {
  auto levels = levels_pair(X, Y, cfg);
  std::vector<std::vector<S>> inv_x, inv_y;
  if (cfg.normalize) {
    inv_x = level_norm_factors(levels_diag(X, cfg), degenerate);
    inv_y = level_norm_factors(levels_diag(Y, cfg), degenerate);
  }
  if (levels_out) levels_out->assign(static_cast<std::size_t>(cfg.depth) + 1, NdArray<S>());
  NdArray<S> lev0({X.n, Y.n}, cfg.sigma_sq[0]);
  if (levels_out) (*levels_out)[0] = lev0;
  NdArray<S> K = lev0;
  for (int m = 1; m <= cfg.depth; ++m) {
    NdArray<S>& G = levels[static_cast<std::size_t>(m - 1)];
    for (int i = 0; i < X.n; ++i)
      for (int j = 0; j < Y.n; ++j) {
        S lv = G.data[static_cast<std::size_t>(i) * Y.n + j];
        if (cfg.normalize)
          lv = lv * inv_x[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)] *
               inv_y[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
        lv = cfg.sigma_sq[static_cast<std::size_t>(m)] * lv;
        G.data[static_cast<std::size_t>(i) * Y.n + j] = lv;
        K.data[static_cast<std::size_t>(i) * Y.n + j] =
            K.data[static_cast<std::size_t>(i) * Y.n + j] + lv;
      }
    if (levels_out) (*levels_out)[static_cast<std::size_t>(m)] = std::move(G);
  }
  return K;
}

template <class S>
std::vector<S> assemble_diag(const Batch<S>& X, const Config<S>& cfg,
                             bool* degenerate = nullptr) {
  auto diag = levels_diag(X, cfg);
  auto inv = cfg.normalize ? level_norm_factors(diag, degenerate)
                           : std::vector<std::vector<S>>();
  std::vector<S> out(static_cast<std::size_t>(X.n), S(0));
  for (int i = 0; i < X.n; ++i) {
    S acc = cfg.sigma_sq[0];
    for (int m = 1; m <= cfg.depth; ++m) {
      S lv = diag[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)];
      if (cfg.normalize) {
        const S& f = inv[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)];
        lv = lv * f * f;
      }
      acc = acc + cfg.sigma_sq[static_cast<std::size_t>(m)] * lv;
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

}  // namespace engine

// ---------------------------------------------------------------------------
// Plain-double entry points
// ---------------------------------------------------------------------------

engine::Config<double> make_engine_config(const SigKernelParams& p, int state_dim);
engine::Batch<double> make_engine_batch(const SequenceBatch& b);
engine::Tensors<double> make_engine_tensors(const std::vector<InducingTensor>& z);

// K_ZZ: covariances between inducing tensors.
GramBlock cov_inducing(const std::vector<InducingTensor>& Z, const SigKernelParams& p,
                       int state_dim);

// K_ZX: covariances between inducing tensors and a batch of raw sequences
// (augmentation and tabulation happen inside).
GramBlock cov_cross(const std::vector<InducingTensor>& Z, const std::vector<Sequence>& X,
                    const SigKernelParams& p);

// K_XY between two batches of raw sequences (pass the same vector twice for
// a symmetric block).
GramBlock cov_sequences(const std::vector<Sequence>& X, const std::vector<Sequence>& Y,
                        const SigKernelParams& p);

// Per-level scaled contributions of cov_sequences; element [m] holds level
// m's block and the blocks sum to the full covariance.
std::vector<GramBlock> cov_sequences_by_level(const std::vector<Sequence>& X,
                                              const std::vector<Sequence>& Y,
                                              const SigKernelParams& p);

// Self-covariances k(x, x) for each sequence of a batch.
std::vector<double> var_sequences(const std::vector<Sequence>& X, const SigKernelParams& p);

// Batch preparation shared by the entry points above: augment with
// (tau, lags) and tabulate.
SequenceBatch prepare_batch(const std::vector<Sequence>& X, const SigKernelParams& p);

}  // namespace seqgp
