#pragma once

// Sparse variational inference for multi-class GP classification with the
// sequence kernel.  One latent GP per class, all sharing the kernel; the
// posterior over inducing values is whitened: with K_ZZ = L_K L_K^T the
// variational distribution per class c is q(u_c) = N(mu_c, L_c L_c^T) over
// whitened coordinates, so the prior is N(0, I) and the KL term is closed
// form.  Marginals at a sequence x follow from A = L_K^{-1} k_Zx:
//
//   mean_c = A^T mu_c,   var_c = k_xx - |A|^2 + |L_c^T A|^2
//
// The softmax likelihood has no closed-form expectation; it is estimated
// by Monte Carlo with draws fixed by (seed, example id), which makes the
// objective a deterministic function of the parameters.

#include <cstdint>
#include <string>
#include <vector>

#include "seqgp/sequence.hpp"
#include "seqgp/sig_kernel.hpp"

namespace seqgp {

// ---- small dense routines, scalar-generic for tape recording -------------

namespace linalg {

// In-place lower Cholesky of a row-major n x n matrix (upper part ignored
// and zeroed).  Returns false on a non-positive pivot (checked on primal
// values).
template <class S>
bool cholesky_lower(int n, std::vector<S>& a) {
  using std::sqrt;
  for (int j = 0; j < n; ++j) {
    S d = a[static_cast<std::size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      const S& l = a[static_cast<std::size_t>(j) * n + k];
      d = d - l * l;
    }
    if (!(ad::value_of(d) > 0.0)) return false;
    const S root = sqrt(d);
    a[static_cast<std::size_t>(j) * n + j] = root;
    for (int i = j + 1; i < n; ++i) {
      S s = a[static_cast<std::size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        s = s - a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
      a[static_cast<std::size_t>(i) * n + j] = s / root;
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) a[static_cast<std::size_t>(i) * n + j] = S(0);
  return true;
}

// b <- L^{-1} b for lower-triangular L.
template <class S>
void solve_lower_inplace(int n, const std::vector<S>& L, S* b) {
  for (int i = 0; i < n; ++i) {
    S s = b[i];
    for (int k = 0; k < i; ++k) s = s - L[static_cast<std::size_t>(i) * n + k] * b[k];
    b[i] = s / L[static_cast<std::size_t>(i) * n + i];
  }
}

}  // namespace linalg

// ---- variational state ----------------------------------------------------

struct VariationalState {
  int n_z = 0, n_classes = 0;
  std::vector<double> mu;  // n_classes * n_z
  std::vector<double> L;   // n_classes * n_z * n_z, lower triangular, diag > 0

  static VariationalState init_identity(int n_z, int n_classes);

  double* mu_c(int c) { return mu.data() + static_cast<std::size_t>(c) * n_z; }
  const double* mu_c(int c) const { return mu.data() + static_cast<std::size_t>(c) * n_z; }
  double* L_c(int c) { return L.data() + static_cast<std::size_t>(c) * n_z * n_z; }
  const double* L_c(int c) const { return L.data() + static_cast<std::size_t>(c) * n_z * n_z; }
  void validate() const;
};

// Inducing variables: either rank-one tensors in feature space or short
// sequences treated as ordinary kernel inputs.
struct InducingSet {
  enum class Kind { tensors, sequences };
  Kind kind = Kind::tensors;
  std::vector<InducingTensor> tensors;
  std::vector<Sequence> sequences;

  int size() const {
    return static_cast<int>(kind == Kind::tensors ? tensors.size() : sequences.size());
  }
};

// KL(q || N(0, I)) summed over classes, in whitened coordinates:
//   1/2 (|mu_c|^2 + |L_c|_F^2 - n_z - 2 sum_i log L_c[i,i])
double kl_whitened(const VariationalState& s);

// ---- posterior marginals ---------------------------------------------------

struct CholeskyFactor {
  int n = 0;
  std::vector<double> L;  // row-major lower triangular
  double jitter = 0.0;    // jitter that made the factorization succeed
};

// Cholesky of a symmetric covariance block with jitter escalation
// 1e-6 -> 1e-5 -> 1e-4; throws std::runtime_error when even the largest
// jitter leaves a non-positive pivot.
CholeskyFactor cholesky_with_jitter(const GramBlock& K);

// Per-class marginal moments for a batch of sequences.  Layout is
// example-major: mean[j * n_classes + c].
struct BatchMarginals {
  int n = 0, n_classes = 0;
  std::vector<double> mean, var;
};

BatchMarginals marginal_q(const CholeskyFactor& Lk, const GramBlock& k_zx,
                          const std::vector<double>& k_xx, const VariationalState& s,
                          double var_floor = 1e-12);

// ---- Monte Carlo likelihood -------------------------------------------------

// splitmix64 mixing; used to derive independent per-purpose, per-example
// RNG streams from one master seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

// n_mc * n_classes standard normal draws, fixed by the seed.
std::vector<double> mc_normals(std::uint64_t seed, int n_mc, int n_classes);

// Monte Carlo estimate of E_q[log softmax_label(f)] at one example's
// marginals, using the draws of mc_normals(seed, ...).
double expected_log_lik(const double* means, const double* vars, int n_classes, int label,
                        int n_mc, std::uint64_t seed);

// Data term sum_j (n_total / batch) E_q[log p(y_j | f_j)] minus the KL.
// Per-example draws are derived from (seed, example_ids[j]) so disjoint
// minibatches of one dataset reuse identical draws per example.
double elbo(const BatchMarginals& m, const std::vector<int>& labels,
            const std::vector<int>& example_ids, const VariationalState& s, double n_total,
            int n_mc, std::uint64_t seed);

// Predictive class probabilities: Monte Carlo average of softmax(f),
// renormalized.  nlpp is -log prob[label].
std::vector<double> predict_probs(const double* means, const double* vars, int n_classes,
                                  int n_mc, std::uint64_t seed);
double nlpp(const std::vector<double>& probs, int label);

// ---- model container + checkpointing ---------------------------------------

struct Model {
  SigKernelParams params;
  InducingSet inducing;
  VariationalState vstate;
  int n_classes = 0;
  int state_dim = 0;
  // Data normalization snapshot so eval-time inputs get the same transform.
  bool data_normalized = false;
  std::vector<double> data_mean, data_std;
};

// Versioned JSON checkpoint; doubles survive the round trip bit-exactly.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace seqgp
