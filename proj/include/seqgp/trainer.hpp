#pragma once

// Gradient training of the sparse variational classifier.
//
// All free parameters live in one flat unconstrained vector theta; positive
// quantities (level scalings, scale multiplier, time scale, lengthscales,
// Cholesky diagonals) are mapped through softplus.  The minibatch objective
// is recorded on an ad::Tape by the same templated covariance engine that
// serves the plain-double path, so one reverse sweep yields the gradient
// with respect to every trainable group.  Groups excluded from the current
// phase are lifted as literals: they record no tape nodes and their entries
// of theta are left exactly unchanged by the optimizer.
//
// The schedule has four phases:
//   warmup  - variational parameters only (means, factors, inducing inputs)
//   hypers  - everything except the per-level scalings, early-stopped on
//             validation performance
//   all     - every group, early-stopped
//   final   - validation split merged back in, variational parameters only
// Early-stopped phases restore the best parameters seen.  Every random
// choice (split, initialization, minibatch order, Monte Carlo draws) is
// derived from the master seed, so a run is a deterministic function of
// (data, seed, config).

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "seqgp/data_io.hpp"
#include "seqgp/svgp.hpp"

namespace seqgp {

// ---- parameter packing ------------------------------------------------------

enum class ParamGroup : int {
  variational_mean = 0,  // mu_c
  variational_chol = 1,  // L_c (strict lower raw, diagonal softplus)
  inducing = 2,          // tensor z0 + factors, or inducing sequence values
  level_scales = 3,      // sigma'_0..sigma'_M
  scale_mult = 4,        // beta
  time_scale = 5,        // tau (absent when the model fixes tau = 0)
  lengthscales = 6,      // rbf lengthscales (absent for the linear kernel)
};

inline constexpr int n_param_groups = 7;
using GroupMask = std::array<bool, n_param_groups>;

inline constexpr GroupMask mask_variational{true, true, true, false, false, false, false};
inline constexpr GroupMask mask_no_level_scales{true, true, true, false, true, true, true};
inline constexpr GroupMask mask_all{true, true, true, true, true, true, true};
inline constexpr GroupMask mask_none{false, false, false, false, false, false, false};

struct PackLayout {
  int total = 0;
  int n_z = 0, n_classes = 0, depth = 0, aug_dim = 0, dim = 0;
  InducingSet::Kind kind = InducingSet::Kind::tensors;
  bool learn_time_scale = false;  // tau participates iff it starts positive
  bool has_lengthscales = false;  // rbf only
  std::vector<int> seq_len;       // lengths of inducing sequences (sequences mode)
  std::array<int, n_param_groups> offset{};
  std::array<int, n_param_groups> count{};
};

PackLayout make_layout(const Model& m);
std::vector<double> pack_params(const Model& m, const PackLayout& lay);
void unpack_params(const std::vector<double>& theta, const PackLayout& lay, Model& m);

// ---- objective ---------------------------------------------------------------

// Value (and, unless grad is null, gradient) of the full-dataset-scaled
// minibatch objective at unconstrained parameters theta.  `proto` supplies
// everything theta does not: structure, fixed settings, inducing sequence
// time stamps.  Monte Carlo draws are fixed by (seed, example_ids[j]).
// Frozen groups per `trainable` get zero gradient entries.  `scratch`, when
// given, is cleared and reused as the tape to avoid reallocation.
double objective(const Model& proto, const PackLayout& lay, const std::vector<double>& theta,
                 const std::vector<Sequence>& batch, const std::vector<int>& example_ids,
                 double n_total, int n_mc, std::uint64_t seed, const GroupMask& trainable,
                 std::vector<double>* grad, ad::Tape* scratch = nullptr);

// ---- optimizer ----------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// One descent step theta <- theta - lr * dir(grad); `nesterov` selects the
// Nesterov-momentum variant.  A zero gradient entry on fresh state moves
// nothing.
void adam_step(std::vector<double>& theta, const std::vector<double>& grad, AdamState& st,
               double lr, bool nesterov, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// ---- initialization -------------------------------------------------------------

// Rank-one tensors seeded from the data: each factor vector is an augmented
// observation of a randomly chosen training sequence, with the m factors of
// level m drawn at increasing observation indices (with replacement when the
// sequence is shorter than m).  z0 starts at 1.
std::vector<InducingTensor> init_inducing_tensors(const std::vector<Sequence>& train, int n_z,
                                                  const SigKernelParams& p, std::uint64_t seed);

// Inducing sequences seeded as contiguous windows of `target_len`
// observations from randomly chosen training sequences (shorter sequences
// contribute their full length).  Time stamps are kept and stay fixed;
// the values become trainable.
std::vector<Sequence> init_inducing_sequences(const std::vector<Sequence>& train, int n_z,
                                              int target_len, std::uint64_t seed);

// Deterministic stratified split into (train indices, validation indices);
// every class with at least two members keeps at least one validation
// example.  Both index lists come back sorted.
std::pair<std::vector<int>, std::vector<int>> stratified_split(const std::vector<Sequence>& data,
                                                               int n_classes, double val_fraction,
                                                               std::uint64_t seed);

// ---- training loop ----------------------------------------------------------------

struct TrainConfig {
  int n_z = 500;
  InducingSet::Kind inducing_kind = InducingSet::Kind::tensors;
  int inducing_seq_len = 0;  // sequences mode; 0 means depth + 1
  std::string optimizer = "nadam";  // "adam" or "nadam"
  double lr = 1e-3;
  int minibatch = 50;
  int phase_epochs = 500;     // length of the fixed phases ("warmup", "final")
  int patience_epochs = 500;  // early stopping for "hypers" / "all"
  int max_epochs = 100000;    // safety cap per early-stopped phase
  double val_fraction = 0.2;  // must stay in (0, 1)
  int n_mc_train = 32;
  int n_mc_predict = 256;
  int max_len = 500;         // training sequences are subsampled to this
  bool normalize_data = true;
  std::uint64_t seed = 0;
  int threads = 1;  // reserved for callers running several fits; one fit is serial
  bool verbose = false;
};

struct TrainLogRow {
  int epoch = 0;  // global, 1-based, monotone across phases
  std::string phase;
  double elbo = 0.0;      // mean scaled minibatch objective over the epoch
  double val_nlpp = 0.0;  // nan when there is no validation split
  double val_acc = 0.0;
  double seconds = 0.0;  // wall clock since training started
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  void write_csv(std::ostream& os) const;
};

struct TrainResult {
  Model model;
  TrainLog log;
  double final_elbo = 0.0;
  double val_nlpp = 0.0;
  double val_acc = 0.0;
};

// Fits a model on ds.train (ds.test is not touched).  Throws
// std::runtime_error when the objective diverges.
TrainResult train(Dataset ds, SigKernelParams params, const TrainConfig& cfg);

// ---- variational-only refits --------------------------------------------------------

// One fit of the inducing-variable comparison: kernel hyperparameters are
// copied from `hypers` and stay fixed, the inducing variables (of the
// requested kind and count) and the variational state are initialized fresh
// from cfg.seed and optimized for exactly `epochs` epochs on the full
// training split.  The reported objective is evaluated over the whole
// training set with draws that do not depend on cfg.seed, so values are
// comparable across seeds and variants; accuracy/nlpp come from ds.test
// when present (ds.train otherwise).
struct VariationalFit {
  Model model;
  double elbo = 0.0;
  double accuracy = 0.0;
  double mean_nlpp = 0.0;
};

VariationalFit fit_variational(const Model& hypers, Dataset ds, InducingSet::Kind kind, int n_z,
                               int epochs, const TrainConfig& cfg);

// ---- evaluation -------------------------------------------------------------------

struct EvalResult {
  double accuracy = 0.0;   // over labeled examples
  double mean_nlpp = 0.0;  // over labeled examples
  std::vector<int> predicted;
  std::vector<double> probs;  // n * n_classes
};

// Predicts with a trained model.  When the model was fit on normalized data
// and `normalized_input` is false, the stored transform is applied first.
// Per-example Monte Carlo draws are fixed by (seed, position).
EvalResult evaluate(const Model& m, const std::vector<Sequence>& data, int n_mc,
                    std::uint64_t seed, bool normalized_input = false);

}  // namespace seqgp
