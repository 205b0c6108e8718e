#include "seqgp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace seqgp {

namespace {

int tensor_param_count(int depth, int aug_dim) {
  // z0 plus m * aug_dim factor entries per level m.
  return 1 + aug_dim * depth * (depth + 1) / 2;
}

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("trainer: " + what); }

}  // namespace

// ---- parameter packing ------------------------------------------------------

PackLayout make_layout(const Model& m) {
  PackLayout lay;
  lay.n_z = m.vstate.n_z;
  lay.n_classes = m.vstate.n_classes;
  lay.depth = m.params.depth;
  lay.dim = m.state_dim;
  lay.aug_dim = augmented_dim(m.state_dim, static_cast<int>(m.params.lags.size()));
  lay.kind = m.inducing.kind;
  lay.learn_time_scale = m.params.tau > 0.0;
  lay.has_lengthscales = m.params.static_kernel.kind == KernelKind::rbf;
  if (m.inducing.size() != lay.n_z) fail("inducing size does not match variational state");
  if (lay.kind == InducingSet::Kind::sequences)
    for (const Sequence& s : m.inducing.sequences) lay.seq_len.push_back(s.length());

  auto& cnt = lay.count;
  cnt[static_cast<int>(ParamGroup::variational_mean)] = lay.n_classes * lay.n_z;
  cnt[static_cast<int>(ParamGroup::variational_chol)] =
      lay.n_classes * lay.n_z * (lay.n_z + 1) / 2;
  int ind = 0;
  if (lay.kind == InducingSet::Kind::tensors) {
    ind = lay.n_z * tensor_param_count(lay.depth, lay.aug_dim);
  } else {
    for (int l : lay.seq_len) ind += l * lay.dim;
  }
  cnt[static_cast<int>(ParamGroup::inducing)] = ind;
  cnt[static_cast<int>(ParamGroup::level_scales)] = lay.depth + 1;
  cnt[static_cast<int>(ParamGroup::scale_mult)] = 1;
  cnt[static_cast<int>(ParamGroup::time_scale)] = lay.learn_time_scale ? 1 : 0;
  cnt[static_cast<int>(ParamGroup::lengthscales)] = lay.has_lengthscales ? lay.dim : 0;

  int off = 0;
  for (int g = 0; g < n_param_groups; ++g) {
    lay.offset[static_cast<std::size_t>(g)] = off;
    off += cnt[static_cast<std::size_t>(g)];
  }
  lay.total = off;
  return lay;
}

std::vector<double> pack_params(const Model& m, const PackLayout& lay) {
  std::vector<double> theta(static_cast<std::size_t>(lay.total), 0.0);
  const int nz = lay.n_z, C = lay.n_classes;
  int k = lay.offset[static_cast<int>(ParamGroup::variational_mean)];
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < nz; ++i) theta[static_cast<std::size_t>(k++)] = m.vstate.mu_c(c)[i];

  k = lay.offset[static_cast<int>(ParamGroup::variational_chol)];
  for (int c = 0; c < C; ++c) {
    const double* L = m.vstate.L_c(c);
    for (int i = 0; i < nz; ++i)
      for (int j = 0; j <= i; ++j) {
        const double x = L[static_cast<std::size_t>(i) * nz + j];
        theta[static_cast<std::size_t>(k++)] = (j == i) ? ad::softplus_inverse(x) : x;
      }
  }

  k = lay.offset[static_cast<int>(ParamGroup::inducing)];
  if (lay.kind == InducingSet::Kind::tensors) {
    for (const InducingTensor& t : m.inducing.tensors) {
      theta[static_cast<std::size_t>(k++)] = t.z0;
      for (const auto& lvl : t.levels)
        for (double x : lvl) theta[static_cast<std::size_t>(k++)] = x;
    }
  } else {
    for (const Sequence& s : m.inducing.sequences)
      for (double x : s.values) theta[static_cast<std::size_t>(k++)] = x;
  }

  k = lay.offset[static_cast<int>(ParamGroup::level_scales)];
  for (double x : m.params.sigma_prime) theta[static_cast<std::size_t>(k++)] = ad::softplus_inverse(x);
  theta[static_cast<std::size_t>(lay.offset[static_cast<int>(ParamGroup::scale_mult)])] =
      ad::softplus_inverse(m.params.beta);
  if (lay.learn_time_scale)
    theta[static_cast<std::size_t>(lay.offset[static_cast<int>(ParamGroup::time_scale)])] =
        ad::softplus_inverse(m.params.tau);
  if (lay.has_lengthscales) {
    k = lay.offset[static_cast<int>(ParamGroup::lengthscales)];
    for (double x : m.params.static_kernel.lengthscales)
      theta[static_cast<std::size_t>(k++)] = ad::softplus_inverse(x);
  }
  return theta;
}

void unpack_params(const std::vector<double>& theta, const PackLayout& lay, Model& m) {
  if (static_cast<int>(theta.size()) != lay.total) fail("theta size does not match layout");
  const int nz = lay.n_z, C = lay.n_classes;
  int k = lay.offset[static_cast<int>(ParamGroup::variational_mean)];
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < nz; ++i) m.vstate.mu_c(c)[i] = theta[static_cast<std::size_t>(k++)];

  k = lay.offset[static_cast<int>(ParamGroup::variational_chol)];
  for (int c = 0; c < C; ++c) {
    double* L = m.vstate.L_c(c);
    for (int i = 0; i < nz; ++i)
      for (int j = 0; j <= i; ++j) {
        const double x = theta[static_cast<std::size_t>(k++)];
        L[static_cast<std::size_t>(i) * nz + j] = (j == i) ? ad::softplus(x) : x;
      }
    for (int i = 0; i < nz; ++i)
      for (int j = i + 1; j < nz; ++j) L[static_cast<std::size_t>(i) * nz + j] = 0.0;
  }

  k = lay.offset[static_cast<int>(ParamGroup::inducing)];
  if (lay.kind == InducingSet::Kind::tensors) {
    for (InducingTensor& t : m.inducing.tensors) {
      t.z0 = theta[static_cast<std::size_t>(k++)];
      for (auto& lvl : t.levels)
        for (double& x : lvl) x = theta[static_cast<std::size_t>(k++)];
    }
  } else {
    for (Sequence& s : m.inducing.sequences)
      for (double& x : s.values) x = theta[static_cast<std::size_t>(k++)];
  }

  k = lay.offset[static_cast<int>(ParamGroup::level_scales)];
  for (double& x : m.params.sigma_prime) x = ad::softplus(theta[static_cast<std::size_t>(k++)]);
  m.params.beta = ad::softplus(
      theta[static_cast<std::size_t>(lay.offset[static_cast<int>(ParamGroup::scale_mult)])]);
  if (lay.learn_time_scale)
    m.params.tau = ad::softplus(
        theta[static_cast<std::size_t>(lay.offset[static_cast<int>(ParamGroup::time_scale)])]);
  if (lay.has_lengthscales) {
    k = lay.offset[static_cast<int>(ParamGroup::lengthscales)];
    for (double& x : m.params.static_kernel.lengthscales)
      x = ad::softplus(theta[static_cast<std::size_t>(k++)]);
  }
}

// ---- objective ---------------------------------------------------------------

namespace {

using ad::Tape;
using ad::Var;

// Lifts theta entries in pack order; trainable entries become tape leaves
// whose indices are remembered for the reverse sweep.
struct Lifter {
  Tape& tape;
  const std::vector<double>& theta;
  const GroupMask& mask;
  std::vector<int32_t> leaf;

  Lifter(Tape& t, const std::vector<double>& th, const GroupMask& m)
      : tape(t), theta(th), mask(m), leaf(th.size(), 0) {}

  Var take(int idx, ParamGroup g) {
    if (!mask[static_cast<std::size_t>(static_cast<int>(g))])
      return Var(theta[static_cast<std::size_t>(idx)]);
    Var v = ad::make_leaf(tape, theta[static_cast<std::size_t>(idx)]);
    leaf[static_cast<std::size_t>(idx)] = v.i;
    return v;
  }
};

// Augments raw sequences with differentiable values/tau and tabulates them
// into a padded batch (final state repeated, contributing zero increments).
engine::Batch<Var> lift_batch(const std::vector<Sequence>& seqs,
                              const std::vector<std::vector<Var>>& values, const Var& tau,
                              const std::vector<double>& lags, int dim) {
  const int aug = augmented_dim(dim, static_cast<int>(lags.size()));
  int len = 1;
  for (const Sequence& s : seqs) len = std::max(len, s.length());
  engine::Batch<Var> b;
  b.n = static_cast<int>(seqs.size());
  b.len = len;
  b.dim = aug;
  b.states.assign(static_cast<std::size_t>(b.n) * len * aug, Var(0.0));
  std::vector<Var> rows;
  for (int i = 0; i < b.n; ++i) {
    const Sequence& s = seqs[static_cast<std::size_t>(i)];
    const int li = s.length();
    rows.assign(static_cast<std::size_t>(li) * aug, Var(0.0));
    detail::build_augmented_states<Var>(s.times, values[static_cast<std::size_t>(i)].data(), li,
                                        dim, tau, lags, rows.data());
    Var* dst = b.states.data() + static_cast<std::size_t>(i) * len * aug;
    for (int l = 0; l < len; ++l) {
      const Var* src = rows.data() + static_cast<std::size_t>(std::min(l, li - 1)) * aug;
      for (int j = 0; j < aug; ++j) dst[static_cast<std::size_t>(l) * aug + j] = src[j];
    }
  }
  return b;
}

// Jitter that lets the (primal) inducing covariance factorize; escalates
// 1e-6 -> 1e-5 -> 1e-4 and throws when even the largest fails.
double pick_jitter(const std::vector<Var>& kzz, int n) {
  std::vector<double> base(kzz.size());
  for (std::size_t i = 0; i < kzz.size(); ++i) base[i] = ad::value_of(kzz[i]);
  for (double jitter : {1e-6, 1e-5, 1e-4}) {
    std::vector<double> a = base;
    for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i) * n + i] += jitter;
    if (linalg::cholesky_lower<double>(n, a)) return jitter;
  }
  throw std::runtime_error("objective: inducing covariance is not positive definite at jitter 1e-4");
}

}  // namespace

double objective(const Model& proto, const PackLayout& lay, const std::vector<double>& theta,
                 const std::vector<Sequence>& batch, const std::vector<int>& example_ids,
                 double n_total, int n_mc, std::uint64_t seed, const GroupMask& trainable,
                 std::vector<double>* grad, ad::Tape* scratch) {
  if (static_cast<int>(theta.size()) != lay.total) fail("theta size does not match layout");
  if (batch.empty()) fail("empty minibatch");
  if (example_ids.size() != batch.size()) fail("example id count does not match batch");
  const int B = static_cast<int>(batch.size());
  const int C = lay.n_classes, nz = lay.n_z, M = lay.depth, d = lay.dim, aug = lay.aug_dim;
  const int n_lags = static_cast<int>(proto.params.lags.size());

  Tape local;
  Tape& tape = scratch ? *scratch : local;
  if (scratch) tape.clear();
  Lifter lift(tape, theta, trainable);

  // Hyperparameters through their positivity transforms.
  std::vector<Var> sigp(static_cast<std::size_t>(M) + 1);
  {
    const int o = lay.offset[static_cast<int>(ParamGroup::level_scales)];
    for (int m = 0; m <= M; ++m)
      sigp[static_cast<std::size_t>(m)] = ad::softplus(lift.take(o + m, ParamGroup::level_scales));
  }
  const Var beta =
      ad::softplus(lift.take(lay.offset[static_cast<int>(ParamGroup::scale_mult)],
                             ParamGroup::scale_mult));
  const Var tau = lay.learn_time_scale
                      ? ad::softplus(lift.take(lay.offset[static_cast<int>(ParamGroup::time_scale)],
                                               ParamGroup::time_scale))
                      : Var(proto.params.tau);

  engine::Config<Var> cfg;
  cfg.kind = proto.params.static_kernel.kind;
  cfg.aug_dim = aug;
  cfg.depth = M;
  cfg.normalize = proto.params.normalize_levels;
  cfg.sigma_sq.resize(static_cast<std::size_t>(M) + 1);
  for (int m = 0; m <= M; ++m) {
    Var s = beta * sigp[static_cast<std::size_t>(m)];
    cfg.sigma_sq[static_cast<std::size_t>(m)] = s * s;
  }
  if (lay.has_lengthscales) {
    const int o = lay.offset[static_cast<int>(ParamGroup::lengthscales)];
    std::vector<Var> inv_sq(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
      Var l = ad::softplus(lift.take(o + j, ParamGroup::lengthscales));
      inv_sq[static_cast<std::size_t>(j)] = Var(1.0) / (l * l);
    }
    cfg.gammas = augmented_gammas<Var>(inv_sq, d, n_lags);
  }

  // Variational parameters.
  std::vector<Var> mu(static_cast<std::size_t>(C) * nz);
  std::vector<Var> Lv(static_cast<std::size_t>(C) * nz * nz, Var(0.0));
  {
    int k = lay.offset[static_cast<int>(ParamGroup::variational_mean)];
    for (std::size_t i = 0; i < mu.size(); ++i)
      mu[i] = lift.take(k++, ParamGroup::variational_mean);
    k = lay.offset[static_cast<int>(ParamGroup::variational_chol)];
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < nz; ++i)
        for (int j = 0; j <= i; ++j) {
          Var raw = lift.take(k++, ParamGroup::variational_chol);
          Lv[(static_cast<std::size_t>(c) * nz + i) * nz + j] =
              (j == i) ? ad::softplus(raw) : raw;
        }
  }

  // Inducing variables.
  engine::Tensors<Var> tz;
  engine::Batch<Var> zb;
  const bool tensors = lay.kind == InducingSet::Kind::tensors;
  {
    int k = lay.offset[static_cast<int>(ParamGroup::inducing)];
    if (tensors) {
      tz.n = nz;
      tz.dim = aug;
      tz.depth = M;
      tz.z0.resize(static_cast<std::size_t>(nz));
      tz.factors.resize(static_cast<std::size_t>(M));
      for (int m = 1; m <= M; ++m)
        tz.factors[static_cast<std::size_t>(m - 1)].resize(static_cast<std::size_t>(nz) * m * aug);
      for (int i = 0; i < nz; ++i) {
        tz.z0[static_cast<std::size_t>(i)] = lift.take(k++, ParamGroup::inducing);
        for (int m = 1; m <= M; ++m) {
          Var* dst = tz.factors[static_cast<std::size_t>(m - 1)].data() +
                     static_cast<std::size_t>(i) * m * aug;
          for (int e = 0; e < m * aug; ++e) dst[e] = lift.take(k++, ParamGroup::inducing);
        }
      }
    } else {
      std::vector<std::vector<Var>> zvals(proto.inducing.sequences.size());
      for (std::size_t i = 0; i < zvals.size(); ++i) {
        const Sequence& s = proto.inducing.sequences[i];
        zvals[i].resize(s.values.size());
        for (std::size_t e = 0; e < s.values.size(); ++e)
          zvals[i][e] = lift.take(k++, ParamGroup::inducing);
      }
      zb = lift_batch(proto.inducing.sequences, zvals, tau, proto.params.lags, d);
    }
  }

  // Data batch: values are constants.
  std::vector<std::vector<Var>> xvals(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    xvals[j].resize(batch[j].values.size());
    for (std::size_t e = 0; e < batch[j].values.size(); ++e) xvals[j][e] = Var(batch[j].values[e]);
  }
  engine::Batch<Var> xb = lift_batch(batch, xvals, tau, proto.params.lags, d);

  // Covariance blocks.  The sequence-side level norms are computed once and
  // shared between the cross block and the self covariances.
  bool degenerate = false;
  auto diagX = engine::levels_diag(xb, cfg);
  std::vector<std::vector<Var>> invX;
  if (cfg.normalize) invX = engine::level_norm_factors(diagX, &degenerate);

  std::vector<Var> kxx(static_cast<std::size_t>(B));
  for (int j = 0; j < B; ++j) {
    Var acc = cfg.sigma_sq[0];
    for (int m = 1; m <= M; ++m) {
      Var lv = diagX[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
      if (cfg.normalize) {
        const Var& f = invX[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
        lv = lv * f * f;
      }
      acc = acc + cfg.sigma_sq[static_cast<std::size_t>(m)] * lv;
    }
    kxx[static_cast<std::size_t>(j)] = acc;
  }

  std::vector<Var> kzz;
  std::vector<std::vector<Var>> invZ;
  if (tensors) {
    kzz = engine::assemble_inducing(tz, cfg).data;
  } else {
    auto diagZ = engine::levels_diag(zb, cfg);
    if (cfg.normalize) invZ = engine::level_norm_factors(diagZ, &degenerate);
    auto lev = engine::levels_pair(zb, zb, cfg);
    kzz.assign(static_cast<std::size_t>(nz) * nz, Var(0.0));
    for (int i = 0; i < nz; ++i)
      for (int j = 0; j < nz; ++j) {
        Var acc = cfg.sigma_sq[0];
        for (int m = 1; m <= M; ++m) {
          Var lv = lev[static_cast<std::size_t>(m - 1)].data[static_cast<std::size_t>(i) * nz + j];
          if (cfg.normalize)
            lv = lv * invZ[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)] *
                 invZ[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
          acc = acc + cfg.sigma_sq[static_cast<std::size_t>(m)] * lv;
        }
        kzz[static_cast<std::size_t>(i) * nz + j] = acc;
      }
  }

  std::vector<Var> kzx(static_cast<std::size_t>(nz) * B);
  {
    auto lev = tensors ? engine::levels_cross(tz, xb, cfg) : engine::levels_pair(zb, xb, cfg);
    for (int i = 0; i < nz; ++i)
      for (int j = 0; j < B; ++j) {
        Var acc = tensors ? cfg.sigma_sq[0] * tz.z0[static_cast<std::size_t>(i)] : cfg.sigma_sq[0];
        for (int m = 1; m <= M; ++m) {
          Var lv = lev[static_cast<std::size_t>(m - 1)].data[static_cast<std::size_t>(i) * B + j];
          if (cfg.normalize) {
            lv = lv * invX[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(j)];
            if (!tensors)
              lv = lv * invZ[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(i)];
          }
          acc = acc + cfg.sigma_sq[static_cast<std::size_t>(m)] * lv;
        }
        kzx[static_cast<std::size_t>(i) * B + j] = acc;
      }
  }

  // Whitening factor with the jitter chosen on the primal values.
  const double jitter = pick_jitter(kzz, nz);
  std::vector<Var> Lk = kzz;
  for (int i = 0; i < nz; ++i)
    Lk[static_cast<std::size_t>(i) * nz + i] = Lk[static_cast<std::size_t>(i) * nz + i] + Var(jitter);
  if (!linalg::cholesky_lower<Var>(nz, Lk))
    throw std::runtime_error("objective: factorization failed after jitter selection");

  // Divergence term of the bound.
  Var kl(0.0);
  for (int c = 0; c < C; ++c) {
    Var sq(0.0), logdet(0.0);
    for (int i = 0; i < nz; ++i) {
      const Var& mi = mu[static_cast<std::size_t>(c) * nz + i];
      sq = sq + mi * mi;
      for (int j = 0; j <= i; ++j) {
        const Var& l = Lv[(static_cast<std::size_t>(c) * nz + i) * nz + j];
        sq = sq + l * l;
      }
      logdet = logdet + ad::log(Lv[(static_cast<std::size_t>(c) * nz + i) * nz + i]);
    }
    kl = kl + Var(0.5) * (sq - Var(static_cast<double>(nz))) - logdet;
  }

  // Data term: per-example marginals and Monte Carlo softmax likelihood.
  constexpr double var_floor = 1e-12;
  Var data_term(0.0);
  std::vector<Var> a(static_cast<std::size_t>(nz));
  std::vector<Var> means(static_cast<std::size_t>(C)), sds(static_cast<std::size_t>(C));
  std::vector<Var> f(static_cast<std::size_t>(C));
  for (int j = 0; j < B; ++j) {
    const int label = batch[static_cast<std::size_t>(j)].label;
    if (label < 0 || label >= C) fail("minibatch example without a valid label");
    for (int i = 0; i < nz; ++i) a[static_cast<std::size_t>(i)] = kzx[static_cast<std::size_t>(i) * B + j];
    linalg::solve_lower_inplace<Var>(nz, Lk, a.data());
    Var asq(0.0);
    for (int i = 0; i < nz; ++i) asq = asq + a[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(i)];
    for (int c = 0; c < C; ++c) {
      Var mean(0.0), lta_sq(0.0);
      const Var* Lc = Lv.data() + static_cast<std::size_t>(c) * nz * nz;
      const Var* mc = mu.data() + static_cast<std::size_t>(c) * nz;
      for (int i = 0; i < nz; ++i) mean = mean + a[static_cast<std::size_t>(i)] * mc[i];
      for (int i = 0; i < nz; ++i) {
        Var s(0.0);
        for (int r = i; r < nz; ++r)
          s = s + Lc[static_cast<std::size_t>(r) * nz + i] * a[static_cast<std::size_t>(r)];
        lta_sq = lta_sq + s * s;
      }
      Var var = kxx[static_cast<std::size_t>(j)] - asq + lta_sq;
      if (ad::value_of(var) < var_floor) var = Var(var_floor);
      means[static_cast<std::size_t>(c)] = mean;
      sds[static_cast<std::size_t>(c)] = ad::sqrt(var);
    }
    const std::vector<double> eps = mc_normals(
        mix_seed(seed, static_cast<std::uint64_t>(example_ids[static_cast<std::size_t>(j)])), n_mc,
        C);
    Var ll(0.0);
    for (int s = 0; s < n_mc; ++s) {
      double fmax = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < C; ++c) {
        f[static_cast<std::size_t>(c)] =
            means[static_cast<std::size_t>(c)] +
            sds[static_cast<std::size_t>(c)] * Var(eps[static_cast<std::size_t>(s) * C + c]);
        fmax = std::max(fmax, ad::value_of(f[static_cast<std::size_t>(c)]));
      }
      Var se(0.0);
      for (int c = 0; c < C; ++c) se = se + ad::exp(f[static_cast<std::size_t>(c)] - Var(fmax));
      ll = ll + f[static_cast<std::size_t>(label)] - Var(fmax) - ad::log(se);
    }
    data_term = data_term + ll / Var(static_cast<double>(n_mc));
  }

  Var bound = Var(n_total / static_cast<double>(B)) * data_term - kl;

  if (grad) {
    grad->assign(static_cast<std::size_t>(lay.total), 0.0);
    if (bound.t) {
      std::vector<double> adj;
      tape.gradient(bound.i, adj);
      for (int k = 0; k < lay.total; ++k)
        if (lift.leaf[static_cast<std::size_t>(k)] != 0)
          (*grad)[static_cast<std::size_t>(k)] =
              adj[static_cast<std::size_t>(lift.leaf[static_cast<std::size_t>(k)])];
    }
  }
  return bound.v;
}

// ---- optimizer ----------------------------------------------------------------

void adam_step(std::vector<double>& theta, const std::vector<double>& grad, AdamState& st,
               double lr, bool nesterov, double beta1, double beta2, double eps) {
  if (theta.size() != grad.size()) fail("gradient size does not match parameters");
  if (st.m.size() != theta.size()) {
    st.m.assign(theta.size(), 0.0);
    st.v.assign(theta.size(), 0.0);
    st.t = 0;
  }
  for (double g : grad)
    if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient");
  st.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    const double dir = nesterov ? beta1 * mhat + (1.0 - beta1) * g / bc1 : mhat;
    theta[i] -= lr * dir / (std::sqrt(vhat) + eps);
  }
}

// ---- initialization -------------------------------------------------------------

std::vector<InducingTensor> init_inducing_tensors(const std::vector<Sequence>& train, int n_z,
                                                  const SigKernelParams& p, std::uint64_t seed) {
  if (train.empty()) fail("no training sequences to initialize from");
  if (n_z < 1) fail("n_z must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  const int dim = train.front().dim;
  const int aug = augmented_dim(dim, static_cast<int>(p.lags.size()));

  std::vector<InducingTensor> out;
  out.reserve(static_cast<std::size_t>(n_z));
  std::vector<int> idx;
  for (int i = 0; i < n_z; ++i) {
    const Sequence& s = train[pick(rng)];
    const AugmentedSequence as = augment(s, p.tau, p.lags);
    const int len = as.length();
    InducingTensor t;
    t.z0 = 1.0;
    t.levels.resize(static_cast<std::size_t>(p.depth));
    for (int m = 1; m <= p.depth; ++m) {
      idx.clear();
      if (len >= m) {
        // m distinct observation indices in increasing order.
        std::vector<int> all(static_cast<std::size_t>(len));
        for (int l = 0; l < len; ++l) all[static_cast<std::size_t>(l)] = l;
        std::sample(all.begin(), all.end(), std::back_inserter(idx), m, rng);
      } else {
        std::uniform_int_distribution<int> anyobs(0, len - 1);
        for (int k = 0; k < m; ++k) idx.push_back(anyobs(rng));
        std::sort(idx.begin(), idx.end());
      }
      auto& lvl = t.levels[static_cast<std::size_t>(m - 1)];
      lvl.resize(static_cast<std::size_t>(m) * aug);
      for (int k = 0; k < m; ++k) {
        const double* row = as.state(idx[static_cast<std::size_t>(k)]);
        std::copy(row, row + aug, lvl.data() + static_cast<std::size_t>(k) * aug);
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Sequence> init_inducing_sequences(const std::vector<Sequence>& train, int n_z,
                                              int target_len, std::uint64_t seed) {
  if (train.empty()) fail("no training sequences to initialize from");
  if (n_z < 1) fail("n_z must be positive");
  if (target_len < 2) fail("inducing sequence length must be at least 2");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);

  std::vector<Sequence> out;
  out.reserve(static_cast<std::size_t>(n_z));
  for (int i = 0; i < n_z; ++i) {
    const Sequence& s = train[pick(rng)];
    const int len = s.length();
    const int w = std::min(target_len, len);
    std::uniform_int_distribution<int> startd(0, len - w);
    const int start = startd(rng);
    Sequence z;
    z.dim = s.dim;
    z.label = -1;
    z.times.assign(s.times.begin() + start, s.times.begin() + start + w);
    z.values.assign(s.values.begin() + static_cast<std::size_t>(start) * s.dim,
                    s.values.begin() + static_cast<std::size_t>(start + w) * s.dim);
    out.push_back(std::move(z));
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> stratified_split(const std::vector<Sequence>& data,
                                                               int n_classes, double val_fraction,
                                                               std::uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) fail("val_fraction must be in [0, 1)");
  std::vector<std::vector<int>> per_class(static_cast<std::size_t>(std::max(n_classes, 1)));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int y = data[i].label;
    if (y < 0 || y >= n_classes) fail("stratified_split: example with invalid label");
    per_class[static_cast<std::size_t>(y)].push_back(static_cast<int>(i));
  }
  std::mt19937_64 rng(seed);
  std::vector<int> tr, va;
  for (auto& cls : per_class) {
    std::shuffle(cls.begin(), cls.end(), rng);
    const int count = static_cast<int>(cls.size());
    int n_val = static_cast<int>(std::floor(val_fraction * count));
    if (val_fraction > 0.0 && count >= 2 && n_val == 0) n_val = 1;
    for (int k = 0; k < count; ++k)
      (k < n_val ? va : tr).push_back(cls[static_cast<std::size_t>(k)]);
  }
  std::sort(tr.begin(), tr.end());
  std::sort(va.begin(), va.end());
  return {std::move(tr), std::move(va)};
}

// ---- training loop ----------------------------------------------------------------

void TrainLog::write_csv(std::ostream& os) const {
  os << "epoch,phase,elbo,val_nlpp,val_acc,seconds\n";
  for (const TrainLogRow& r : rows) {
    os << r.epoch << ',' << r.phase << ',' << std::setprecision(17) << r.elbo << ','
       << r.val_nlpp << ',' << r.val_acc << ',' << std::setprecision(6) << r.seconds << '\n';
  }
}

namespace {

struct PhaseSpec {
  const char* name;
  GroupMask mask;
  int max_epochs;
  bool early_stop;
  bool merged;  // validation split folded back into training data
};

}  // namespace

TrainResult train(Dataset ds, SigKernelParams params, const TrainConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const auto elapsed = [&t0] {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };

  if (ds.train.empty()) fail("empty training set");
  if (ds.n_classes < 2) fail("need at least two classes");
  if (cfg.minibatch < 1) fail("minibatch must be positive");
  if (!(cfg.lr > 0.0)) fail("learning rate must be positive");
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
    fail("val_fraction must lie strictly between 0 and 1");
  if (cfg.optimizer != "adam" && cfg.optimizer != "nadam")
    fail("unknown optimizer '" + cfg.optimizer + "'");
  const bool nesterov = cfg.optimizer == "nadam";

  // Data preparation: cap lengths, then normalize.
  for (Sequence& s : ds.train) s = subsample(s, cfg.max_len);
  if (cfg.normalize_data && !ds.normalized) normalize(ds);

  // Default level scalings and data-driven lengthscales.
  if (params.sigma_prime.empty())
    params.sigma_prime.assign(static_cast<std::size_t>(params.depth) + 1, 1.0);
  if (params.static_kernel.kind == KernelKind::rbf && params.static_kernel.lengthscales.empty()) {
    std::vector<double> obs;
    for (const Sequence& s : ds.train) obs.insert(obs.end(), s.values.begin(), s.values.end());
    params.static_kernel.lengthscales =
        init_lengthscales(obs, ds.dim, mix_seed(cfg.seed, 11));
  }
  params.validate(ds.dim);

  auto [tr_idx, va_idx] = stratified_split(ds.train, ds.n_classes, cfg.val_fraction,
                                           mix_seed(cfg.seed, 12));
  std::vector<Sequence> val_seqs;
  for (int i : va_idx) val_seqs.push_back(ds.train[static_cast<std::size_t>(i)]);

  // Model skeleton + initial parameters.
  Model model;
  model.params = params;
  model.n_classes = ds.n_classes;
  model.state_dim = ds.dim;
  model.data_normalized = ds.normalized;
  model.data_mean = ds.mean;
  model.data_std = ds.stdev;
  model.inducing.kind = cfg.inducing_kind;
  {
    std::vector<Sequence> pool;
    for (int i : tr_idx) pool.push_back(ds.train[static_cast<std::size_t>(i)]);
    if (cfg.inducing_kind == InducingSet::Kind::tensors) {
      model.inducing.tensors = init_inducing_tensors(pool, cfg.n_z, params, mix_seed(cfg.seed, 13));
    } else {
      const int w = cfg.inducing_seq_len > 0 ? cfg.inducing_seq_len : params.depth + 1;
      model.inducing.sequences = init_inducing_sequences(pool, cfg.n_z, w, mix_seed(cfg.seed, 13));
    }
  }
  model.vstate = VariationalState::init_identity(cfg.n_z, ds.n_classes);

  const PackLayout lay = make_layout(model);
  std::vector<double> theta = pack_params(model, lay);

  const std::vector<PhaseSpec> phases = {
      {"warmup", mask_variational, cfg.phase_epochs, false, false},
      {"hypers", mask_no_level_scales, cfg.max_epochs, true, false},
      {"all", mask_all, cfg.max_epochs, true, false},
      {"final", mask_variational, cfg.phase_epochs, false, true},
  };

  TrainResult result;
  ad::Tape tape;
  std::vector<double> grad, neg;
  int global_epoch = 0;
  std::int64_t global_step = 0;
  const std::uint64_t shuffle_seed = mix_seed(cfg.seed, 20);
  const std::uint64_t step_seed = mix_seed(cfg.seed, 21);
  const std::uint64_t val_seed = mix_seed(cfg.seed, 22);
  const bool have_val = !val_seqs.empty();
  double last_nlpp = std::numeric_limits<double>::quiet_NaN();
  double last_acc = std::numeric_limits<double>::quiet_NaN();
  double last_elbo = std::numeric_limits<double>::quiet_NaN();

  for (const PhaseSpec& phase : phases) {
    if (phase.max_epochs <= 0) continue;
    const bool early = phase.early_stop && have_val;
    std::vector<int> order = phase.merged ? [&] {
      std::vector<int> all = tr_idx;
      all.insert(all.end(), va_idx.begin(), va_idx.end());
      std::sort(all.begin(), all.end());
      return all;
    }()
                                          : tr_idx;
    if (order.empty()) fail("phase with no training examples");
    const double n_total = static_cast<double>(order.size());

    AdamState opt(static_cast<std::size_t>(lay.total));
    double best_nlpp = std::numeric_limits<double>::infinity();
    std::vector<double> best_theta = theta;
    int best_epoch = 0;

    for (int e = 1; e <= phase.max_epochs; ++e) {
      ++global_epoch;
      std::mt19937_64 rng(mix_seed(shuffle_seed, static_cast<std::uint64_t>(global_epoch)));
      std::vector<int> shuffled = order;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);

      double elbo_sum = 0.0;
      int n_steps = 0;
      for (std::size_t pos = 0; pos < shuffled.size(); pos += static_cast<std::size_t>(cfg.minibatch)) {
        const std::size_t end = std::min(shuffled.size(), pos + static_cast<std::size_t>(cfg.minibatch));
        std::vector<Sequence> batch;
        std::vector<int> ids;
        for (std::size_t k = pos; k < end; ++k) {
          batch.push_back(ds.train[static_cast<std::size_t>(shuffled[k])]);
          ids.push_back(shuffled[k]);
        }
        ++global_step;
        const double value =
            objective(model, lay, theta, batch, ids, n_total, cfg.n_mc_train,
                      mix_seed(step_seed, static_cast<std::uint64_t>(global_step)), phase.mask,
                      &grad, &tape);
        if (!std::isfinite(value)) {
          std::ostringstream os;
          os << "training diverged: objective is not finite (phase " << phase.name << ", epoch "
             << global_epoch << ")";
          throw std::runtime_error(os.str());
        }
        neg.assign(grad.size(), 0.0);
        for (std::size_t k = 0; k < grad.size(); ++k) neg[k] = -grad[k];
        adam_step(theta, neg, opt, cfg.lr, nesterov);
        elbo_sum += value;
        ++n_steps;
      }
      last_elbo = elbo_sum / std::max(n_steps, 1);

      unpack_params(theta, lay, model);
      if (have_val) {
        const EvalResult ev =
            evaluate(model, val_seqs, cfg.n_mc_predict, val_seed, /*normalized_input=*/true);
        last_nlpp = ev.mean_nlpp;
        last_acc = ev.accuracy;
      }
      result.log.rows.push_back(
          {global_epoch, phase.name, last_elbo, last_nlpp, last_acc, elapsed()});
      if (cfg.verbose)
        std::cerr << "epoch " << global_epoch << " [" << phase.name << "] objective " << last_elbo
                  << " val_nlpp " << last_nlpp << " val_acc " << last_acc << "\n";

      if (early) {
        if (last_nlpp < best_nlpp) {
          best_nlpp = last_nlpp;
          best_theta = theta;
          best_epoch = e;
        } else if (e - best_epoch >= cfg.patience_epochs) {
          break;
        }
      }
    }
    if (early) theta = best_theta;
    unpack_params(theta, lay, model);
  }

  result.model = model;
  result.final_elbo = last_elbo;
  result.val_nlpp = last_nlpp;
  result.val_acc = last_acc;
  return result;
}

// ---- variational-only refits --------------------------------------------------------

VariationalFit fit_variational(const Model& hypers, Dataset ds, InducingSet::Kind kind, int n_z,
                               int epochs, const TrainConfig& cfg) {
  if (ds.train.empty()) fail("empty training set");
  if (epochs < 1) fail("epochs must be positive");
  const bool nesterov = cfg.optimizer != "adam";

  for (Sequence& s : ds.train) s = subsample(s, cfg.max_len);
  for (Sequence& s : ds.test) s = subsample(s, cfg.max_len);
  if (hypers.data_normalized && !ds.normalized) {
    apply_normalization(ds.train, hypers.data_mean, hypers.data_std);
    apply_normalization(ds.test, hypers.data_mean, hypers.data_std);
    ds.normalized = true;
  }

  Model model;
  model.params = hypers.params;
  model.n_classes = hypers.n_classes;
  model.state_dim = hypers.state_dim;
  model.data_normalized = hypers.data_normalized;
  model.data_mean = hypers.data_mean;
  model.data_std = hypers.data_std;
  model.inducing.kind = kind;
  if (kind == InducingSet::Kind::tensors) {
    model.inducing.tensors =
        init_inducing_tensors(ds.train, n_z, model.params, mix_seed(cfg.seed, 13));
  } else {
    const int w = cfg.inducing_seq_len > 0 ? cfg.inducing_seq_len : model.params.depth + 1;
    model.inducing.sequences = init_inducing_sequences(ds.train, n_z, w, mix_seed(cfg.seed, 13));
  }
  model.vstate = VariationalState::init_identity(n_z, model.n_classes);

  const PackLayout lay = make_layout(model);
  std::vector<double> theta = pack_params(model, lay);
  const double n_total = static_cast<double>(ds.train.size());
  std::vector<int> order(ds.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  ad::Tape tape;
  std::vector<double> grad, neg;
  AdamState opt(static_cast<std::size_t>(lay.total));
  const std::uint64_t shuffle_seed = mix_seed(cfg.seed, 20);
  const std::uint64_t step_seed = mix_seed(cfg.seed, 21);
  std::int64_t step = 0;
  for (int e = 1; e <= epochs; ++e) {
    std::mt19937_64 rng(mix_seed(shuffle_seed, static_cast<std::uint64_t>(e)));
    std::vector<int> shuffled = order;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (std::size_t pos = 0; pos < shuffled.size(); pos += static_cast<std::size_t>(cfg.minibatch)) {
      const std::size_t end = std::min(shuffled.size(), pos + static_cast<std::size_t>(cfg.minibatch));
      std::vector<Sequence> batch;
      std::vector<int> ids;
      for (std::size_t k = pos; k < end; ++k) {
        batch.push_back(ds.train[static_cast<std::size_t>(shuffled[k])]);
        ids.push_back(shuffled[k]);
      }
      ++step;
      const double value = objective(model, lay, theta, batch, ids, n_total, cfg.n_mc_train,
                                     mix_seed(step_seed, static_cast<std::uint64_t>(step)),
                                     mask_variational, &grad, &tape);
      if (!std::isfinite(value))
        throw std::runtime_error("fit_variational: objective diverged");
      neg.assign(grad.size(), 0.0);
      for (std::size_t k = 0; k < grad.size(); ++k) neg[k] = -grad[k];
      adam_step(theta, neg, opt, cfg.lr, nesterov);
    }
  }
  unpack_params(theta, lay, model);

  // Comparable final numbers: draws independent of cfg.seed.
  constexpr std::uint64_t report_seed = 777;
  VariationalFit fit;
  fit.elbo = objective(model, lay, theta, ds.train, order, n_total, cfg.n_mc_predict, report_seed,
                       mask_none, nullptr, &tape);
  const std::vector<Sequence>& eval_set = ds.test.empty() ? ds.train : ds.test;
  const EvalResult ev = evaluate(model, eval_set, cfg.n_mc_predict, report_seed,
                                 /*normalized_input=*/ds.normalized);
  fit.accuracy = ev.accuracy;
  fit.mean_nlpp = ev.mean_nlpp;
  fit.model = std::move(model);
  return fit;
}

// ---- evaluation -------------------------------------------------------------------

EvalResult evaluate(const Model& m, const std::vector<Sequence>& data, int n_mc,
                    std::uint64_t seed, bool normalized_input) {
  EvalResult r;
  if (data.empty()) return r;
  std::vector<Sequence> work;
  const std::vector<Sequence>* use = &data;
  if (m.data_normalized && !normalized_input) {
    work = data;
    apply_normalization(work, m.data_mean, m.data_std);
    use = &work;
  }

  const bool tensors = m.inducing.kind == InducingSet::Kind::tensors;
  const GramBlock kzz = tensors
                            ? cov_inducing(m.inducing.tensors, m.params, m.state_dim)
                            : cov_sequences(m.inducing.sequences, m.inducing.sequences, m.params);
  const CholeskyFactor Lk = cholesky_with_jitter(kzz);
  const GramBlock kzx = tensors ? cov_cross(m.inducing.tensors, *use, m.params)
                                : cov_sequences(m.inducing.sequences, *use, m.params);
  const std::vector<double> kxx = var_sequences(*use, m.params);
  const BatchMarginals marg = marginal_q(Lk, kzx, kxx, m.vstate);

  const int n = static_cast<int>(use->size());
  const int C = m.n_classes;
  r.predicted.resize(static_cast<std::size_t>(n));
  r.probs.resize(static_cast<std::size_t>(n) * C);
  int labeled = 0;
  double acc = 0.0, nlpp_sum = 0.0;
  for (int j = 0; j < n; ++j) {
    const std::vector<double> p =
        predict_probs(marg.mean.data() + static_cast<std::size_t>(j) * C,
                      marg.var.data() + static_cast<std::size_t>(j) * C, C, n_mc,
                      mix_seed(seed, static_cast<std::uint64_t>(j)));
    std::copy(p.begin(), p.end(), r.probs.begin() + static_cast<std::size_t>(j) * C);
    const int pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    r.predicted[static_cast<std::size_t>(j)] = pred;
    const int y = (*use)[static_cast<std::size_t>(j)].label;
    if (y >= 0) {
      ++labeled;
      if (pred == y) acc += 1.0;
      nlpp_sum += nlpp(p, y);
    }
  }
  r.accuracy = labeled > 0 ? acc / labeled : 0.0;
  r.mean_nlpp = labeled > 0 ? nlpp_sum / labeled : std::numeric_limits<double>::quiet_NaN();
  return r;
}

}  // namespace seqgp
