#include "seqgp/verify.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "seqgp/sig_kernel.hpp"
#include "seqgp/sig_oracle.hpp"
#include "seqgp/svgp.hpp"
#include "seqgp/trainer.hpp"

namespace seqgp {

namespace {

double rel_err(double a, double b, double floor = 1e-9) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(3) << std::scientific << x;
  return os.str();
}

Sequence random_sequence(std::mt19937_64& rng, int d, int len_lo, int len_hi) {
  std::uniform_int_distribution<int> lend(len_lo, len_hi);
  std::uniform_real_distribution<double> t0(0.0, 0.3), dt(0.2, 0.8);
  std::normal_distribution<double> val(0.0, 1.0);
  Sequence s;
  s.dim = d;
  const int len = lend(rng);
  double t = t0(rng);
  for (int i = 0; i < len; ++i) {
    s.times.push_back(t);
    t += dt(rng);
    for (int j = 0; j < d; ++j) s.values.push_back(val(rng));
  }
  return s;
}

InducingTensor random_tensor(std::mt19937_64& rng, int aug, int depth) {
  std::normal_distribution<double> val(0.0, 0.8);
  InducingTensor t;
  t.z0 = val(rng);
  t.levels.resize(static_cast<std::size_t>(depth));
  for (int m = 1; m <= depth; ++m) {
    auto& lvl = t.levels[static_cast<std::size_t>(m - 1)];
    lvl.resize(static_cast<std::size_t>(m) * aug);
    for (double& x : lvl) x = val(rng);
  }
  return t;
}

SigKernelParams random_params(std::mt19937_64& rng, KernelKind kind, int depth, int d,
                              bool with_lag, bool with_time, bool normalize) {
  std::uniform_real_distribution<double> sig(0.5, 1.5), ls(0.5, 2.0), lag(0.2, 0.9),
      tau(0.2, 1.2);
  SigKernelParams p;
  p.depth = depth;
  p.sigma_prime.resize(static_cast<std::size_t>(depth) + 1);
  for (double& x : p.sigma_prime) x = sig(rng);
  p.beta = sig(rng);
  p.tau = with_time ? tau(rng) : 0.0;
  if (with_lag) p.lags = {lag(rng)};
  p.normalize_levels = normalize;
  p.static_kernel.kind = kind;
  if (kind == KernelKind::rbf) {
    p.static_kernel.lengthscales.resize(static_cast<std::size_t>(d));
    for (double& x : p.static_kernel.lengthscales) x = ls(rng);
  }
  return p;
}

double binom(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

// ---- oracle equivalence ----------------------------------------------------

CheckResult verify_oracle_equivalence(int n_cases, std::uint64_t seed) {
  double worst = 0.0;
  std::string worst_what = "none";
  const auto note = [&](double err, const char* what, int cs) {
    if (err > worst) {
      worst = err;
      worst_what = std::string(what) + " (case " + std::to_string(cs) + ")";
    }
  };

  for (int cs = 0; cs < n_cases; ++cs) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(cs)));
    const KernelKind kind = cs % 2 == 0 ? KernelKind::linear : KernelKind::rbf;
    const bool with_lag = cs % 3 == 0;
    const int d = 1 + static_cast<int>(rng() % (with_lag ? 2 : 3));
    const int depth = 1 + static_cast<int>(rng() % 4);
    const bool with_time = rng() % 2 == 0;
    const bool normalize = rng() % 2 == 0;
    const SigKernelParams p = random_params(rng, kind, depth, d, with_lag, with_time, normalize);
    const int aug = augmented_dim(d, static_cast<int>(p.lags.size()));

    const int n_x = 1 + static_cast<int>(rng() % 4);
    const int n_y = 1 + static_cast<int>(rng() % 4);
    const int n_z = 1 + static_cast<int>(rng() % 3);
    std::vector<Sequence> X, Y;
    for (int i = 0; i < n_x; ++i) X.push_back(random_sequence(rng, d, 2, 6));
    for (int i = 0; i < n_y; ++i) Y.push_back(random_sequence(rng, d, 2, 6));
    std::vector<InducingTensor> Z;
    for (int i = 0; i < n_z; ++i) Z.push_back(random_tensor(rng, aug, depth));

    const GramBlock kxy = cov_sequences(X, Y, p);
    for (int i = 0; i < n_x; ++i)
      for (int j = 0; j < n_y; ++j)
        note(rel_err(kxy.at(i, j),
                     oracle_cov_sequences(X[static_cast<std::size_t>(i)],
                                          Y[static_cast<std::size_t>(j)], p)),
             "sequence/sequence", cs);

    const GramBlock kzx = cov_cross(Z, X, p);
    for (int i = 0; i < n_z; ++i)
      for (int j = 0; j < n_x; ++j)
        note(rel_err(kzx.at(i, j),
                     oracle_cov_cross(Z[static_cast<std::size_t>(i)],
                                      X[static_cast<std::size_t>(j)], p)),
             "tensor/sequence", cs);

    const GramBlock kzz = cov_inducing(Z, p, d);
    for (int i = 0; i < n_z; ++i)
      for (int j = 0; j < n_z; ++j)
        note(rel_err(kzz.at(i, j),
                     oracle_cov_inducing(Z[static_cast<std::size_t>(i)],
                                         Z[static_cast<std::size_t>(j)], p, d)),
             "tensor/tensor", cs);

    const std::vector<double> kxx = var_sequences(X, p);
    for (int j = 0; j < n_x; ++j)
      note(rel_err(kxx[static_cast<std::size_t>(j)],
                   oracle_var(X[static_cast<std::size_t>(j)], p)),
           "self", cs);

    // Dense-signature cross check where the features can be materialized.
    if (kind == KernelKind::linear && !normalize && aug <= 5) {
      const std::vector<double> sq = p.sigma_sq();
      const DenseSignature sx = brute_signature(augment(X.front(), p.tau, p.lags), depth);
      const DenseSignature sy = brute_signature(augment(Y.front(), p.tau, p.lags), depth);
      note(rel_err(kxy.at(0, 0), brute_cov(sx, sy, sq)), "dense sequence/sequence", cs);
      const DenseSignature sz = materialize_tensor(Z.front());
      note(rel_err(kzx.at(0, 0), brute_cov(sz, sx, sq)), "dense tensor/sequence", cs);
    }
  }

  CheckResult r;
  r.name = "oracle equivalence";
  r.pass = worst <= 1e-10;
  r.detail = std::to_string(n_cases) + " cases, worst rel err " + fmt(worst) + " at " +
             worst_what + " (tol 1e-10)";
  return r;
}

// ---- straight-line refinement ----------------------------------------------

CheckResult verify_refinement() {
  const std::vector<double> v = {0.6, 0.8}, w = {0.9, 0.7};
  const double vw = v[0] * w[0] + v[1] * w[1];
  const int depth = 4;
  const std::vector<int> grid = {2, 4, 8, 16};

  SigKernelParams p;
  p.depth = depth;
  p.sigma_prime.assign(static_cast<std::size_t>(depth) + 1, 1.0);
  p.beta = 1.0;
  p.tau = 0.0;
  p.normalize_levels = false;
  p.static_kernel.kind = KernelKind::linear;

  const auto line = [](const std::vector<double>& dir, int segments) {
    Sequence s;
    s.dim = 2;
    for (int i = 0; i <= segments; ++i) {
      const double t = static_cast<double>(i) / segments;
      s.times.push_back(t);
      s.values.push_back(t * dir[0]);
      s.values.push_back(t * dir[1]);
    }
    return s;
  };

  double worst = 0.0;
  bool monotone = true, trending = true;
  std::vector<std::vector<double>> values(static_cast<std::size_t>(depth) + 1);
  for (int n : grid) {
    const std::vector<Sequence> X = {line(v, n)}, Y = {line(w, n)};
    const auto blocks = cov_sequences_by_level(X, Y, p);
    for (int m = 1; m <= depth; ++m) {
      const double got = blocks[static_cast<std::size_t>(m)].at(0, 0);
      const double expect = binom(n, m) * binom(n, m) * std::pow(vw, m) / std::pow(n, 2 * m);
      worst = std::max(worst, expect == 0.0 ? std::abs(got) : rel_err(got, expect));
      values[static_cast<std::size_t>(m)].push_back(got);
    }
  }
  for (int m = 1; m <= depth; ++m) {
    const auto& vs = values[static_cast<std::size_t>(m)];
    double lim = std::pow(vw, m);
    for (int k = 2; k <= m; ++k) lim /= static_cast<double>(k) * k;
    for (std::size_t k = 1; k < vs.size(); ++k)
      if (vs[k] < vs[k - 1] - 1e-15) monotone = false;
    if (std::abs(vs.back() - lim) > std::abs(vs.front() - lim) + 1e-15) trending = false;
  }

  CheckResult r;
  r.name = "straight-line refinement";
  r.pass = worst <= 1e-12 && monotone && trending;
  r.detail = "worst rel err " + fmt(worst) + " (tol 1e-12), monotone=" +
             (monotone ? "yes" : "NO") + ", approaches 1/(m!)^2 limit: " +
             (trending ? "yes" : "NO");
  return r;
}

// ---- invariances -------------------------------------------------------------

CheckResult verify_invariances(std::uint64_t seed) {
  double worst_exact = 0.0;   // duplicate / padding / relabeling, tol 1e-12
  double worst_scale = 0.0;   // value scaling under normalization, tol 1e-10
  std::string what = "none";
  const auto note = [&](double err, double& slot, const char* label) {
    if (err > std::max(worst_exact, worst_scale)) what = label;
    if (err > slot) slot = err;
  };

  for (int trial = 0; trial < 10; ++trial) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(trial)));
    const KernelKind kind = trial % 2 == 0 ? KernelKind::linear : KernelKind::rbf;
    const bool normalize = trial % 3 != 0;
    const int d = 1 + static_cast<int>(rng() % 2);

    // Duplicate-point insertion: tau = 0, no lags, so a repeated value is a
    // zero increment whatever its time stamp.
    {
      SigKernelParams p = random_params(rng, kind, 3, d, false, false, normalize);
      Sequence x = random_sequence(rng, d, 5, 5);
      Sequence y = random_sequence(rng, d, 4, 6);
      Sequence xd = x;
      const int at = 2;
      const double tmid = 0.5 * (x.times[at] + x.times[at + 1]);
      xd.times.insert(xd.times.begin() + at + 1, tmid);
      xd.values.insert(xd.values.begin() + (at + 1) * d, x.values.begin() + at * d,
                       x.values.begin() + (at + 1) * d);
      note(rel_err(cov_sequences({x}, {y}, p).at(0, 0), cov_sequences({xd}, {y}, p).at(0, 0)),
           worst_exact, "duplicate (sequence/sequence)");
      note(rel_err(var_sequences({x}, p)[0], var_sequences({xd}, p)[0]), worst_exact,
           "duplicate (self)");
      const int aug = augmented_dim(d, 0);
      const InducingTensor z = random_tensor(rng, aug, p.depth);
      note(rel_err(cov_cross({z}, {x}, p).at(0, 0), cov_cross({z}, {xd}, p).at(0, 0)),
           worst_exact, "duplicate (tensor/sequence)");
    }

    // Padding by tabulation: batched evaluation vs one-pair evaluation.
    {
      SigKernelParams p = random_params(rng, kind, 3, d, trial % 4 == 0, true, normalize);
      std::vector<Sequence> batch = {random_sequence(rng, d, 3, 3),
                                     random_sequence(rng, d, 8, 8),
                                     random_sequence(rng, d, 5, 5)};
      const GramBlock g = cov_sequences(batch, batch, p);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          note(rel_err(g.at(i, j),
                       cov_sequences({batch[static_cast<std::size_t>(i)]},
                                     {batch[static_cast<std::size_t>(j)]}, p)
                           .at(0, 0)),
               worst_exact, "padding (sequence/sequence)");
      const int aug = augmented_dim(d, static_cast<int>(p.lags.size()));
      const InducingTensor z = random_tensor(rng, aug, p.depth);
      const GramBlock gz = cov_cross({z}, batch, p);
      for (int j = 0; j < 3; ++j)
        note(rel_err(gz.at(0, j),
                     cov_cross({z}, {batch[static_cast<std::size_t>(j)]}, p).at(0, 0)),
             worst_exact, "padding (tensor/sequence)");
    }

    // Timestamp relabeling at tau = 0 with no lags.
    {
      SigKernelParams p = random_params(rng, kind, 3, d, false, false, normalize);
      Sequence x = random_sequence(rng, d, 4, 7);
      Sequence y = random_sequence(rng, d, 4, 7);
      Sequence xr = x, yr = y;
      for (std::size_t i = 0; i < xr.times.size(); ++i)
        xr.times[i] = 0.5 + 3.0 * xr.times[i] * xr.times[i] + static_cast<double>(i) * 0.01;
      for (std::size_t i = 0; i < yr.times.size(); ++i) yr.times[i] = 10.0 + 2.0 * yr.times[i];
      note(rel_err(cov_sequences({x}, {y}, p).at(0, 0), cov_sequences({xr}, {yr}, p).at(0, 0)),
           worst_exact, "relabeling");
    }

    // Global value scaling with normalization and the linear kernel.
    {
      SigKernelParams p = random_params(rng, KernelKind::linear, 3, d, trial % 4 == 1, false,
                                        true);
      std::vector<Sequence> batch = {random_sequence(rng, d, 4, 6),
                                     random_sequence(rng, d, 4, 6),
                                     random_sequence(rng, d, 4, 6)};
      const GramBlock base = cov_sequences(batch, batch, p);
      for (const double c : {0.1, 10.0}) {
        std::vector<Sequence> scaled = batch;
        for (Sequence& s : scaled)
          for (double& vv : s.values) vv *= c;
        const GramBlock g = cov_sequences(scaled, scaled, p);
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j)
            note(rel_err(g.at(i, j), base.at(i, j)), worst_scale, "value scaling");
      }
    }
  }

  CheckResult r;
  r.name = "invariances";
  r.pass = worst_exact <= 1e-12 && worst_scale <= 1e-10;
  r.detail = "duplicate/padding/relabeling worst rel err " + fmt(worst_exact) +
             " (tol 1e-12); scaling worst rel err " + fmt(worst_scale) +
             " (tol 1e-10); worst at: " + what;
  return r;
}

// ---- positive semidefiniteness ----------------------------------------------

namespace {

// Minimum/maximum eigenvalue of the symmetrized matrix after diagonal jitter.
std::pair<double, double> eig_range(const std::vector<double>& a, int n, double jitter) {
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      m(i, j) = 0.5 * (a[static_cast<std::size_t>(i) * n + j] +
                       a[static_cast<std::size_t>(j) * n + i]);
  m.diagonal().array() += jitter;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

}  // namespace

CheckResult verify_psd(int n_cases, std::uint64_t seed) {
  double worst = 0.0;  // most negative min-eig relative to max-eig
  for (int cs = 0; cs < n_cases; ++cs) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(cs)));
    const KernelKind kind = cs % 2 == 0 ? KernelKind::linear : KernelKind::rbf;
    const bool with_lag = cs % 5 == 0;
    const int d = 1 + static_cast<int>(rng() % 2);
    const SigKernelParams p =
        random_params(rng, kind, 1 + static_cast<int>(rng() % 3), d, with_lag, rng() % 2 == 0,
                      rng() % 2 == 0);
    const int aug = augmented_dim(d, static_cast<int>(p.lags.size()));

    std::vector<Sequence> X;
    for (int i = 0; i < 8; ++i) X.push_back(random_sequence(rng, d, 3, 7));
    const GramBlock kxx = cov_sequences(X, X, p);
    {
      const auto [emin, emax] = eig_range(kxx.data, 8, 1e-8);
      worst = std::max(worst, -emin / std::max(emax, 1e-12));
    }

    // Joint block over inducing tensors and sequences.
    const int nz = 4, nx = 6;
    std::vector<InducingTensor> Z;
    for (int i = 0; i < nz; ++i) Z.push_back(random_tensor(rng, aug, p.depth));
    std::vector<Sequence> Xs(X.begin(), X.begin() + nx);
    const GramBlock kzz = cov_inducing(Z, p, d);
    const GramBlock kzx = cov_cross(Z, Xs, p);
    const GramBlock kxs = cov_sequences(Xs, Xs, p);
    const int n = nz + nx;
    std::vector<double> joint(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < nz; ++i)
      for (int j = 0; j < nz; ++j) joint[static_cast<std::size_t>(i) * n + j] = kzz.at(i, j);
    for (int i = 0; i < nz; ++i)
      for (int j = 0; j < nx; ++j) {
        joint[static_cast<std::size_t>(i) * n + nz + j] = kzx.at(i, j);
        joint[static_cast<std::size_t>(nz + j) * n + i] = kzx.at(i, j);
      }
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < nx; ++j)
        joint[static_cast<std::size_t>(nz + i) * n + nz + j] = kxs.at(i, j);
    const auto [emin, emax] = eig_range(joint, n, 1e-8);
    worst = std::max(worst, -emin / std::max(emax, 1e-12));
  }

  CheckResult r;
  r.name = "positive semidefiniteness";
  r.pass = worst <= 1e-8;
  r.detail = std::to_string(n_cases) + " cases, worst -min_eig/max_eig " + fmt(worst) +
             " (tol 1e-8, jitter 1e-8)";
  return r;
}

// ---- gradient check -----------------------------------------------------------

CheckResult verify_gradient_check(int n_cases, std::uint64_t seed) {
  double worst = 0.0;
  std::string what = "none";

  for (int cs = 0; cs < n_cases; ++cs) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(cs)));
    const KernelKind kind = cs % 2 == 0 ? KernelKind::rbf : KernelKind::linear;
    const bool tensors = cs % 4 < 2;
    const int C = 2 + cs % 2;
    const int d = 1 + static_cast<int>(rng() % 2);
    const int depth = 2 + static_cast<int>(rng() % 2);
    const int nz = 2 + static_cast<int>(rng() % 2);
    const bool with_time = cs % 3 != 0;
    const bool with_lag = cs % 5 == 0;
    SigKernelParams p = random_params(rng, kind, depth, d, with_lag, with_time, rng() % 2 == 0);

    std::vector<Sequence> batch;
    std::vector<int> ids;
    const int B = 3;
    for (int j = 0; j < B; ++j) {
      Sequence s = random_sequence(rng, d, 3, 5);
      s.label = j % C;
      batch.push_back(std::move(s));
      ids.push_back(j);
    }

    Model model;
    model.params = p;
    model.n_classes = C;
    model.state_dim = d;
    model.inducing.kind = tensors ? InducingSet::Kind::tensors : InducingSet::Kind::sequences;
    if (tensors)
      model.inducing.tensors = init_inducing_tensors(batch, nz, p, rng());
    else
      model.inducing.sequences = init_inducing_sequences(batch, nz, 3, rng());
    model.vstate = VariationalState::init_identity(nz, C);

    const PackLayout lay = make_layout(model);
    std::vector<double> theta = pack_params(model, lay);
    std::normal_distribution<double> bump(0.0, 0.05);
    for (double& x : theta) x += bump(rng);

    const std::uint64_t mc_seed = mix_seed(seed, 1000 + static_cast<std::uint64_t>(cs));
    const int n_mc = 8;
    const double n_total = 7.0;  // exercise the minibatch scaling factor
    std::vector<double> grad;
    objective(model, lay, theta, batch, ids, n_total, n_mc, mc_seed, mask_all, &grad);

    for (int k = 0; k < lay.total; ++k) {
      const double h = 1e-5 * std::max(1.0, std::abs(theta[static_cast<std::size_t>(k)]));
      std::vector<double> tp = theta, tm = theta;
      tp[static_cast<std::size_t>(k)] += h;
      tm[static_cast<std::size_t>(k)] -= h;
      const double fp = objective(model, lay, tp, batch, ids, n_total, n_mc, mc_seed, mask_none,
                                  nullptr);
      const double fm = objective(model, lay, tm, batch, ids, n_total, n_mc, mc_seed, mask_none,
                                  nullptr);
      const double fd = (fp - fm) / (2.0 * h);
      const double g = grad[static_cast<std::size_t>(k)];
      const double err = std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)});
      if (err > worst) {
        worst = err;
        int group = 0;
        for (int g = 0; g < n_param_groups; ++g)
          if (lay.count[static_cast<std::size_t>(g)] > 0 &&
              k >= lay.offset[static_cast<std::size_t>(g)] &&
              k < lay.offset[static_cast<std::size_t>(g)] + lay.count[static_cast<std::size_t>(g)])
            group = g;
        what = "case " + std::to_string(cs) + ", theta[" + std::to_string(k) + "] (group " +
               std::to_string(group) + ")";
      }
    }
  }

  CheckResult r;
  r.name = "gradient check";
  r.pass = worst <= 1e-4;
  r.detail = std::to_string(n_cases) + " points, worst rel err " + fmt(worst) + " at " + what +
             " (tol 1e-4)";
  return r;
}

// ---- KL correctness -------------------------------------------------------------

CheckResult verify_kl(int n_cases, std::uint64_t seed) {
  double worst = 0.0;
  for (int cs = 0; cs < n_cases; ++cs) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(cs)));
    const int nz = 1 + static_cast<int>(rng() % 6);
    const int C = 2 + static_cast<int>(rng() % 3);
    std::normal_distribution<double> mun(0.0, 1.0), offd(0.0, 0.5);
    std::uniform_real_distribution<double> diag(0.3, 2.0);
    VariationalState s = VariationalState::init_identity(nz, C);
    for (double& x : s.mu) x = mun(rng);
    for (int c = 0; c < C; ++c) {
      double* L = s.L_c(c);
      for (int i = 0; i < nz; ++i)
        for (int j = 0; j <= i; ++j)
          L[static_cast<std::size_t>(i) * nz + j] = (i == j) ? diag(rng) : offd(rng);
    }

    // Independent route: form the dense covariance and use its spectrum.
    double expect = 0.0;
    for (int c = 0; c < C; ++c) {
      Eigen::MatrixXd L = Eigen::MatrixXd::Zero(nz, nz);
      for (int i = 0; i < nz; ++i)
        for (int j = 0; j <= i; ++j) L(i, j) = s.L_c(c)[static_cast<std::size_t>(i) * nz + j];
      const Eigen::MatrixXd S = L * L.transpose();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
      double logdet = 0.0;
      for (int i = 0; i < nz; ++i) logdet += std::log(es.eigenvalues()(i));
      double musq = 0.0;
      for (int i = 0; i < nz; ++i) {
        const double m = s.mu_c(c)[i];
        musq += m * m;
      }
      expect += 0.5 * (S.trace() + musq - nz - logdet);
    }
    worst = std::max(worst, rel_err(kl_whitened(s), expect));
  }

  const double at_identity = kl_whitened(VariationalState::init_identity(4, 3));

  CheckResult r;
  r.name = "KL correctness";
  r.pass = worst <= 1e-10 && at_identity == 0.0;
  r.detail = std::to_string(n_cases) + " states, worst rel err " + fmt(worst) +
             " (tol 1e-10); value at identity init " + fmt(at_identity) + " (must be 0)";
  return r;
}

// ---- complexity scaling -----------------------------------------------------------

namespace {

std::vector<Sequence> grid_sequences(std::mt19937_64& rng, int n, int len, int d) {
  std::normal_distribution<double> val(0.0, 1.0);
  std::vector<Sequence> out;
  for (int i = 0; i < n; ++i) {
    Sequence s;
    s.dim = d;
    for (int t = 0; t < len; ++t) {
      s.times.push_back(static_cast<double>(t));
      for (int j = 0; j < d; ++j) s.values.push_back(val(rng));
    }
    out.push_back(std::move(s));
  }
  return out;
}

double median_time(const std::vector<InducingTensor>& Z, const std::vector<Sequence>& X,
                   const SigKernelParams& p, int reps) {
  using clock = std::chrono::steady_clock;
  std::vector<double> times;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = clock::now();
    const GramBlock g = cov_cross(Z, X, p);
    const auto t1 = clock::now();
    if (!std::isfinite(g.at(0, 0))) throw std::runtime_error("verify_complexity: bad block");
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

}  // namespace

CheckResult verify_complexity(int len_lo, int len_hi, int reps, double max_ratio,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int d = 3, depth = 4, nz = 50, nx = 50;
  SigKernelParams p;
  p.depth = depth;
  p.sigma_prime.assign(static_cast<std::size_t>(depth) + 1, 1.0);
  p.beta = 1.0;
  p.tau = 1.0;
  // Normalization is excluded from the timing: sequence self-norms are
  // quadratic in length by nature, while the cross block itself is linear.
  p.normalize_levels = false;
  p.static_kernel.kind = KernelKind::linear;
  const int aug = augmented_dim(d, 0);

  std::vector<InducingTensor> Z;
  for (int i = 0; i < nz; ++i) Z.push_back(random_tensor(rng, aug, depth));
  const std::vector<Sequence> Xlo = grid_sequences(rng, nx, len_lo, d);
  const std::vector<Sequence> Xhi = grid_sequences(rng, nx, len_hi, d);

  // Warm caches/allocators once before timing.
  (void)cov_cross(Z, std::vector<Sequence>(Xlo.begin(), Xlo.begin() + 5), p);

  const double t_lo = median_time(Z, Xlo, p, reps);
  const double t_hi = median_time(Z, Xhi, p, reps);
  const double ratio = t_hi / t_lo;

  CheckResult r;
  r.name = "complexity scaling";
  r.pass = ratio <= max_ratio;
  std::ostringstream os;
  os << "median over " << reps << " reps: len " << len_lo << " -> " << std::setprecision(3)
     << t_lo << " s, len " << len_hi << " -> " << t_hi << " s, ratio " << ratio << " (max "
     << max_ratio << ")";
  r.detail = os.str();
  return r;
}

std::vector<CheckResult> run_all_checks(bool include_timing) {
  std::vector<CheckResult> out;
  out.push_back(verify_oracle_equivalence());
  out.push_back(verify_refinement());
  out.push_back(verify_invariances());
  out.push_back(verify_psd());
  out.push_back(verify_gradient_check());
  out.push_back(verify_kl());
  if (include_timing) out.push_back(verify_complexity());
  return out;
}

}  // namespace seqgp
