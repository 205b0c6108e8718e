#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "seqgp/data_io.hpp"
#include "seqgp/svgp.hpp"
#include "seqgp/trainer.hpp"

using namespace seqgp;

namespace {

SigKernelParams small_params(int depth, KernelKind kind, double tau) {
  SigKernelParams p;
  p.depth = depth;
  p.sigma_prime.assign(static_cast<std::size_t>(depth) + 1, 1.0);
  p.beta = 1.0;
  p.tau = tau;
  p.normalize_levels = true;
  p.static_kernel.kind = kind;
  if (kind == KernelKind::rbf) p.static_kernel.lengthscales = {1.0};
  return p;
}

std::vector<Sequence> tiny_batch(int n, int n_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> val(0.0, 1.0);
  std::vector<Sequence> out;
  for (int i = 0; i < n; ++i) {
    Sequence s;
    s.dim = 1;
    s.label = i % n_classes;
    const int len = 3 + static_cast<int>(rng() % 3);
    for (int l = 0; l < len; ++l) {
      s.times.push_back(l);
      s.values.push_back(val(rng));
    }
    out.push_back(std::move(s));
  }
  return out;
}

Model tiny_model(const std::vector<Sequence>& batch, int n_z, int n_classes,
                 const SigKernelParams& p, std::uint64_t seed) {
  Model m;
  m.params = p;
  m.n_classes = n_classes;
  m.state_dim = batch.front().dim;
  m.inducing.kind = InducingSet::Kind::tensors;
  m.inducing.tensors = init_inducing_tensors(batch, n_z, p, seed);
  m.vstate = VariationalState::init_identity(n_z, n_classes);
  return m;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("pack and unpack invert each other") {
  const std::vector<Sequence> batch = tiny_batch(4, 2, 1);
  SigKernelParams p = small_params(2, KernelKind::rbf, 0.4);
  p.sigma_prime = {0.8, 1.2, 0.6};
  p.beta = 1.4;
  Model m = tiny_model(batch, 3, 2, p, 2);
  m.vstate.mu[1] = 0.7;
  m.vstate.L_c(1)[2 * 3 + 1] = -0.3;  // strict lower entry of class 1

  const PackLayout lay = make_layout(m);
  const std::vector<double> theta = pack_params(m, lay);
  CHECK(static_cast<int>(theta.size()) == lay.total);

  Model r = m;  // same structure; parameters will be overwritten
  unpack_params(theta, lay, r);
  CHECK(r.vstate.mu == m.vstate.mu);
  for (std::size_t i = 0; i < m.vstate.L.size(); ++i)
    CHECK(r.vstate.L[i] == doctest::Approx(m.vstate.L[i]).epsilon(1e-12));
  CHECK(r.params.beta == doctest::Approx(1.4).epsilon(1e-12));
  CHECK(r.params.tau == doctest::Approx(0.4).epsilon(1e-12));
  for (std::size_t i = 0; i < m.inducing.tensors.size(); ++i) {
    CHECK(r.inducing.tensors[i].z0 == m.inducing.tensors[i].z0);
    CHECK(r.inducing.tensors[i].levels == m.inducing.tensors[i].levels);
  }

  // Round trip again: theta -> model -> theta (softplus pairs are inverse
  // bijections, exact up to rounding).
  const std::vector<double> theta2 = pack_params(r, lay);
  REQUIRE(theta2.size() == theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k)
    CHECK(theta2[k] == doctest::Approx(theta[k]).epsilon(1e-12));
}

TEST_CASE("layout skips the time scale when tau is zero") {
  const std::vector<Sequence> batch = tiny_batch(3, 2, 4);
  Model m0 = tiny_model(batch, 2, 2, small_params(2, KernelKind::linear, 0.0), 5);
  const PackLayout l0 = make_layout(m0);
  CHECK(l0.count[static_cast<int>(ParamGroup::time_scale)] == 0);
  CHECK(l0.count[static_cast<int>(ParamGroup::lengthscales)] == 0);  // linear kernel

  Model m1 = tiny_model(batch, 2, 2, small_params(2, KernelKind::rbf, 0.5), 5);
  const PackLayout l1 = make_layout(m1);
  CHECK(l1.count[static_cast<int>(ParamGroup::time_scale)] == 1);
  CHECK(l1.count[static_cast<int>(ParamGroup::lengthscales)] == 1);
}

TEST_CASE("objective primal value matches the reference elbo assembly") {
  // The tape-based objective must agree with composing the plain svgp
  // pieces: same grams, same marginals, same draws.
  for (KernelKind kind : {KernelKind::linear, KernelKind::rbf}) {
    const std::vector<Sequence> batch = tiny_batch(4, 2, 11);
    const SigKernelParams p = small_params(2, kind, 0.6);
    Model m = tiny_model(batch, 3, 2, p, 12);
    m.vstate.mu[0] = 0.4;
    m.vstate.mu[4] = -0.2;

    const PackLayout lay = make_layout(m);
    const std::vector<double> theta = pack_params(m, lay);
    std::vector<int> ids = {10, 11, 12, 13};
    const double got = objective(m, lay, theta, batch, ids, 8.0, 16, 99, mask_none, nullptr);

    GramBlock kzz = cov_inducing(m.inducing.tensors, m.params, m.state_dim);
    const CholeskyFactor f = cholesky_with_jitter(kzz);
    const GramBlock kzx = cov_cross(m.inducing.tensors, batch, m.params);
    const std::vector<double> kxx = var_sequences(batch, m.params);
    const BatchMarginals marg = marginal_q(f, kzx, kxx, m.vstate);
    std::vector<int> labels;
    for (const Sequence& s : batch) labels.push_back(s.label);
    const double want = elbo(marg, labels, ids, m.vstate, 8.0, 16, 99);

    CHECK(got == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("frozen groups receive exactly zero gradient") {
  const std::vector<Sequence> batch = tiny_batch(4, 2, 21);
  Model m = tiny_model(batch, 2, 2, small_params(2, KernelKind::rbf, 0.3), 22);
  const PackLayout lay = make_layout(m);
  const std::vector<double> theta = pack_params(m, lay);
  const std::vector<int> ids = {0, 1, 2, 3};

  std::vector<double> grad;
  objective(m, lay, theta, batch, ids, 4.0, 8, 5, mask_variational, &grad);

  const auto group_of = [&](int k) {
    for (int g = n_param_groups - 1; g >= 0; --g)
      if (lay.count[g] > 0 && k >= lay.offset[g] && k < lay.offset[g] + lay.count[g]) return g;
    return -1;
  };
  bool any_nonzero_active = false;
  for (int k = 0; k < lay.total; ++k) {
    const int g = group_of(k);
    if (mask_variational[static_cast<std::size_t>(g)]) {
      any_nonzero_active |= grad[static_cast<std::size_t>(k)] != 0.0;
    } else {
      CHECK(grad[static_cast<std::size_t>(k)] == 0.0);
    }
  }
  CHECK(any_nonzero_active);
}

TEST_CASE("adam leaves parameters alone under a zero gradient") {
  std::vector<double> theta = {1.0, -2.0};
  AdamState st(2);
  adam_step(theta, {0.0, 0.0}, st, 0.1, false);
  CHECK(theta == std::vector<double>{1.0, -2.0});
  CHECK_THROWS_AS(
      adam_step(theta, {std::numeric_limits<double>::quiet_NaN(), 0.0}, st, 0.1, false),
      std::runtime_error);
}

TEST_CASE("adam descends on a quadratic") {
  for (bool nesterov : {false, true}) {
    std::vector<double> w = {1.0};
    AdamState st(1);
    adam_step(w, {w[0]}, st, 0.1, nesterov);  // grad of 1/2 w^2 is w
    CHECK(w[0] < 1.0);

    // Full minimization of a 2-d bowl within the step budget.
    std::vector<double> x = {3.0, -2.0};
    AdamState st2(2);
    int steps = 0;
    for (; steps < 5000; ++steps) {
      if (std::abs(x[0]) < 1e-6 && std::abs(x[1]) < 1e-6) break;
      adam_step(x, {x[0], 4.0 * x[1]}, st2, 0.01, nesterov);
    }
    CHECK(std::abs(x[0]) < 1e-6);
    CHECK(std::abs(x[1]) < 1e-6);
    CHECK(steps < 5000);
  }
}

TEST_CASE("inducing tensor init draws factors from augmented observations") {
  std::vector<Sequence> train = tiny_batch(6, 2, 31);
  const SigKernelParams p = small_params(3, KernelKind::rbf, 0.8);
  const std::vector<InducingTensor> Z = init_inducing_tensors(train, 4, p, 77);
  REQUIRE(Z.size() == 4);

  // Collect every augmented observation row of the training set.
  std::set<std::vector<double>> rows;
  for (const Sequence& s : train) {
    const AugmentedSequence a = augment(s, p.tau, p.lags);
    for (int i = 0; i < s.length(); ++i) {
      const double* st = a.state(i);
      rows.insert(std::vector<double>(st, st + a.aug_dim));
    }
  }
  for (const InducingTensor& t : Z) {
    CHECK(t.z0 == 1.0);
    CHECK(t.depth() == 3);
    for (int m = 1; m <= 3; ++m)
      for (int k = 0; k < m; ++k) {
        const double* f = t.factor(m, k);
        CHECK(rows.count(std::vector<double>(f, f + t.aug_dim())) == 1);
      }
  }

  // Identical seed, identical tensors; different seed differs.
  const std::vector<InducingTensor> Z2 = init_inducing_tensors(train, 4, p, 77);
  for (std::size_t i = 0; i < Z.size(); ++i) CHECK(Z[i].levels == Z2[i].levels);
  const std::vector<InducingTensor> Z3 = init_inducing_tensors(train, 4, p, 78);
  bool any_diff = false;
  for (std::size_t i = 0; i < Z.size(); ++i) any_diff |= Z[i].levels != Z3[i].levels;
  CHECK(any_diff);
}

TEST_CASE("inducing tensors handle sequences shorter than the depth") {
  Sequence s;
  s.dim = 1;
  s.label = 0;
  s.times = {0.0, 1.0};
  s.values = {0.5, -0.5};
  const SigKernelParams p = small_params(4, KernelKind::linear, 0.0);
  const std::vector<InducingTensor> Z = init_inducing_tensors({s}, 2, p, 3);
  for (const InducingTensor& t : Z) CHECK_NOTHROW(t.validate(augmented_dim(1, 0), 4));
}

TEST_CASE("inducing sequence init takes contiguous windows") {
  std::vector<Sequence> train = tiny_batch(5, 2, 41);
  const std::vector<Sequence> Z = init_inducing_sequences(train, 6, 3, 13);
  REQUIRE(Z.size() == 6);
  for (const Sequence& w : Z) {
    CHECK(w.length() <= 3);
    CHECK_NOTHROW(w.validate());
    // The window must appear as a contiguous block in some training sequence.
    bool found = false;
    for (const Sequence& s : train) {
      for (int start = 0; start + w.length() <= s.length(); ++start) {
        bool match = true;
        for (int i = 0; i < w.length() && match; ++i)
          match = s.times[static_cast<std::size_t>(start + i)] == w.times[static_cast<std::size_t>(i)] &&
                  s.values[static_cast<std::size_t>(start + i)] == w.values[static_cast<std::size_t>(i)];
        if (match) {
          found = true;
          break;
        }
      }
      if (found) break;
    }
    CHECK(found);
  }

  // A window request longer than the sequence returns the whole sequence.
  Sequence shorty;
  shorty.dim = 1;
  shorty.times = {0, 1};
  shorty.values = {1, 2};
  const std::vector<Sequence> W = init_inducing_sequences({shorty}, 1, 5, 0);
  CHECK(W[0].length() == 2);
}

TEST_CASE("stratified split keeps every viable class in validation") {
  std::vector<Sequence> data = tiny_batch(10, 3, 51);  // labels 0,1,2 cycling
  const auto [tr, va] = stratified_split(data, 3, 0.2, 7);
  CHECK(tr.size() + va.size() == data.size());
  std::set<int> seen(va.begin(), va.end());
  CHECK(seen.size() == va.size());  // no duplicates
  std::set<int> val_classes;
  for (int i : va) val_classes.insert(data[static_cast<std::size_t>(i)].label);
  CHECK(val_classes.size() == 3);
  CHECK(std::is_sorted(tr.begin(), tr.end()));
  CHECK(std::is_sorted(va.begin(), va.end()));

  // Determinism.
  const auto [tr2, va2] = stratified_split(data, 3, 0.2, 7);
  CHECK(tr == tr2);
  CHECK(va == va2);
}

TEST_CASE("training log serializes one row per epoch") {
  TrainLog log;
  log.rows.push_back({1, "warmup", -10.5, 0.9, 0.5, 0.25});
  log.rows.push_back({2, "hypers", -8.25, 0.7, 0.75, 0.5});
  std::ostringstream os;
  log.write_csv(os);
  const std::string out = os.str();
  CHECK(out.find("epoch,phase,elbo,val_nlpp,val_acc,seconds") == 0);
  CHECK(out.find("1,warmup,") != std::string::npos);
  CHECK(out.find("2,hypers,") != std::string::npos);
  CHECK(std::count(out.begin(), out.end(), '\n') == 3);
}

TEST_CASE("config validation rejects out-of-range settings") {
  Dataset ds = make_synthetic("drift2", 8, 1);
  SigKernelParams p = small_params(2, KernelKind::linear, 0.0);
  TrainConfig cfg;
  cfg.n_z = 2;
  cfg.minibatch = 4;
  cfg.phase_epochs = 1;
  cfg.patience_epochs = 1;
  cfg.max_epochs = 1;
  cfg.n_mc_train = 4;
  cfg.n_mc_predict = 8;

  TrainConfig bad = cfg;
  bad.val_fraction = 0.0;
  CHECK_THROWS_AS(train(ds, p, bad), std::invalid_argument);
  bad = cfg;
  bad.val_fraction = 1.0;
  CHECK_THROWS_AS(train(ds, p, bad), std::invalid_argument);
  bad = cfg;
  bad.lr = 0.0;
  CHECK_THROWS_AS(train(ds, p, bad), std::invalid_argument);
  bad = cfg;
  bad.optimizer = "sgd";
  CHECK_THROWS_AS(train(ds, p, bad), std::invalid_argument);
  bad = cfg;
  bad.minibatch = 0;
  CHECK_THROWS_AS(train(ds, p, bad), std::invalid_argument);
}

TEST_CASE("training is deterministic given the seed") {
  Dataset ds = make_synthetic("drift2", 12, 2);
  SigKernelParams p = small_params(2, KernelKind::rbf, 1.0);
  p.static_kernel.lengthscales.clear();  // exercise data-driven init
  TrainConfig cfg;
  cfg.n_z = 3;
  cfg.minibatch = 5;
  cfg.phase_epochs = 2;
  cfg.patience_epochs = 2;
  cfg.max_epochs = 3;
  cfg.n_mc_train = 4;
  cfg.n_mc_predict = 16;
  cfg.seed = 9;

  const TrainResult a = train(ds, p, cfg);
  const TrainResult b = train(ds, p, cfg);
  REQUIRE(a.log.rows.size() == b.log.rows.size());
  for (std::size_t i = 0; i < a.log.rows.size(); ++i) {
    CHECK(a.log.rows[i].epoch == b.log.rows[i].epoch);
    CHECK(a.log.rows[i].phase == b.log.rows[i].phase);
    CHECK(a.log.rows[i].elbo == b.log.rows[i].elbo);  // bit-equal
    CHECK(a.log.rows[i].val_nlpp == b.log.rows[i].val_nlpp);
    CHECK(a.log.rows[i].val_acc == b.log.rows[i].val_acc);
  }
  CHECK(a.model.vstate.mu == b.model.vstate.mu);
  CHECK(a.model.vstate.L == b.model.vstate.L);
  CHECK(a.model.params.sigma_prime == b.model.params.sigma_prime);
  CHECK(a.model.params.beta == b.model.params.beta);

  // The log covers all four phases in order.
  std::vector<std::string> phases;
  for (const auto& r : a.log.rows)
    if (phases.empty() || phases.back() != r.phase) phases.push_back(r.phase);
  CHECK(phases == std::vector<std::string>{"warmup", "hypers", "all", "final"});
  for (std::size_t i = 0; i < a.log.rows.size(); ++i)
    CHECK(a.log.rows[i].epoch == static_cast<int>(i) + 1);
}

TEST_CASE("variational-only phases keep hyperparameters bit-identical") {
  const std::vector<Sequence> batch = tiny_batch(6, 2, 61);
  Model m = tiny_model(batch, 2, 2, small_params(2, KernelKind::rbf, 0.7), 62);
  const PackLayout lay = make_layout(m);
  std::vector<double> theta = pack_params(m, lay);
  const std::vector<double> theta0 = theta;
  const std::vector<int> ids = {0, 1, 2, 3, 4, 5};

  AdamState st(theta.size());
  for (int step = 0; step < 3; ++step) {
    std::vector<double> grad;
    objective(m, lay, theta, batch, ids, 6.0, 8, 100 + step, mask_variational, &grad);
    for (double& g : grad) g = -g;  // ascent on the bound
    adam_step(theta, grad, st, 1e-2, true);
  }

  // Hyperparameter groups were frozen: their raw entries never moved.
  for (int g : {static_cast<int>(ParamGroup::level_scales),
                static_cast<int>(ParamGroup::scale_mult),
                static_cast<int>(ParamGroup::time_scale),
                static_cast<int>(ParamGroup::lengthscales)}) {
    for (int k = lay.offset[g]; k < lay.offset[g] + lay.count[g]; ++k)
      CHECK(theta[static_cast<std::size_t>(k)] == theta0[static_cast<std::size_t>(k)]);
  }
  // While the variational mean did move.
  bool moved = false;
  const int g0 = static_cast<int>(ParamGroup::variational_mean);
  for (int k = lay.offset[g0]; k < lay.offset[g0] + lay.count[g0]; ++k)
    moved |= theta[static_cast<std::size_t>(k)] != theta0[static_cast<std::size_t>(k)];
  CHECK(moved);
}

TEST_CASE("optimizing the variational parameters improves the bound") {
  const std::vector<Sequence> batch = tiny_batch(8, 2, 71);
  Model m = tiny_model(batch, 3, 2, small_params(2, KernelKind::linear, 0.0), 72);
  const PackLayout lay = make_layout(m);
  std::vector<double> theta = pack_params(m, lay);
  std::vector<int> ids(8);
  for (int i = 0; i < 8; ++i) ids[static_cast<std::size_t>(i)] = i;

  const double before = objective(m, lay, theta, batch, ids, 8.0, 16, 7, mask_none, nullptr);
  AdamState st(theta.size());
  for (int step = 0; step < 60; ++step) {
    std::vector<double> grad;
    objective(m, lay, theta, batch, ids, 8.0, 16, 7, mask_variational, &grad);
    for (double& g : grad) g = -g;
    adam_step(theta, grad, st, 5e-2, true);
  }
  const double after = objective(m, lay, theta, batch, ids, 8.0, 16, 7, mask_none, nullptr);
  CHECK(after > before);
}

TEST_CASE("more inducing capacity does not hurt the optimized bound") {
  Dataset ds = make_synthetic("drift2", 10, 3);
  SigKernelParams p = small_params(2, KernelKind::linear, 0.0);
  p.normalize_levels = true;

  Model hypers;
  hypers.params = p;
  hypers.n_classes = ds.n_classes;
  hypers.state_dim = ds.dim;
  hypers.data_normalized = false;

  TrainConfig cfg;
  cfg.minibatch = 10;
  cfg.n_mc_train = 8;
  cfg.n_mc_predict = 16;
  cfg.lr = 5e-2;
  cfg.seed = 4;
  Dataset no_test = ds;
  no_test.test.clear();

  const VariationalFit small = fit_variational(hypers, no_test, InducingSet::Kind::tensors, 1,
                                               120, cfg);
  const VariationalFit big = fit_variational(hypers, no_test, InducingSet::Kind::tensors, 10,
                                             120, cfg);
  CHECK(big.elbo >= small.elbo - 1e-3);
}

}  // TEST_SUITE
