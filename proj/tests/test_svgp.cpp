#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "seqgp/svgp.hpp"

using namespace seqgp;

namespace {

GramBlock block_from(int n, std::vector<double> vals) {
  GramBlock g;
  g.rows = n;
  g.cols = n;
  g.data = std::move(vals);
  for (int i = 0; i < n; ++i) {
    g.row_ids.push_back("r" + std::to_string(i));
    g.col_ids.push_back("r" + std::to_string(i));
  }
  return g;
}

}  // namespace

TEST_SUITE("svgp") {

TEST_CASE("whitened KL closed-form values") {
  VariationalState s = VariationalState::init_identity(3, 2);
  CHECK(kl_whitened(s) == 0.0);

  s.mu[0] = 1.0;  // mu = e_1 for class 0
  CHECK(kl_whitened(s) == doctest::Approx(0.5).epsilon(1e-15));

  // Scaling one diagonal entry: 1/2 (a^2 - 1) - log a added; the untouched
  // class contributes zero.
  VariationalState t = VariationalState::init_identity(2, 2);
  t.L_c(0)[0] = 2.0;
  CHECK(kl_whitened(t) == doctest::Approx(0.5 * (4.0 - 1.0) - std::log(2.0)).epsilon(1e-12));

  CHECK(kl_whitened(s) >= 0.0);
}

TEST_CASE("state validation rejects bad shapes and nonpositive diagonals") {
  VariationalState s = VariationalState::init_identity(2, 2);
  CHECK_NOTHROW(s.validate());
  s.L_c(1)[3] = 0.0;  // diagonal entry (1,1) of class 1
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  VariationalState r = VariationalState::init_identity(2, 2);
  r.mu.pop_back();
  CHECK_THROWS_AS(r.validate(), std::invalid_argument);
}

TEST_CASE("cholesky lowers a small SPD matrix and reports the jitter used") {
  // [[4,2],[2,2]] -> L = [[2,0],[1,1]], up to the base 1e-6 diagonal jitter
  // that every factorization attempt starts from.
  const GramBlock g = block_from(2, {4.0, 2.0, 2.0, 2.0});
  const CholeskyFactor f = cholesky_with_jitter(g);
  CHECK(f.n == 2);
  CHECK(f.L[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(f.L[1] == 0.0);
  CHECK(f.L[2] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(f.L[3] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(f.jitter == 1e-6);

  // A singular matrix needs the jitter to factorize...
  const GramBlock sing = block_from(2, {1.0, 1.0, 1.0, 1.0});
  CHECK_NOTHROW(cholesky_with_jitter(sing));
  // ...and an indefinite one fails even at the largest jitter.
  const GramBlock indef = block_from(2, {1.0, 2.0, 2.0, 1.0});
  CHECK_THROWS_AS(cholesky_with_jitter(indef), std::runtime_error);
}

TEST_CASE("prior state recovers prior marginals") {
  const GramBlock kzz = block_from(2, {2.0, 0.5, 0.5, 1.0});
  const CholeskyFactor f = cholesky_with_jitter(kzz);
  GramBlock kzx;
  kzx.rows = 2;
  kzx.cols = 1;
  kzx.data = {0.3, 0.7};
  const std::vector<double> kxx = {1.5};
  const VariationalState s = VariationalState::init_identity(2, 3);
  const BatchMarginals m = marginal_q(f, kzx, kxx, s);
  REQUIRE(m.n == 1);
  REQUIRE(m.n_classes == 3);
  for (int c = 0; c < 3; ++c) {
    CHECK(m.mean[static_cast<std::size_t>(c)] == doctest::Approx(0.0).epsilon(1e-12));
    // mu=0, L=I: var = k_xx - |A|^2 + |A|^2 = k_xx.
    CHECK(m.var[static_cast<std::size_t>(c)] == doctest::Approx(1.5).epsilon(1e-9));
  }
}

TEST_CASE("a point inside the inducing span is conditioned deterministically") {
  // k_Zx = K_ZZ e_0 and k_xx = K_ZZ[0,0]: the span-free variance term
  // k_xx - |A|^2 vanishes, leaving exactly |L^T A|^2.
  const GramBlock kzz = block_from(2, {2.0, 0.6, 0.6, 1.3});
  const CholeskyFactor f = cholesky_with_jitter(kzz);
  GramBlock kzx;
  kzx.rows = 2;
  kzx.cols = 1;
  kzx.data = {2.0, 0.6};
  const std::vector<double> kxx = {2.0};
  VariationalState s = VariationalState::init_identity(2, 1);
  s.L_c(0)[0] = 0.1;
  s.L_c(0)[3] = 0.1;  // shrink the posterior factor
  const BatchMarginals m = marginal_q(f, kzx, kxx, s);
  // |A|^2 is k_xx up to jitter; the 0.1-scaled posterior keeps 1% of it.
  CHECK(m.var[0] == doctest::Approx(0.01 * 2.0).epsilon(1e-3));
  CHECK(m.var[0] > 0.0);
}

TEST_CASE("marginal means respond linearly to the whitened mean") {
  const GramBlock kzz = block_from(1, {4.0});
  const CholeskyFactor f = cholesky_with_jitter(kzz);
  GramBlock kzx;
  kzx.rows = 1;
  kzx.cols = 1;
  kzx.data = {2.0};
  VariationalState s = VariationalState::init_identity(1, 1);
  s.mu[0] = 3.0;
  // A = L^{-1} k_zx = 2/2 = 1; mean = A^T mu = 3.
  const BatchMarginals m = marginal_q(f, kzx, {5.0}, s);
  CHECK(m.mean[0] == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("variance floor keeps marginals positive") {
  const GramBlock kzz = block_from(1, {1.0});
  const CholeskyFactor f = cholesky_with_jitter(kzz);
  GramBlock kzx;
  kzx.rows = 1;
  kzx.cols = 1;
  kzx.data = {1.0};
  VariationalState s = VariationalState::init_identity(1, 1);
  s.L_c(0)[0] = 1e-12;  // essentially deterministic posterior
  const BatchMarginals m = marginal_q(f, kzx, {1.0}, s);
  CHECK(m.var[0] >= 1e-12);
}

TEST_CASE("expected log likelihood saturates and symmetrizes") {
  const double vars[] = {1e-18, 1e-18};
  const double sure[] = {20.0, -20.0};
  CHECK(expected_log_lik(sure, vars, 2, 0, 64, 9) == doctest::Approx(0.0).epsilon(1e-8));
  const double tied[] = {0.0, 0.0};
  CHECK(expected_log_lik(tied, vars, 2, 0, 64, 9) ==
        doctest::Approx(std::log(0.5)).epsilon(1e-8));
  // Deterministic in the seed.
  const double m[] = {0.4, -0.2};
  const double v[] = {0.5, 1.5};
  CHECK(expected_log_lik(m, v, 2, 1, 32, 77) == expected_log_lik(m, v, 2, 1, 32, 77));
  CHECK(expected_log_lik(m, v, 2, 1, 32, 77) != expected_log_lik(m, v, 2, 1, 32, 78));
}

TEST_CASE("monte carlo expectation approaches an independent estimate") {
  // C=2, means (1,0), unit variances: estimate E[log softmax_0] two ways.
  const double m[] = {1.0, 0.0};
  const double v[] = {1.0, 1.0};
  const double got = expected_log_lik(m, v, 2, 0, 200000, 5);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n(0.0, 1.0);
  double ref = 0.0;
  const int n_ref = 400000;
  for (int i = 0; i < n_ref; ++i) {
    const double f0 = 1.0 + n(rng), f1 = n(rng);
    const double mx = std::max(f0, f1);
    ref += f0 - (mx + std::log(std::exp(f0 - mx) + std::exp(f1 - mx)));
  }
  ref /= n_ref;
  CHECK(got == doctest::Approx(ref).epsilon(0.02));
}

TEST_CASE("elbo scales the data term by the full dataset size") {
  BatchMarginals m;
  m.n = 2;
  m.n_classes = 2;
  m.mean = {0.5, -0.5, -0.3, 0.3};
  m.var = {0.2, 0.2, 0.4, 0.4};
  const VariationalState s = VariationalState::init_identity(2, 2);  // KL = 0
  const std::vector<int> labels = {0, 1};
  const std::vector<int> ids = {4, 9};
  const double full = elbo(m, labels, ids, s, 2.0, 64, 123);

  // Two half batches with doubled weight average to the same data term.
  BatchMarginals a, b;
  a.n = b.n = 1;
  a.n_classes = b.n_classes = 2;
  a.mean = {0.5, -0.5};
  a.var = {0.2, 0.2};
  b.mean = {-0.3, 0.3};
  b.var = {0.4, 0.4};
  const double ea = elbo(a, {0}, {4}, s, 2.0, 64, 123);
  const double eb = elbo(b, {1}, {9}, s, 2.0, 64, 123);
  CHECK(0.5 * (ea + eb) == doctest::Approx(full).epsilon(1e-12));

  // A nonzero KL subtracts off.
  VariationalState t = VariationalState::init_identity(2, 2);
  t.mu[0] = 2.0;
  CHECK(elbo(m, labels, ids, t, 2.0, 64, 123) == doctest::Approx(full - 2.0).epsilon(1e-10));
}

TEST_CASE("predictive probabilities are symmetric, normalized and saturable") {
  const double v1[] = {1.0, 1.0, 1.0};
  const double m0[] = {0.0, 0.0, 0.0};
  const std::vector<double> p = predict_probs(m0, v1, 3, 40000, 3);
  double sum = 0.0;
  for (double q : p) {
    CHECK(q == doctest::Approx(1.0 / 3).epsilon(0.03));
    sum += q;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  const double m1[] = {-30.0, 30.0, -30.0};
  const double v0[] = {1e-12, 1e-12, 1e-12};
  const std::vector<double> q = predict_probs(m1, v0, 3, 64, 3);
  CHECK(q[1] == doctest::Approx(1.0).epsilon(1e-9));

  CHECK(nlpp(q, 1) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(nlpp(p, 0) == doctest::Approx(std::log(3.0)).epsilon(0.05));
}

TEST_CASE("per-example draws are tied to example ids") {
  // The same example id must receive the same draws regardless of batch
  // position, which makes disjoint minibatches consistent.
  const std::vector<double> d1 = mc_normals(mix_seed(7, 42), 8, 2);
  const std::vector<double> d2 = mc_normals(mix_seed(7, 42), 8, 2);
  const std::vector<double> d3 = mc_normals(mix_seed(7, 43), 8, 2);
  CHECK(d1 == d2);
  CHECK(d1 != d3);
  REQUIRE(d1.size() == 16);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Model m;
  m.n_classes = 3;
  m.state_dim = 2;
  m.params.depth = 2;
  m.params.sigma_prime = {0.1234567890123456789, 1.0 / 3.0, std::sqrt(2.0)};
  m.params.beta = 0.7071067811865475;
  m.params.tau = 0.1;
  m.params.lags = {0.25, 1.0 / 7.0};
  m.params.normalize_levels = true;
  m.params.static_kernel.kind = KernelKind::rbf;
  m.params.static_kernel.lengthscales = {1.1, 2.2e-7};
  m.inducing.kind = InducingSet::Kind::tensors;
  {
    InducingTensor t;
    t.z0 = -0.333333333333333314829616256247;
    t.levels = {{1e-300, 2.0, 3.0, 4.0, 5.0, 6.0}};
    t.levels[0].resize(6);
    m.inducing.tensors = {t, t};
  }
  m.vstate = VariationalState::init_identity(2, 3);
  m.vstate.mu[1] = 1.0 / 3.0;
  m.vstate.L[2] = -5e-17;
  m.data_normalized = true;
  m.data_mean = {0.1, -0.2};
  m.data_std = {1.0, 3.0};

  const std::string path = "checkpoint_roundtrip_test.json";
  save_checkpoint(m, path);
  const Model r = load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(r.n_classes == m.n_classes);
  CHECK(r.state_dim == m.state_dim);
  CHECK(r.params.depth == m.params.depth);
  CHECK(r.params.sigma_prime == m.params.sigma_prime);
  CHECK(r.params.beta == m.params.beta);
  CHECK(r.params.tau == m.params.tau);
  CHECK(r.params.lags == m.params.lags);
  CHECK(r.params.normalize_levels == m.params.normalize_levels);
  CHECK(r.params.static_kernel.kind == m.params.static_kernel.kind);
  CHECK(r.params.static_kernel.lengthscales == m.params.static_kernel.lengthscales);
  CHECK(r.inducing.kind == m.inducing.kind);
  REQUIRE(r.inducing.tensors.size() == 2);
  CHECK(r.inducing.tensors[0].z0 == m.inducing.tensors[0].z0);
  CHECK(r.inducing.tensors[1].levels == m.inducing.tensors[1].levels);
  CHECK(r.vstate.mu == m.vstate.mu);
  CHECK(r.vstate.L == m.vstate.L);
  CHECK(r.data_normalized == m.data_normalized);
  CHECK(r.data_mean == m.data_mean);
  CHECK(r.data_std == m.data_std);
}

TEST_CASE("checkpoint of inducing sequences round trips too") {
  Model m;
  m.n_classes = 2;
  m.state_dim = 1;
  m.params.depth = 1;
  m.params.sigma_prime = {1.0, 1.0};
  m.params.static_kernel.kind = KernelKind::linear;
  m.inducing.kind = InducingSet::Kind::sequences;
  Sequence s;
  s.dim = 1;
  s.times = {0.0, 0.700000000000000067};
  s.values = {1e-17, -2.5};
  m.inducing.sequences = {s};
  m.vstate = VariationalState::init_identity(1, 2);

  const std::string path = "checkpoint_seq_roundtrip_test.json";
  save_checkpoint(m, path);
  const Model r = load_checkpoint(path);
  std::remove(path.c_str());
  REQUIRE(r.inducing.sequences.size() == 1);
  CHECK(r.inducing.sequences[0].times == s.times);
  CHECK(r.inducing.sequences[0].values == s.values);
}

}  // TEST_SUITE
