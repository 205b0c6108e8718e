// Acceptance gate: every release-blocking behavior of the library gets one
// test case here, each printing a single [PASS]/[FAIL] line with the
// measured numbers so a log scan tells the whole story.  The cases are
// registered individually with ctest (exact-name filters), so each runs in
// its own process and a hang or crash in one cannot mask another.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "seqgp/data_io.hpp"
#include "seqgp/svgp.hpp"
#include "seqgp/trainer.hpp"
#include "seqgp/verify.hpp"

using namespace seqgp;

namespace {

using clock_t_ = std::chrono::steady_clock;

double seconds_since(clock_t_::time_point t0) {
  return std::chrono::duration<double>(clock_t_::now() - t0).count();
}

void report(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << name << " — " << detail << std::endl;
}

std::string fmt(double x, int prec = 3) {
  std::ostringstream os;
  os << std::setprecision(prec) << x;
  return os.str();
}

// Forwards a library self-check verbatim and mirrors it into doctest.
void run_check(const CheckResult& r) {
  report(r.name, r.pass, r.detail);
  CHECK_MESSAGE(r.pass, r.detail);
}

bool file_exists(const std::string& path) { return std::ifstream(path).good(); }

// Replaces every sequence by its value multiset in lexicographic order on an
// integer time grid: the "bag of values" reduction that forgets ordering.
Dataset bag_of_values(const Dataset& ds) {
  Dataset out = ds;
  for (std::vector<Sequence>* split : {&out.train, &out.test}) {
    for (Sequence& s : *split) {
      REQUIRE(s.dim == 2);
      std::vector<std::pair<double, double>> pts;
      for (int i = 0; i < s.length(); ++i)
        pts.emplace_back(s.values[static_cast<std::size_t>(2 * i)],
                         s.values[static_cast<std::size_t>(2 * i + 1)]);
      std::sort(pts.begin(), pts.end());
      for (int i = 0; i < s.length(); ++i) {
        s.times[static_cast<std::size_t>(i)] = static_cast<double>(i);
        s.values[static_cast<std::size_t>(2 * i)] = pts[static_cast<std::size_t>(i)].first;
        s.values[static_cast<std::size_t>(2 * i + 1)] = pts[static_cast<std::size_t>(i)].second;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("oracle-equivalence") {
  const auto t0 = clock_t_::now();
  const CheckResult r = verify_oracle_equivalence(200, 1);
  const double secs = seconds_since(t0);
  const bool pass = r.pass && secs < 60.0;
  report(r.name, pass, r.detail + " (" + fmt(secs) + " s, limit 60)");
  CHECK_MESSAGE(r.pass, r.detail);
  CHECK(secs < 60.0);
}

TEST_CASE("refinement") { run_check(verify_refinement()); }

TEST_CASE("invariances") { run_check(verify_invariances(2)); }

TEST_CASE("psd") { run_check(verify_psd(50, 3)); }

TEST_CASE("gradient-check") { run_check(verify_gradient_check(20, 4)); }

TEST_CASE("kl") { run_check(verify_kl(50, 5)); }

TEST_CASE("synthetic-drift2") {
  const auto t0 = clock_t_::now();
  const Dataset ds = make_synthetic("drift2", 200, 0);

  SigKernelParams p;
  p.depth = 3;
  p.tau = 1.0;
  p.normalize_levels = true;
  p.static_kernel.kind = KernelKind::rbf;  // lengthscales initialized from data

  TrainConfig cfg;
  cfg.n_z = 20;
  cfg.lr = 0.05;
  cfg.minibatch = 50;
  cfg.phase_epochs = 15;
  cfg.patience_epochs = 8;
  cfg.max_epochs = 30;
  cfg.n_mc_train = 8;
  cfg.n_mc_predict = 128;
  cfg.seed = 0;

  const TrainResult res = train(ds, p, cfg);
  const EvalResult ev =
      evaluate(res.model, ds.test, cfg.n_mc_predict, mix_seed(cfg.seed, 30));
  const double secs = seconds_since(t0);

  const bool pass = ev.accuracy >= 0.95 && ev.mean_nlpp <= 0.25 && secs < 300.0;
  report("synthetic-drift2",
         pass,
         "test accuracy " + fmt(ev.accuracy) + " (need >= 0.95), nlpp " + fmt(ev.mean_nlpp) +
             " (need <= 0.25), " + fmt(secs) + " s (limit 300)");
  CHECK(ev.accuracy >= 0.95);
  CHECK(ev.mean_nlpp <= 0.25);
  CHECK(secs < 300.0);
}

TEST_CASE("synthetic-order3") {
  // Three classes share identical value multisets and differ only in visit
  // order, so any accuracy above chance is order sensitivity by
  // construction.  The control experiment sorts the values (destroying the
  // order) and keeps only first-order features; it must drop to chance.
  const Dataset ds = make_synthetic("order3", 120, 1);

  SigKernelParams p;
  p.depth = 3;
  p.tau = 0.0;
  p.normalize_levels = true;
  p.static_kernel.kind = KernelKind::rbf;

  TrainConfig cfg;
  cfg.n_z = 20;
  cfg.lr = 0.05;
  cfg.minibatch = 40;
  cfg.phase_epochs = 25;
  cfg.patience_epochs = 12;
  cfg.max_epochs = 50;
  cfg.n_mc_train = 8;
  cfg.n_mc_predict = 128;
  cfg.max_len = 20;
  cfg.seed = 1;

  const TrainResult res = train(ds, p, cfg);
  const EvalResult ev =
      evaluate(res.model, ds.test, cfg.n_mc_predict, mix_seed(cfg.seed, 30));

  const Dataset bag = bag_of_values(ds);
  SigKernelParams pb = p;
  pb.depth = 1;
  TrainConfig cfgb = cfg;
  cfgb.phase_epochs = 8;
  cfgb.patience_epochs = 4;
  cfgb.max_epochs = 8;
  const TrainResult resb = train(bag, pb, cfgb);
  const EvalResult evb =
      evaluate(resb.model, bag.test, cfgb.n_mc_predict, mix_seed(cfgb.seed, 30));

  const bool pass = ev.accuracy >= 0.90 && evb.accuracy <= 0.60;
  report("synthetic-order3",
         pass,
         "ordered accuracy " + fmt(ev.accuracy) + " (need >= 0.90), bag-of-values baseline " +
             fmt(evb.accuracy) + " (need <= 0.60)");
  CHECK(ev.accuracy >= 0.90);
  CHECK(evb.accuracy <= 0.60);
}

TEST_CASE("inducing-comparison") {
  // Matched-budget comparison of the two inducing families under one set of
  // pre-learnt hyperparameters: rank-one tensors against short sequences,
  // five fresh initializations each, fixed epoch budget, objective reported
  // with shared Monte Carlo draws so the numbers are directly comparable.
  // Sequences get depth observations each, which equalizes the per-pair
  // cross-covariance cost of the two families.  The check runs where the
  // grid saturates: sequences reach their plateau by a handful of units
  // while tensors keep improving and overtake at the top of the grid.
  const Dataset ds = make_synthetic("order3", 90, 2);

  SigKernelParams p;
  p.depth = 3;
  p.tau = 0.0;
  p.normalize_levels = true;
  p.static_kernel.kind = KernelKind::rbf;

  TrainConfig hcfg;
  hcfg.n_z = 12;
  hcfg.lr = 0.05;
  hcfg.minibatch = 36;
  hcfg.phase_epochs = 25;
  hcfg.patience_epochs = 12;
  hcfg.max_epochs = 50;
  hcfg.n_mc_train = 8;
  hcfg.n_mc_predict = 64;
  hcfg.max_len = 12;
  hcfg.seed = 2;
  const TrainResult hypers = train(ds, p, hcfg);

  Dataset cmp = ds;
  cmp.test.clear();  // only the training objective matters here

  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.minibatch = 30;
  cfg.n_mc_train = 8;
  cfg.n_mc_predict = 64;
  cfg.max_len = 12;
  cfg.inducing_seq_len = p.depth;

  const std::vector<int> grid = {8, 48};
  const int n_seeds = 5;
  const int epochs = 300;
  std::ostringstream table;
  double mean_tensors_top = 0.0, mean_sequences_top = 0.0;
  for (int nz : grid) {
    double mean_t = 0.0, mean_s = 0.0;
    for (int s = 0; s < n_seeds; ++s) {
      cfg.seed = 500 + static_cast<std::uint64_t>(s);
      mean_t += fit_variational(hypers.model, cmp, InducingSet::Kind::tensors, nz, epochs, cfg)
                    .elbo;
      mean_s += fit_variational(hypers.model, cmp, InducingSet::Kind::sequences, nz, epochs, cfg)
                    .elbo;
    }
    mean_t /= n_seeds;
    mean_s /= n_seeds;
    table << " n_z=" << nz << ": tensors " << fmt(mean_t, 6) << " vs sequences "
          << fmt(mean_s, 6) << ";";
    if (nz == grid.back()) {
      mean_tensors_top = mean_t;
      mean_sequences_top = mean_s;
    }
  }

  const bool pass = mean_tensors_top >= mean_sequences_top;
  report("inducing-comparison",
         pass,
         "mean objective over 5 seeds, 300 epochs —" + table.str() + " need tensors >= sequences at n_z=" +
             std::to_string(grid.back()));
  CHECK(mean_tensors_top >= mean_sequences_top);
}

TEST_CASE("complexity") { run_check(verify_complexity(500, 1000, 3, 2.6, 6)); }

TEST_CASE("pendigits-optional") {
  const std::string train_path = std::string(SEQGP_SOURCE_DIR) + "/data/pendigits_train.jsonl";
  const std::string test_path = std::string(SEQGP_SOURCE_DIR) + "/data/pendigits_test.jsonl";
  if (!file_exists(train_path) || !file_exists(test_path)) {
    report("pendigits-optional", true,
           "skipped — place pendigits_{train,test}.jsonl under data/ to enable");
    CHECK(true);
    return;
  }

  const auto t0 = clock_t_::now();
  const Dataset ds = load_dataset(train_path, test_path);

  SigKernelParams p;
  p.depth = 4;
  p.tau = 1.0;
  p.lags = {1.0};
  p.normalize_levels = true;
  p.static_kernel.kind = KernelKind::rbf;

  TrainConfig cfg;
  cfg.n_z = 100;
  cfg.lr = 0.02;
  cfg.minibatch = 50;
  cfg.phase_epochs = 30;
  cfg.patience_epochs = 15;
  cfg.max_epochs = 60;
  cfg.n_mc_train = 8;
  cfg.n_mc_predict = 256;
  cfg.seed = 3;

  const TrainResult res = train(ds, p, cfg);
  const EvalResult ev =
      evaluate(res.model, ds.test, cfg.n_mc_predict, mix_seed(cfg.seed, 30));
  const double secs = seconds_since(t0);

  const bool pass = ev.accuracy >= 0.93 && secs < 7200.0;
  report("pendigits-optional",
         pass,
         "test accuracy " + fmt(ev.accuracy) + " (need >= 0.93), nlpp " + fmt(ev.mean_nlpp) +
             ", " + fmt(secs) + " s (limit 7200)");
  CHECK(ev.accuracy >= 0.93);
  CHECK(secs < 7200.0);
}
