#include "seqgp/sig_kernel.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <iostream>
#include <ostream>
#include <stdexcept>

namespace seqgp {

std::vector<double> SigKernelParams::sigma() const {
  std::vector<double> s(sigma_prime.size());
  for (std::size_t m = 0; m < sigma_prime.size(); ++m) s[m] = beta * sigma_prime[m];
  return s;
}

std::vector<double> SigKernelParams::sigma_sq() const {
  std::vector<double> s = sigma();
  for (double& v : s) v *= v;
  return s;
}

void SigKernelParams::validate(int state_dim) const {
  if (depth < 1) throw std::invalid_argument("SigKernelParams: depth must be >= 1");
  if (static_cast<int>(sigma_prime.size()) != depth + 1)
    throw std::invalid_argument("SigKernelParams: need depth+1 level scalings");
  for (double s : sigma_prime)
    if (!(s > 0.0) || !std::isfinite(s))
      throw std::invalid_argument("SigKernelParams: level scalings must be positive");
  if (!(beta > 0.0) || !std::isfinite(beta))
    throw std::invalid_argument("SigKernelParams: beta must be positive");
  if (!(tau >= 0.0) || !std::isfinite(tau))
    throw std::invalid_argument("SigKernelParams: tau must be non-negative");
  for (double lag : lags)
    if (!(lag > 0.0)) throw std::invalid_argument("SigKernelParams: lags must be positive");
  static_kernel.validate(state_dim);
}

namespace {
void hash_bytes(std::uint64_t& h, const void* p, std::size_t n) {
  const unsigned char* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;  // FNV-1a
  }
}
void hash_double(std::uint64_t& h, double v) { hash_bytes(h, &v, sizeof(v)); }
void hash_int(std::uint64_t& h, int v) { hash_bytes(h, &v, sizeof(v)); }
}  // namespace

std::uint64_t SigKernelParams::hash(int state_dim) const {
  std::uint64_t h = 1469598103934665603ull;
  hash_int(h, depth);
  hash_int(h, static_cast<int>(static_kernel.kind));
  hash_int(h, normalize_levels ? 1 : 0);
  hash_int(h, state_dim);
  hash_double(h, beta);
  hash_double(h, tau);
  for (double v : sigma_prime) hash_double(h, v);
  for (double v : lags) hash_double(h, v);
  for (double v : static_kernel.lengthscales) hash_double(h, v);
  return h;
}

void InducingTensor::validate(int expect_aug_dim, int depth_m) const {
  if (!std::isfinite(z0)) throw std::invalid_argument("InducingTensor: non-finite z0");
  if (depth() != depth_m)
    throw std::invalid_argument("InducingTensor: level count does not match kernel depth");
  for (int m = 1; m <= depth_m; ++m) {
    if (levels[static_cast<std::size_t>(m - 1)].size() !=
        static_cast<std::size_t>(m) * expect_aug_dim)
      throw std::invalid_argument("InducingTensor: level " + std::to_string(m) +
                                  " must hold m factor vectors of augmented dimension");
    for (double v : levels[static_cast<std::size_t>(m - 1)])
      if (!std::isfinite(v)) throw std::invalid_argument("InducingTensor: non-finite factor");
  }
}

void GramBlock::write_csv(std::ostream& os) const {
  os.precision(17);
  os << "id";
  for (const auto& c : col_ids) os << "," << c;
  os << "\n";
  for (int i = 0; i < rows; ++i) {
    os << row_ids[static_cast<std::size_t>(i)];
    for (int j = 0; j < cols; ++j) os << "," << at(i, j);
    os << "\n";
  }
}

void GramBlock::validate_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) throw std::runtime_error("GramBlock: non-finite covariance entry");
}

// ---------------------------------------------------------------------------

engine::Config<double> make_engine_config(const SigKernelParams& p, int state_dim) {
  p.validate(state_dim);
  engine::Config<double> cfg;
  cfg.kind = p.static_kernel.kind;
  cfg.aug_dim = augmented_dim(state_dim, static_cast<int>(p.lags.size()));
  cfg.depth = p.depth;
  cfg.normalize = p.normalize_levels;
  cfg.sigma_sq = p.sigma_sq();
  if (cfg.kind == KernelKind::rbf) {
    std::vector<double> inv_sq(p.static_kernel.lengthscales.size());
    for (std::size_t j = 0; j < inv_sq.size(); ++j)
      inv_sq[j] = 1.0 / (p.static_kernel.lengthscales[j] * p.static_kernel.lengthscales[j]);
    cfg.gammas = augmented_gammas(inv_sq, state_dim, static_cast<int>(p.lags.size()));
  }
  return cfg;
}

engine::Batch<double> make_engine_batch(const SequenceBatch& b) {
  engine::Batch<double> e;
  e.n = b.n;
  e.len = b.len;
  e.dim = b.dim;
  e.states = b.states;
  return e;
}

engine::Tensors<double> make_engine_tensors(const std::vector<InducingTensor>& z) {
  if (z.empty()) throw std::invalid_argument("inducing tensors: empty set");
  engine::Tensors<double> t;
  t.n = static_cast<int>(z.size());
  t.dim = z.front().aug_dim();
  t.depth = z.front().depth();
  t.factors.resize(static_cast<std::size_t>(t.depth));
  for (int m = 1; m <= t.depth; ++m)
    t.factors[static_cast<std::size_t>(m - 1)].resize(static_cast<std::size_t>(t.n) * m * t.dim);
  for (int i = 0; i < t.n; ++i) {
    z[static_cast<std::size_t>(i)].validate(t.dim, t.depth);
    t.z0.push_back(z[static_cast<std::size_t>(i)].z0);
    for (int m = 1; m <= t.depth; ++m)
      for (int k = 0; k < m; ++k) {
        const double* src = z[static_cast<std::size_t>(i)].factor(m, k);
        double* dst = t.factors[static_cast<std::size_t>(m - 1)].data() +
                      (static_cast<std::size_t>(i) * m + k) * t.dim;
        std::memcpy(dst, src, sizeof(double) * static_cast<std::size_t>(t.dim));
      }
  }
  return t;
}

SequenceBatch prepare_batch(const std::vector<Sequence>& X, const SigKernelParams& p) {
  if (X.empty()) throw std::invalid_argument("prepare_batch: empty sequence set");
  std::vector<AugmentedSequence> aug;
  aug.reserve(X.size());
  for (const auto& s : X) aug.push_back(augment(s, p.tau, p.lags));
  return tabulate(aug);
}

namespace {
std::vector<std::string> make_ids(const char* prefix, int n) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids.push_back(std::string(prefix) + std::to_string(i));
  return ids;
}

void warn_degenerate(bool degenerate) {
  // Zero level norms are routine for very short sequences (a length-l
  // sequence has no mass above level l-1), so say it once and stay quiet.
  static std::atomic<bool> warned{false};
  if (degenerate && !warned.exchange(true))
    std::cerr << "sig_kernel: a sequence has a vanishing level norm; that level is left "
                 "unnormalized (warning shown once)\n";
}

GramBlock to_block(const NdArray<double>& K, std::vector<std::string> row_ids,
                   std::vector<std::string> col_ids, std::uint64_t hash) {
  GramBlock g;
  g.rows = K.shape[0];
  g.cols = K.shape[1];
  g.data = K.data;
  g.row_ids = std::move(row_ids);
  g.col_ids = std::move(col_ids);
  g.params_hash = hash;
  g.validate_finite();
  return g;
}
}  // namespace

GramBlock cov_inducing(const std::vector<InducingTensor>& Z, const SigKernelParams& p,
                       int state_dim) {
  auto cfg = make_engine_config(p, state_dim);
  auto t = make_engine_tensors(Z);
  if (t.dim != cfg.aug_dim)
    throw std::invalid_argument("cov_inducing: tensor dimension does not match augmented space");
  return to_block(engine::assemble_inducing(t, cfg), make_ids("z", t.n), make_ids("z", t.n),
                  p.hash(state_dim));
}

GramBlock cov_cross(const std::vector<InducingTensor>& Z, const std::vector<Sequence>& X,
                    const SigKernelParams& p) {
  if (X.empty()) throw std::invalid_argument("cov_cross: empty sequence set");
  const int d = X.front().dim;
  auto cfg = make_engine_config(p, d);
  auto t = make_engine_tensors(Z);
  if (t.dim != cfg.aug_dim)
    throw std::invalid_argument("cov_cross: tensor dimension does not match augmented space");
  auto b = make_engine_batch(prepare_batch(X, p));
  bool degenerate = false;
  auto K = engine::assemble_cross(t, b, cfg, &degenerate);
  warn_degenerate(degenerate);
  return to_block(K, make_ids("z", t.n), make_ids("x", b.n), p.hash(d));
}

GramBlock cov_sequences(const std::vector<Sequence>& X, const std::vector<Sequence>& Y,
                        const SigKernelParams& p) {
  if (X.empty() || Y.empty()) throw std::invalid_argument("cov_sequences: empty sequence set");
  const int d = X.front().dim;
  if (Y.front().dim != d) throw std::invalid_argument("cov_sequences: dimension mismatch");
  auto cfg = make_engine_config(p, d);
  auto bx = make_engine_batch(prepare_batch(X, p));
  auto by = make_engine_batch(prepare_batch(Y, p));
  bool degenerate = false;
  auto K = engine::assemble_pair(bx, by, cfg, &degenerate);
  warn_degenerate(degenerate);
  return to_block(K, make_ids("x", bx.n), make_ids("y", by.n), p.hash(d));
}

std::vector<GramBlock> cov_sequences_by_level(const std::vector<Sequence>& X,
                                              const std::vector<Sequence>& Y,
                                              const SigKernelParams& p) {
  if (X.empty() || Y.empty()) throw std::invalid_argument("cov_sequences: empty sequence set");
  const int d = X.front().dim;
  auto cfg = make_engine_config(p, d);
  auto bx = make_engine_batch(prepare_batch(X, p));
  auto by = make_engine_batch(prepare_batch(Y, p));
  bool degenerate = false;
  std::vector<NdArray<double>> levels;
  engine::assemble_pair(bx, by, cfg, &degenerate, &levels);
  warn_degenerate(degenerate);
  std::vector<GramBlock> out;
  out.reserve(levels.size());
  for (auto& L : levels)
    out.push_back(to_block(L, make_ids("x", bx.n), make_ids("y", by.n), p.hash(d)));
  return out;
}

std::vector<double> var_sequences(const std::vector<Sequence>& X, const SigKernelParams& p) {
  if (X.empty()) throw std::invalid_argument("var_sequences: empty sequence set");
  const int d = X.front().dim;
  auto cfg = make_engine_config(p, d);
  auto b = make_engine_batch(prepare_batch(X, p));
  bool degenerate = false;
  auto v = engine::assemble_diag(b, cfg, &degenerate);
  warn_degenerate(degenerate);
  for (double x : v)
    if (!std::isfinite(x)) throw std::runtime_error("var_sequences: non-finite value");
  return v;
}

}  // namespace seqgp
