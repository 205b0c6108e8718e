#include "seqgp/sig_oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace seqgp {

namespace {

constexpr int kMaxDepth = 5;
constexpr int kMaxDenseDim = 5;
constexpr int kMaxLen = 12;

void check_scale(int depth, int len) {
  if (depth > kMaxDepth || len > kMaxLen)
    throw std::domain_error("oracle scale exceeded: depth <= 5 and length <= 12 required");
}

// Invoke f on every strictly increasing m-tuple over {0..n-1}.
template <class F>
void for_each_increasing(int n, int m, F&& f) {
  if (m > n) return;
  std::vector<int> idx(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) idx[static_cast<std::size_t>(k)] = k;
  while (true) {
    f(idx);
    int k = m - 1;
    while (k >= 0 && idx[static_cast<std::size_t>(k)] == n - m + k) --k;
    if (k < 0) return;
    ++idx[static_cast<std::size_t>(k)];
    for (int j = k + 1; j < m; ++j)
      idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
}

// Static kernel on augmented states, written out directly: the time
// coordinate has unit inverse squared lengthscale, every other coordinate
// uses the lengthscale of the raw dimension it copies.
double oracle_kappa(const double* x, const double* y, int aug_dim, int state_dim,
                    const SigKernelParams& p) {
  if (p.static_kernel.kind == KernelKind::linear) {
    double acc = 0.0;
    for (int j = 0; j < aug_dim; ++j) acc += x[j] * y[j];
    return acc;
  }
  double q = 0.0;
  for (int j = 0; j < aug_dim; ++j) {
    const int src = source_dim(j, state_dim);
    const double l = src < 0 ? 1.0 : p.static_kernel.lengthscales[static_cast<std::size_t>(src)];
    const double d = (x[j] - y[j]) / l;
    q += d * d;
  }
  return std::exp(-0.5 * q);
}

// Increment inner products under the lift: E[i][j] = <d phi_i(x), d phi_j(y)>.
std::vector<std::vector<double>> increment_gram(const AugmentedSequence& x,
                                                const AugmentedSequence& y, int state_dim,
                                                const SigKernelParams& p) {
  const int nx = x.length() - 1, ny = y.length() - 1;
  std::vector<std::vector<double>> E(static_cast<std::size_t>(std::max(nx, 0)),
                                     std::vector<double>(static_cast<std::size_t>(std::max(ny, 0))));
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      E[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          oracle_kappa(x.state(i + 1), y.state(j + 1), x.aug_dim, state_dim, p) -
          oracle_kappa(x.state(i), y.state(j + 1), x.aug_dim, state_dim, p) -
          oracle_kappa(x.state(i + 1), y.state(j), x.aug_dim, state_dim, p) +
          oracle_kappa(x.state(i), y.state(j), x.aug_dim, state_dim, p);
  return E;
}

std::vector<double> levels_from_gram(const std::vector<std::vector<double>>& E, int nx, int ny,
                                     int depth) {
  std::vector<double> levels(static_cast<std::size_t>(depth), 0.0);
  for (int m = 1; m <= depth; ++m) {
    double acc = 0.0;
    for_each_increasing(nx, m, [&](const std::vector<int>& I) {
      for_each_increasing(ny, m, [&](const std::vector<int>& J) {
        double prod = 1.0;
        for (int k = 0; k < m; ++k)
          prod *= E[static_cast<std::size_t>(I[static_cast<std::size_t>(k)])]
                   [static_cast<std::size_t>(J[static_cast<std::size_t>(k)])];
        acc += prod;
      });
    });
    levels[static_cast<std::size_t>(m - 1)] = acc;
  }
  return levels;
}

std::vector<double> normalizers(const Sequence& x, const SigKernelParams& p) {
  const auto self = oracle_levels_pair(x, x, p);
  std::vector<double> inv(self.size(), 1.0);
  for (std::size_t m = 0; m < self.size(); ++m)
    if (self[m] > 0.0) inv[m] = 1.0 / std::sqrt(self[m]);
  return inv;
}

}  // namespace

DenseSignature brute_signature(const AugmentedSequence& a, int depth) {
  check_scale(depth, a.length());
  if (a.aug_dim > kMaxDenseDim)
    throw std::domain_error("oracle scale exceeded: dense signatures need dim <= 5");
  const int n = a.length() - 1;
  const int d = a.aug_dim;
  const std::vector<double> inc = increments(a);

  DenseSignature sig;
  sig.dim = d;
  sig.depth = depth;
  sig.level0 = 1.0;
  for (int m = 1; m <= depth; ++m) {
    std::size_t sz = 1;
    for (int k = 0; k < m; ++k) sz *= static_cast<std::size_t>(d);
    std::vector<double> level(sz, 0.0);
    for_each_increasing(n, m, [&](const std::vector<int>& I) {
      // Accumulate the outer product of the chosen increments.
      for (std::size_t c = 0; c < sz; ++c) {
        std::size_t rem = c;
        double prod = 1.0;
        for (int k = m - 1; k >= 0; --k) {
          const int coord = static_cast<int>(rem % static_cast<std::size_t>(d));
          rem /= static_cast<std::size_t>(d);
          prod *= inc[static_cast<std::size_t>(I[static_cast<std::size_t>(k)]) * d + coord];
        }
        level[c] += prod;
      }
    });
    sig.levels.push_back(std::move(level));
  }
  return sig;
}

DenseSignature materialize_tensor(const InducingTensor& z) {
  const int d = z.aug_dim();
  const int depth = z.depth();
  check_scale(depth, 0);
  if (d > kMaxDenseDim)
    throw std::domain_error("oracle scale exceeded: dense signatures need dim <= 5");
  DenseSignature sig;
  sig.dim = d;
  sig.depth = depth;
  sig.level0 = z.z0;
  for (int m = 1; m <= depth; ++m) {
    std::size_t sz = 1;
    for (int k = 0; k < m; ++k) sz *= static_cast<std::size_t>(d);
    std::vector<double> level(sz);
    for (std::size_t c = 0; c < sz; ++c) {
      std::size_t rem = c;
      double prod = 1.0;
      for (int k = m - 1; k >= 0; --k) {
        const int coord = static_cast<int>(rem % static_cast<std::size_t>(d));
        rem /= static_cast<std::size_t>(d);
        prod *= z.factor(m, k)[coord];
      }
      level[c] = prod;
    }
    sig.levels.push_back(std::move(level));
  }
  return sig;
}

double brute_cov(const DenseSignature& a, const DenseSignature& b,
                 const std::vector<double>& sigma_sq) {
  if (a.dim != b.dim || a.depth != b.depth)
    throw std::invalid_argument("brute_cov: signature shape mismatch");
  if (sigma_sq.size() != static_cast<std::size_t>(a.depth) + 1)
    throw std::invalid_argument("brute_cov: need depth+1 level scalings");
  double acc = sigma_sq[0] * a.level0 * b.level0;
  for (int m = 1; m <= a.depth; ++m) {
    const auto& la = a.levels[static_cast<std::size_t>(m - 1)];
    const auto& lb = b.levels[static_cast<std::size_t>(m - 1)];
    double dot = 0.0;
    for (std::size_t c = 0; c < la.size(); ++c) dot += la[c] * lb[c];
    acc += sigma_sq[static_cast<std::size_t>(m)] * dot;
  }
  return acc;
}

std::vector<double> oracle_levels_pair(const Sequence& x, const Sequence& y,
                                       const SigKernelParams& p) {
  check_scale(p.depth, std::max(x.length(), y.length()));
  const AugmentedSequence ax = augment(x, p.tau, p.lags);
  const AugmentedSequence ay = augment(y, p.tau, p.lags);
  const auto E = increment_gram(ax, ay, x.dim, p);
  return levels_from_gram(E, ax.length() - 1, ay.length() - 1, p.depth);
}

std::vector<double> oracle_levels_cross(const InducingTensor& z, const Sequence& x,
                                        const SigKernelParams& p) {
  check_scale(p.depth, x.length());
  const AugmentedSequence ax = augment(x, p.tau, p.lags);
  const int n = ax.length() - 1;
  std::vector<double> levels(static_cast<std::size_t>(p.depth), 0.0);
  for (int m = 1; m <= p.depth; ++m) {
    // f[k][i] = <v_{m,k}, d phi_i(x)>
    std::vector<std::vector<double>> f(static_cast<std::size_t>(m),
                                       std::vector<double>(static_cast<std::size_t>(std::max(n, 0))));
    for (int k = 0; k < m; ++k)
      for (int i = 0; i < n; ++i) {
        const double* a = z.factor(m, k);
        if (p.static_kernel.kind == KernelKind::linear) {
          double acc = 0.0;
          for (int j = 0; j < ax.aug_dim; ++j)
            acc += a[j] * (ax.state(i + 1)[j] - ax.state(i)[j]);
          f[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] = acc;
        } else {
          f[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] =
              oracle_kappa(a, ax.state(i + 1), ax.aug_dim, x.dim, p) -
              oracle_kappa(a, ax.state(i), ax.aug_dim, x.dim, p);
        }
      }
    double acc = 0.0;
    for_each_increasing(n, m, [&](const std::vector<int>& I) {
      double prod = 1.0;
      for (int k = 0; k < m; ++k)
        prod *= f[static_cast<std::size_t>(k)][static_cast<std::size_t>(I[static_cast<std::size_t>(k)])];
      acc += prod;
    });
    levels[static_cast<std::size_t>(m - 1)] = acc;
  }
  return levels;
}

std::vector<double> oracle_levels_inducing(const InducingTensor& a, const InducingTensor& b,
                                           const SigKernelParams& p, int state_dim) {
  check_scale(p.depth, 0);
  std::vector<double> levels(static_cast<std::size_t>(p.depth), 0.0);
  const int d = a.aug_dim();
  for (int m = 1; m <= p.depth; ++m) {
    double prod = 1.0;
    for (int k = 0; k < m; ++k) {
      const double* va = a.factor(m, k);
      const double* vb = b.factor(m, k);
      if (p.static_kernel.kind == KernelKind::linear) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += va[j] * vb[j];
        prod *= acc;
      } else {
        prod *= oracle_kappa(va, vb, d, state_dim, p);
      }
    }
    levels[static_cast<std::size_t>(m - 1)] = prod;
  }
  return levels;
}

double oracle_cov_sequences(const Sequence& x, const Sequence& y, const SigKernelParams& p) {
  const auto sig_sq = p.sigma_sq();
  const auto lev = oracle_levels_pair(x, y, p);
  double acc = sig_sq[0];
  if (p.normalize_levels) {
    const auto ix = normalizers(x, p);
    const auto iy = normalizers(y, p);
    for (int m = 1; m <= p.depth; ++m)
      acc += sig_sq[static_cast<std::size_t>(m)] * lev[static_cast<std::size_t>(m - 1)] *
             ix[static_cast<std::size_t>(m - 1)] * iy[static_cast<std::size_t>(m - 1)];
  } else {
    for (int m = 1; m <= p.depth; ++m)
      acc += sig_sq[static_cast<std::size_t>(m)] * lev[static_cast<std::size_t>(m - 1)];
  }
  return acc;
}

double oracle_cov_cross(const InducingTensor& z, const Sequence& x, const SigKernelParams& p) {
  const auto sig_sq = p.sigma_sq();
  const auto lev = oracle_levels_cross(z, x, p);
  double acc = sig_sq[0] * z.z0;
  if (p.normalize_levels) {
    const auto ix = normalizers(x, p);
    for (int m = 1; m <= p.depth; ++m)
      acc += sig_sq[static_cast<std::size_t>(m)] * lev[static_cast<std::size_t>(m - 1)] *
             ix[static_cast<std::size_t>(m - 1)];
  } else {
    for (int m = 1; m <= p.depth; ++m)
      acc += sig_sq[static_cast<std::size_t>(m)] * lev[static_cast<std::size_t>(m - 1)];
  }
  return acc;
}

double oracle_cov_inducing(const InducingTensor& a, const InducingTensor& b,
                           const SigKernelParams& p, int state_dim) {
  const auto sig_sq = p.sigma_sq();
  const auto lev = oracle_levels_inducing(a, b, p, state_dim);
  double acc = sig_sq[0] * a.z0 * b.z0;
  for (int m = 1; m <= p.depth; ++m)
    acc += sig_sq[static_cast<std::size_t>(m)] * lev[static_cast<std::size_t>(m - 1)];
  return acc;
}

double oracle_var(const Sequence& x, const SigKernelParams& p) {
  return oracle_cov_sequences(x, x, p);
}

}  // namespace seqgp
