#include "seqgp/static_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace seqgp {

void StaticKernelParams::validate(int dim) const {
  if (kind == KernelKind::linear) return;
  if (static_cast<int>(lengthscales.size()) != dim)
    throw std::invalid_argument("StaticKernelParams: need one lengthscale per state dimension");
  for (double l : lengthscales)
    if (!(l > 0.0) || !std::isfinite(l))
      throw std::invalid_argument("StaticKernelParams: lengthscales must be positive and finite");
}

double kappa(const double* x, const double* y, int dim, const StaticKernelParams& p) {
  if (p.kind == KernelKind::linear) {
    double acc = 0.0;
    for (int j = 0; j < dim; ++j) acc += x[j] * y[j];
    return acc;
  }
  p.validate(dim);
  double q = 0.0;
  for (int j = 0; j < dim; ++j) {
    const double d = (x[j] - y[j]) / p.lengthscales[static_cast<std::size_t>(j)];
    q += d * d;
  }
  return std::exp(-0.5 * q);
}

double kappa_double_diff(const double* x_lo, const double* x_hi, const double* y_lo,
                         const double* y_hi, int dim, const StaticKernelParams& p) {
  return kappa(x_hi, y_hi, dim, p) - kappa(x_lo, y_hi, dim, p) - kappa(x_hi, y_lo, dim, p) +
         kappa(x_lo, y_lo, dim, p);
}

std::vector<double> init_lengthscales(const std::vector<double>& obs, int dim, std::uint64_t seed,
                                      int max_obs, double eps) {
  if (dim < 1 || obs.size() % static_cast<std::size_t>(dim) != 0)
    throw std::invalid_argument("init_lengthscales: observation matrix shape mismatch");
  const int n_all = static_cast<int>(obs.size()) / dim;
  if (n_all < 1) throw std::invalid_argument("init_lengthscales: no observations");

  // Subsample observation rows when there are more than max_obs.
  std::vector<int> rows(static_cast<std::size_t>(n_all));
  std::iota(rows.begin(), rows.end(), 0);
  if (n_all > max_obs) {
    std::mt19937_64 rng(seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(max_obs));
  }
  const int n = static_cast<int>(rows.size());

  // E[(x - x')^2] over independent draws equals the average over all ordered
  // pairs (self-pairs included), which is twice the population variance.
  std::vector<double> ls(static_cast<std::size_t>(dim));
  for (int j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (int r : rows) mean += obs[static_cast<std::size_t>(r) * dim + j];
    mean /= n;
    double var = 0.0;
    for (int r : rows) {
      const double d = obs[static_cast<std::size_t>(r) * dim + j] - mean;
      var += d * d;
    }
    var /= n;
    double l = std::sqrt(2.0 * var * dim);
    if (!(l > eps)) {
      std::cerr << "init_lengthscales: dimension " << j
                << " has (near-)zero spread; flooring lengthscale at " << eps << "\n";
      l = eps;
    }
    ls[static_cast<std::size_t>(j)] = l;
  }
  return ls;
}

}  // namespace seqgp
