#include "seqgp/svgp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace seqgp {

VariationalState VariationalState::init_identity(int n_z, int n_classes) {
  VariationalState s;
  s.n_z = n_z;
  s.n_classes = n_classes;
  s.mu.assign(static_cast<std::size_t>(n_classes) * n_z, 0.0);
  s.L.assign(static_cast<std::size_t>(n_classes) * n_z * n_z, 0.0);
  for (int c = 0; c < n_classes; ++c)
    for (int i = 0; i < n_z; ++i) s.L_c(c)[static_cast<std::size_t>(i) * n_z + i] = 1.0;
  return s;
}

void VariationalState::validate() const {
  if (n_z < 1 || n_classes < 2) throw std::invalid_argument("VariationalState: bad shape");
  if (mu.size() != static_cast<std::size_t>(n_classes) * n_z ||
      L.size() != static_cast<std::size_t>(n_classes) * n_z * n_z)
    throw std::invalid_argument("VariationalState: storage shape mismatch");
  for (double v : mu)
    if (!std::isfinite(v)) throw std::invalid_argument("VariationalState: non-finite mean");
  for (int c = 0; c < n_classes; ++c)
    for (int i = 0; i < n_z; ++i) {
      for (int j = 0; j <= i; ++j) {
        const double v = L_c(c)[static_cast<std::size_t>(i) * n_z + j];
        if (!std::isfinite(v)) throw std::invalid_argument("VariationalState: non-finite factor");
        if (j == i && !(v > 0.0))
          throw std::invalid_argument("VariationalState: factor diagonal must be positive");
      }
      for (int j = i + 1; j < n_z; ++j)
        if (L_c(c)[static_cast<std::size_t>(i) * n_z + j] != 0.0)
          throw std::invalid_argument("VariationalState: factor must be lower triangular");
    }
}

double kl_whitened(const VariationalState& s) {
  s.validate();
  double kl = 0.0;
  for (int c = 0; c < s.n_classes; ++c) {
    const double* mu = s.mu_c(c);
    const double* L = s.L_c(c);
    double acc = -static_cast<double>(s.n_z);
    for (int i = 0; i < s.n_z; ++i) acc += mu[i] * mu[i];
    for (int i = 0; i < s.n_z; ++i) {
      for (int j = 0; j <= i; ++j) {
        const double v = L[static_cast<std::size_t>(i) * s.n_z + j];
        acc += v * v;
      }
      acc -= 2.0 * std::log(L[static_cast<std::size_t>(i) * s.n_z + i]);
    }
    kl += 0.5 * acc;
  }
  return kl;
}

CholeskyFactor cholesky_with_jitter(const GramBlock& K) {
  if (K.rows != K.cols) throw std::invalid_argument("cholesky_with_jitter: square block required");
  const int n = K.rows;
  for (double jitter : {1e-6, 1e-5, 1e-4}) {
    std::vector<double> a = K.data;
    for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i) * n + i] += jitter;
    if (linalg::cholesky_lower(n, a)) {
      CholeskyFactor f;
      f.n = n;
      f.L = std::move(a);
      f.jitter = jitter;
      return f;
    }
  }
  throw std::runtime_error(
      "cholesky_with_jitter: covariance of inducing variables is not positive definite "
      "after jitter escalation to 1e-4");
}

BatchMarginals marginal_q(const CholeskyFactor& Lk, const GramBlock& k_zx,
                          const std::vector<double>& k_xx, const VariationalState& s,
                          double var_floor) {
  if (k_zx.rows != Lk.n || s.n_z != Lk.n)
    throw std::invalid_argument("marginal_q: inducing count mismatch");
  if (k_xx.size() != static_cast<std::size_t>(k_zx.cols))
    throw std::invalid_argument("marginal_q: diagonal size mismatch");
  const int n_z = Lk.n, B = k_zx.cols, C = s.n_classes;

  BatchMarginals out;
  out.n = B;
  out.n_classes = C;
  out.mean.assign(static_cast<std::size_t>(B) * C, 0.0);
  out.var.assign(static_cast<std::size_t>(B) * C, 0.0);

  std::vector<double> a(static_cast<std::size_t>(n_z));
  std::vector<double> lta(static_cast<std::size_t>(n_z));
  for (int j = 0; j < B; ++j) {
    for (int i = 0; i < n_z; ++i) a[static_cast<std::size_t>(i)] = k_zx.at(i, j);
    linalg::solve_lower_inplace(n_z, Lk.L, a.data());
    double a_sq = 0.0;
    for (int i = 0; i < n_z; ++i) a_sq += a[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(i)];
    for (int c = 0; c < C; ++c) {
      const double* mu = s.mu_c(c);
      const double* L = s.L_c(c);
      double mean = 0.0;
      for (int i = 0; i < n_z; ++i) mean += a[static_cast<std::size_t>(i)] * mu[i];
      // L_c^T A: entry i is sum_{r >= i} L[r,i] a[r].
      double lta_sq = 0.0;
      for (int i = 0; i < n_z; ++i) {
        double v = 0.0;
        for (int r = i; r < n_z; ++r) v += L[static_cast<std::size_t>(r) * n_z + i] * a[static_cast<std::size_t>(r)];
        lta[static_cast<std::size_t>(i)] = v;
        lta_sq += v * v;
      }
      const double var = k_xx[static_cast<std::size_t>(j)] - a_sq + lta_sq;
      out.mean[static_cast<std::size_t>(j) * C + c] = mean;
      out.var[static_cast<std::size_t>(j) * C + c] = std::max(var, var_floor);
    }
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<double> mc_normals(std::uint64_t seed, int n_mc, int n_classes) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eps(static_cast<std::size_t>(n_mc) * n_classes);
  for (double& e : eps) e = normal(rng);
  return eps;
}

double expected_log_lik(const double* means, const double* vars, int n_classes, int label,
                        int n_mc, std::uint64_t seed) {
  if (label < 0 || label >= n_classes) throw std::invalid_argument("expected_log_lik: bad label");
  const std::vector<double> eps = mc_normals(seed, n_mc, n_classes);
  std::vector<double> sd(static_cast<std::size_t>(n_classes));
  for (int c = 0; c < n_classes; ++c) sd[static_cast<std::size_t>(c)] = std::sqrt(vars[c]);
  double acc = 0.0;
  std::vector<double> f(static_cast<std::size_t>(n_classes));
  for (int s = 0; s < n_mc; ++s) {
    double fmax = -1e300;
    for (int c = 0; c < n_classes; ++c) {
      f[static_cast<std::size_t>(c)] =
          means[c] + sd[static_cast<std::size_t>(c)] * eps[static_cast<std::size_t>(s) * n_classes + c];
      fmax = std::max(fmax, f[static_cast<std::size_t>(c)]);
    }
    double sum = 0.0;
    for (int c = 0; c < n_classes; ++c) sum += std::exp(f[static_cast<std::size_t>(c)] - fmax);
    acc += f[static_cast<std::size_t>(label)] - fmax - std::log(sum);
  }
  return acc / n_mc;
}

double elbo(const BatchMarginals& m, const std::vector<int>& labels,
            const std::vector<int>& example_ids, const VariationalState& s, double n_total,
            int n_mc, std::uint64_t seed) {
  if (labels.size() != static_cast<std::size_t>(m.n) || example_ids.size() != labels.size())
    throw std::invalid_argument("elbo: batch size mismatch");
  double data = 0.0;
  for (int j = 0; j < m.n; ++j)
    data += expected_log_lik(m.mean.data() + static_cast<std::size_t>(j) * m.n_classes,
                             m.var.data() + static_cast<std::size_t>(j) * m.n_classes,
                             m.n_classes, labels[static_cast<std::size_t>(j)], n_mc,
                             mix_seed(seed, static_cast<std::uint64_t>(
                                                example_ids[static_cast<std::size_t>(j)])));
  return n_total / m.n * data - kl_whitened(s);
}

std::vector<double> predict_probs(const double* means, const double* vars, int n_classes,
                                  int n_mc, std::uint64_t seed) {
  const std::vector<double> eps = mc_normals(seed, n_mc, n_classes);
  std::vector<double> probs(static_cast<std::size_t>(n_classes), 0.0);
  std::vector<double> f(static_cast<std::size_t>(n_classes));
  for (int s = 0; s < n_mc; ++s) {
    double fmax = -1e300;
    for (int c = 0; c < n_classes; ++c) {
      f[static_cast<std::size_t>(c)] =
          means[c] + std::sqrt(vars[c]) * eps[static_cast<std::size_t>(s) * n_classes + c];
      fmax = std::max(fmax, f[static_cast<std::size_t>(c)]);
    }
    double sum = 0.0;
    for (int c = 0; c < n_classes; ++c) {
      f[static_cast<std::size_t>(c)] = std::exp(f[static_cast<std::size_t>(c)] - fmax);
      sum += f[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < n_classes; ++c) probs[static_cast<std::size_t>(c)] += f[static_cast<std::size_t>(c)] / sum;
  }
  double total = 0.0;
  for (double& p : probs) {
    p /= n_mc;
    total += p;
  }
  for (double& p : probs) p /= total;
  return probs;
}

double nlpp(const std::vector<double>& probs, int label) {
  if (label < 0 || label >= static_cast<int>(probs.size()))
    throw std::invalid_argument("nlpp: bad label");
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-300));
}

// ---- checkpoint -------------------------------------------------------------

namespace {
using nlohmann::json;

json sequence_to_json(const Sequence& s) {
  return json{{"times", s.times}, {"values", s.values}, {"dim", s.dim}, {"label", s.label}};
}

Sequence sequence_from_json(const json& j) {
  Sequence s;
  s.times = j.at("times").get<std::vector<double>>();
  s.values = j.at("values").get<std::vector<double>>();
  s.dim = j.at("dim").get<int>();
  s.label = j.at("label").get<int>();
  s.validate();
  return s;
}
}  // namespace

void save_checkpoint(const Model& m, const std::string& path) {
  json j;
  j["version"] = 1;
  j["n_classes"] = m.n_classes;
  j["state_dim"] = m.state_dim;
  j["params"] = {
      {"depth", m.params.depth},
      {"sigma_prime", m.params.sigma_prime},
      {"beta", m.params.beta},
      {"tau", m.params.tau},
      {"lags", m.params.lags},
      {"normalize_levels", m.params.normalize_levels},
      {"kernel", m.params.static_kernel.kind == KernelKind::rbf ? "rbf" : "linear"},
      {"lengthscales", m.params.static_kernel.lengthscales},
  };
  json ind;
  ind["kind"] = m.inducing.kind == InducingSet::Kind::tensors ? "tensors" : "sequences";
  if (m.inducing.kind == InducingSet::Kind::tensors) {
    json arr = json::array();
    for (const auto& z : m.inducing.tensors) arr.push_back(json{{"z0", z.z0}, {"levels", z.levels}});
    ind["tensors"] = arr;
  } else {
    json arr = json::array();
    for (const auto& s : m.inducing.sequences) arr.push_back(sequence_to_json(s));
    ind["sequences"] = arr;
  }
  j["inducing"] = ind;
  j["vstate"] = {{"n_z", m.vstate.n_z},
                 {"n_classes", m.vstate.n_classes},
                 {"mu", m.vstate.mu},
                 {"L", m.vstate.L}};
  j["data_normalized"] = m.data_normalized;
  j["data_mean"] = m.data_mean;
  j["data_std"] = m.data_std;

  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os << j.dump(1) << "\n";
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  json j;
  is >> j;
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("load_checkpoint: unsupported checkpoint version");

  Model m;
  m.n_classes = j.at("n_classes").get<int>();
  m.state_dim = j.at("state_dim").get<int>();
  const json& p = j.at("params");
  m.params.depth = p.at("depth").get<int>();
  m.params.sigma_prime = p.at("sigma_prime").get<std::vector<double>>();
  m.params.beta = p.at("beta").get<double>();
  m.params.tau = p.at("tau").get<double>();
  m.params.lags = p.at("lags").get<std::vector<double>>();
  m.params.normalize_levels = p.at("normalize_levels").get<bool>();
  m.params.static_kernel.kind =
      p.at("kernel").get<std::string>() == "rbf" ? KernelKind::rbf : KernelKind::linear;
  m.params.static_kernel.lengthscales = p.at("lengthscales").get<std::vector<double>>();

  const json& ind = j.at("inducing");
  m.inducing.kind = ind.at("kind").get<std::string>() == "tensors" ? InducingSet::Kind::tensors
                                                                   : InducingSet::Kind::sequences;
  if (m.inducing.kind == InducingSet::Kind::tensors) {
    for (const auto& t : ind.at("tensors")) {
      InducingTensor z;
      z.z0 = t.at("z0").get<double>();
      z.levels = t.at("levels").get<std::vector<std::vector<double>>>();
      m.inducing.tensors.push_back(std::move(z));
    }
  } else {
    for (const auto& s : ind.at("sequences")) m.inducing.sequences.push_back(sequence_from_json(s));
  }

  const json& v = j.at("vstate");
  m.vstate.n_z = v.at("n_z").get<int>();
  m.vstate.n_classes = v.at("n_classes").get<int>();
  m.vstate.mu = v.at("mu").get<std::vector<double>>();
  m.vstate.L = v.at("L").get<std::vector<double>>();
  m.vstate.validate();

  m.data_normalized = j.at("data_normalized").get<bool>();
  m.data_mean = j.at("data_mean").get<std::vector<double>>();
  m.data_std = j.at("data_std").get<std::vector<double>>();
  m.params.validate(m.state_dim);
  return m;
}

}  // namespace seqgp
