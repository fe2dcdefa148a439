#include "tsdistill/synth.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <stdexcept>

#include "tsdistill/threads.hpp"

namespace tsdistill::synth {

// ---- kernels ----

double KernelSpec::eval(double t, double s) const {
  switch (combine) {
    case Combine::Sum:
      return left->eval(t, s) + right->eval(t, s);
    case Combine::Product:
      return left->eval(t, s) * right->eval(t, s);
    case Combine::Leaf:
      break;
  }
  const double d = t - s;
  switch (type) {
    case KernelType::RBF:
      return variance * std::exp(-0.5 * d * d / (lengthscale * lengthscale));
    case KernelType::Periodic: {
      const double arg = std::sin(M_PI * std::fabs(d) / period);
      return variance * std::exp(-2.0 * arg * arg / (lengthscale * lengthscale));
    }
    case KernelType::Linear:
      return variance * (t - center) * (s - center);
    case KernelType::RationalQuadratic: {
      const double q = d * d / (2.0 * alpha * lengthscale * lengthscale);
      return variance * std::pow(1.0 + q, -alpha);
    }
    case KernelType::WhiteNoise:
      return t == s ? variance : 0.0;
  }
  return 0.0;
}

int KernelSpec::leaves() const {
  if (combine == Combine::Leaf) return 1;
  return left->leaves() + right->leaves();
}

int KernelSpec::depth() const {
  if (combine == Combine::Leaf) return 1;
  return 1 + std::max(left->depth(), right->depth());
}

KernelSpec KernelSpec::clone() const {
  KernelSpec k;
  k.combine = combine;
  k.type = type;
  k.lengthscale = lengthscale;
  k.period = period;
  k.variance = variance;
  k.alpha = alpha;
  k.center = center;
  if (left) k.left = std::make_unique<KernelSpec>(left->clone());
  if (right) k.right = std::make_unique<KernelSpec>(right->clone());
  return k;
}

double MeanSpec::eval(double t) const {
  double acc = 0.0, p = 1.0;
  for (double c : poly_coeffs) {
    acc += c * p;
    p *= t;
  }
  return acc + trend * t;
}

static double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}

static KernelSpec sample_leaf(Rng& rng, const SynthConfig& cfg) {
  KernelSpec k;
  k.combine = KernelSpec::Combine::Leaf;
  switch (rng.uniform_int(5)) {
    case 0: k.type = KernelType::RBF; break;
    case 1: k.type = KernelType::Periodic; break;
    case 2: k.type = KernelType::Linear; break;
    case 3: k.type = KernelType::RationalQuadratic; break;
    default: k.type = KernelType::WhiteNoise; break;
  }
  k.lengthscale = log_uniform(rng, cfg.lengthscale_min, cfg.lengthscale_max);
  k.period = log_uniform(rng, cfg.period_min, cfg.period_max);
  k.variance = log_uniform(rng, cfg.variance_min, cfg.variance_max);
  k.alpha = log_uniform(rng, cfg.rq_alpha_min, cfg.rq_alpha_max);
  k.center = rng.uniform();
  return k;
}

static KernelSpec sample_tree(Rng& rng, const SynthConfig& cfg, int depth,
                              int* leaf_budget) {
  if (depth >= cfg.max_tree_depth || *leaf_budget <= 1 ||
      !rng.bernoulli(cfg.combine_prob)) {
    *leaf_budget -= 1;
    return sample_leaf(rng, cfg);
  }
  KernelSpec k;
  k.combine = rng.bernoulli(0.5) ? KernelSpec::Combine::Sum
                                 : KernelSpec::Combine::Product;
  k.left = std::make_unique<KernelSpec>(sample_tree(rng, cfg, depth + 1, leaf_budget));
  k.right = std::make_unique<KernelSpec>(sample_tree(rng, cfg, depth + 1, leaf_budget));
  return k;
}

KernelSpec sample_kernel(Rng& rng, const SynthConfig& cfg) {
  int budget = cfg.max_leaves;
  return sample_tree(rng, cfg, 1, &budget);
}

MeanSpec sample_mean(Rng& rng, const SynthConfig& cfg) {
  MeanSpec m;
  const int degree = static_cast<int>(rng.uniform_int(cfg.mean_max_degree + 1));
  m.poly_coeffs.resize(static_cast<size_t>(degree) + 1);
  for (double& c : m.poly_coeffs) c = rng.normal();
  if (rng.bernoulli(cfg.trend_prob)) m.trend = rng.normal() * cfg.trend_sigma;
  return m;
}

// ---- DAG ----

DagSpec sample_dag(Rng& rng, int max_nodes, const SynthConfig& cfg) {
  if (max_nodes < 2) throw std::invalid_argument("sample_dag: max_nodes must be >= 2");
  const int n = 2 + static_cast<int>(rng.uniform_int(max_nodes - 1));
  DagSpec dag;
  dag.nodes.resize(static_cast<size_t>(n));
  for (int v = 0; v < n; ++v) {
    DagNode& node = dag.nodes[static_cast<size_t>(v)];
    if (v == 0) {
      node.kernel = sample_kernel(rng, cfg);
      node.mean = sample_mean(rng, cfg);
      continue;
    }
    // parents only from earlier nodes: acyclic by construction
    int n_parents = 1;
    while (n_parents < std::min(v, cfg.max_parents) &&
           rng.bernoulli(cfg.extra_parent_prob))
      ++n_parents;
    auto picks = rng.sample_without_replacement(v, n_parents);
    for (int64_t p : picks) {
      node.parents.push_back(static_cast<int>(p));
      node.weights.push_back(static_cast<float>(rng.normal()));
    }
    node.bias = static_cast<float>(rng.normal());
    switch (rng.uniform_int(5)) {
      case 0: node.nonlinearity = Nonlinearity::Identity; break;
      case 1: node.nonlinearity = Nonlinearity::Tanh; break;
      case 2: node.nonlinearity = Nonlinearity::Sin; break;
      case 3: node.nonlinearity = Nonlinearity::Softplus; break;
      default: node.nonlinearity = Nonlinearity::Swish; break;
    }
  }
  for (int v = 0; v < n; ++v)
    if (rng.bernoulli(cfg.observe_prob)) dag.observed.push_back(v);
  if (dag.observed.empty())
    dag.observed.push_back(static_cast<int>(rng.uniform_int(n)));
  return dag;
}

// ---- GP sampling ----

std::vector<double> build_covariance(const KernelSpec& kernel, int64_t T) {
  std::vector<double> K(static_cast<size_t>(T * T));
  const double denom = T > 1 ? static_cast<double>(T - 1) : 1.0;
  for (int64_t i = 0; i < T; ++i) {
    const double ti = static_cast<double>(i) / denom;
    for (int64_t j = i; j < T; ++j) {
      const double tj = static_cast<double>(j) / denom;
      const double v = kernel.eval(ti, tj);
      K[static_cast<size_t>(i * T + j)] = v;
      K[static_cast<size_t>(j * T + i)] = v;  // mirrored: symmetric exactly
    }
  }
  return K;
}

std::optional<std::vector<float>> sample_gp(Rng& rng, const KernelSpec& kernel,
                                            const MeanSpec& mean, int64_t T,
                                            const SynthConfig& cfg) {
  if (T < 2) throw std::invalid_argument("sample_gp: T must be >= 2");
  std::vector<double> K = build_covariance(kernel, T);
  const double denom = static_cast<double>(T - 1);

  double max_abs = 0.0;
  for (double v : K) max_abs = std::max(max_abs, std::fabs(v));
  std::vector<float> out(static_cast<size_t>(T));
  if (max_abs == 0.0) {
    // deterministic GP: zero covariance, return the mean exactly
    for (int64_t i = 0; i < T; ++i)
      out[static_cast<size_t>(i)] = static_cast<float>(mean.eval(i / denom));
    return out;
  }

  Eigen::Map<Eigen::MatrixXd> Kmat(K.data(), T, T);
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = cfg.base_jitter;
  for (;;) {
    Eigen::MatrixXd Kj = Kmat + jitter * Eigen::MatrixXd::Identity(T, T);
    llt.compute(Kj);
    if (llt.info() == Eigen::Success) break;
    jitter *= 10.0;
    if (jitter > cfg.max_jitter) return std::nullopt;  // kernel rejected
  }
  Eigen::VectorXd z(T);
  for (int64_t i = 0; i < T; ++i) z(i) = rng.normal();
  Eigen::VectorXd x = llt.matrixL() * z;
  for (int64_t i = 0; i < T; ++i)
    out[static_cast<size_t>(i)] = static_cast<float>(x(i) + mean.eval(i / denom));
  return out;
}

// ---- propagation ----

float apply_nonlinearity(Nonlinearity f, float x) {
  switch (f) {
    case Nonlinearity::Identity: return x;
    case Nonlinearity::Tanh: return std::tanh(x);
    case Nonlinearity::Sin: return std::sin(x);
    case Nonlinearity::Softplus:
      return x > 30.0f ? x : std::log1p(std::exp(x));
    case Nonlinearity::Swish:
      return x / (1.0f + std::exp(-std::clamp(x, -60.0f, 60.0f)));
  }
  return x;
}

std::optional<std::vector<std::vector<float>>> propagate(
    const DagSpec& dag, const std::vector<std::vector<float>>& root_samples) {
  std::vector<std::vector<float>> series(dag.nodes.size());
  size_t root_idx = 0;
  size_t T = root_samples.empty() ? 0 : root_samples[0].size();
  for (size_t v = 0; v < dag.nodes.size(); ++v) {
    const DagNode& node = dag.nodes[v];
    if (node.is_root()) {
      if (root_idx >= root_samples.size())
        throw std::invalid_argument("propagate: missing root sample");
      series[v] = root_samples[root_idx++];
      continue;
    }
    std::vector<float>& out = series[v];
    out.resize(T);
    for (size_t t = 0; t < T; ++t) {
      double acc = node.bias;
      for (size_t p = 0; p < node.parents.size(); ++p)
        acc += static_cast<double>(node.weights[p]) *
               series[static_cast<size_t>(node.parents[p])][t];
      const float y = apply_nonlinearity(node.nonlinearity, static_cast<float>(acc));
      if (!std::isfinite(y)) return std::nullopt;
      out[t] = y;
    }
  }
  if (root_idx != root_samples.size())
    throw std::invalid_argument("propagate: too many root samples");
  return series;
}

// ---- corpus ----

// One generation task: sample a DAG, draw its GP roots, propagate, then emit
// the standardized series of every observed node. Retries with fresh
// substreams on numerical rejection.
static std::vector<std::vector<float>> run_task(Rng task_rng, int64_t T,
                                                const SynthConfig& cfg) {
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    Rng rng = task_rng.split(static_cast<uint64_t>(attempt));
    DagSpec dag = sample_dag(rng, cfg.max_nodes, cfg);
    std::vector<std::vector<float>> roots;
    bool ok = true;
    for (const DagNode& node : dag.nodes) {
      if (!node.is_root()) continue;
      auto gp = sample_gp(rng, *node.kernel, *node.mean, T, cfg);
      if (!gp) {
        ok = false;
        break;
      }
      roots.push_back(std::move(*gp));
    }
    if (!ok) continue;
    auto all = propagate(dag, roots);
    if (!all) continue;

    std::vector<std::vector<float>> emitted;
    for (int v : dag.observed) {
      const std::vector<float>& s = (*all)[static_cast<size_t>(v)];
      double mean = 0.0;
      for (float x : s) mean += x;
      mean /= static_cast<double>(T);
      double var = 0.0;
      for (float x : s) {
        const double d = x - mean;
        var += d * d;
      }
      var /= static_cast<double>(T);
      const double sd = std::sqrt(var);
      if (sd < 1e-9) {
        ok = false;  // constant series carries no signal
        break;
      }
      std::vector<float> z(static_cast<size_t>(T));
      for (int64_t t = 0; t < T; ++t) {
        const double val = (s[static_cast<size_t>(t)] - mean) / sd;
        if (!std::isfinite(val) || std::fabs(val) > cfg.reject_abs_limit) {
          ok = false;
          break;
        }
        z[static_cast<size_t>(t)] = static_cast<float>(val);
      }
      if (!ok) break;
      emitted.push_back(std::move(z));
    }
    if (ok && !emitted.empty()) return emitted;
  }
  throw std::runtime_error("generate_corpus: too many rejected attempts");
}

Corpus generate_corpus(uint64_t seed, int64_t n_samples, int64_t T,
                       const SynthConfig& cfg) {
  if (n_samples < 1) throw std::invalid_argument("generate_corpus: n_samples >= 1");
  if (T % 32 != 0)
    throw std::invalid_argument("generate_corpus: length must be a multiple of 32");
  Corpus corpus;
  corpus.length = T;
  corpus.data.reserve(static_cast<size_t>(n_samples * T));

  Rng master(seed);
  int64_t collected = 0;
  uint64_t next_task = 0;
  while (collected < n_samples) {
    // tasks emit a variable number of series; launch in deterministic batches
    const int64_t batch = std::max<int64_t>(threads::pool_size(),
                                            (n_samples - collected + 1) / 2);
    std::vector<std::vector<std::vector<float>>> results(static_cast<size_t>(batch));
    threads::parallel_for(batch, [&](int64_t i) {
      results[static_cast<size_t>(i)] =
          run_task(master.split(next_task + static_cast<uint64_t>(i)), T, cfg);
    });
    next_task += static_cast<uint64_t>(batch);
    for (const auto& group : results)
      for (const auto& s : group) {
        if (collected >= n_samples) break;
        corpus.data.insert(corpus.data.end(), s.begin(), s.end());
        ++collected;
      }
  }
  corpus.n_samples = n_samples;
  return corpus;
}

// ---- UTSD io (little-endian hosts) ----

static void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

static uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

void save_utsd(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_utsd: cannot open " + path);
  out.write("UTSD", 4);
  write_u32(out, 1);
  write_u32(out, static_cast<uint32_t>(corpus.n_samples));
  write_u32(out, static_cast<uint32_t>(corpus.length));
  out.write(reinterpret_cast<const char*>(corpus.data.data()),
            static_cast<std::streamsize>(corpus.data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("save_utsd: write failed for " + path);
}

Corpus load_utsd(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_utsd: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "UTSD", 4) != 0)
    throw std::runtime_error("load_utsd: bad magic in " + path);
  const uint32_t version = read_u32(in);
  if (version != 1)
    throw std::runtime_error("load_utsd: unsupported version " +
                             std::to_string(version));
  Corpus corpus;
  corpus.n_samples = read_u32(in);
  corpus.length = read_u32(in);
  corpus.data.resize(static_cast<size_t>(corpus.n_samples * corpus.length));
  in.read(reinterpret_cast<char*>(corpus.data.data()),
          static_cast<std::streamsize>(corpus.data.size() * sizeof(float)));
  if (!in) throw std::runtime_error("load_utsd: truncated file " + path);
  return corpus;
}

}  // namespace tsdistill::synth
