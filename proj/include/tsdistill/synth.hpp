#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tsdistill/rng.hpp"

namespace tsdistill::synth {

// All distributional choices of the generator live here so ablations are a
// one-struct edit. Values are the project defaults, not tuned per dataset.
struct SynthConfig {
  int max_nodes = 12;
  double extra_parent_prob = 0.4;  // chance of >1 parent per child
  int max_parents = 3;
  double observe_prob = 0.5;

  // kernel composition
  int max_tree_depth = 3;
  int max_leaves = 4;
  double combine_prob = 0.45;  // chance an interior node splits further

  // kernel hyperparameter ranges (log-uniform unless noted)
  double lengthscale_min = 0.02, lengthscale_max = 1.0;
  double period_min = 0.05, period_max = 1.0;
  double variance_min = 0.1, variance_max = 2.0;
  double rq_alpha_min = 0.5, rq_alpha_max = 5.0;

  // mean function: polynomial degree <= 3, optional extra trend
  int mean_max_degree = 3;
  double trend_prob = 0.3;
  double trend_sigma = 2.0;

  double base_jitter = 1e-6;
  double max_jitter = 1e-3;
  double reject_abs_limit = 50.0;  // after standardization
  int max_attempts = 100;
};

enum class KernelType { RBF, Periodic, Linear, RationalQuadratic, WhiteNoise };
enum class Nonlinearity { Identity, Tanh, Sin, Softplus, Swish };

// Composition tree over base kernels; interior nodes combine two children
// by + or *. Depth <= 3, <= 4 leaves.
struct KernelSpec {
  enum class Combine { Leaf, Sum, Product };
  Combine combine = Combine::Leaf;
  KernelType type = KernelType::RBF;
  double lengthscale = 0.5;
  double period = 0.3;
  double variance = 1.0;
  double alpha = 1.0;   // rational quadratic
  double center = 0.5;  // linear kernel offset
  std::unique_ptr<KernelSpec> left, right;

  double eval(double t, double s) const;
  int leaves() const;
  int depth() const;
  KernelSpec clone() const;
};

struct MeanSpec {
  std::vector<double> poly_coeffs;  // a0 + a1 t + ...
  double trend = 0.0;
  double eval(double t) const;
};

struct DagNode {
  std::vector<int> parents;
  std::vector<float> weights;  // aligned with parents
  float bias = 0.0f;
  Nonlinearity nonlinearity = Nonlinearity::Identity;
  // root-only
  std::optional<KernelSpec> kernel;
  std::optional<MeanSpec> mean;
  bool is_root() const { return parents.empty(); }
};

struct DagSpec {
  std::vector<DagNode> nodes;  // index order is a topological order
  std::vector<int> observed;   // non-empty subset of node indices
  int node_count() const { return static_cast<int>(nodes.size()); }
};

struct Corpus {
  int64_t n_samples = 0;
  int64_t length = 0;
  std::vector<float> data;  // sample-major
  const float* sample(int64_t i) const { return data.data() + i * length; }
};

KernelSpec sample_kernel(Rng& rng, const SynthConfig& cfg = {});
MeanSpec sample_mean(Rng& rng, const SynthConfig& cfg = {});
DagSpec sample_dag(Rng& rng, int max_nodes, const SynthConfig& cfg = {});

// Covariance over the grid t_i = i/(T-1) in [0,1]; symmetric by construction.
std::vector<double> build_covariance(const KernelSpec& kernel, int64_t T);

// mu + L z with escalating jitter; nullopt if Cholesky keeps failing.
std::optional<std::vector<float>> sample_gp(Rng& rng, const KernelSpec& kernel,
                                            const MeanSpec& mean, int64_t T,
                                            const SynthConfig& cfg = {});

// Topological-order evaluation of x_v(t) = f_v(sum_u w_uv x_u(t) + b_v).
// root_samples holds one series per root, in node-index order of the roots.
// Returns all node series (node-major) or nullopt on non-finite values.
std::optional<std::vector<std::vector<float>>> propagate(
    const DagSpec& dag, const std::vector<std::vector<float>>& root_samples);

float apply_nonlinearity(Nonlinearity f, float x);

Corpus generate_corpus(uint64_t seed, int64_t n_samples, int64_t T,
                       const SynthConfig& cfg = {});

// "UTSD" corpus file: magic, u32 version=1, u32 n_samples, u32 length,
// then n*T little-endian f32, sample-major.
void save_utsd(const Corpus& corpus, const std::string& path);
Corpus load_utsd(const std::string& path);

}  // namespace tsdistill::synth
