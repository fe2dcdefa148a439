#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "tsdistill/rng.hpp"
#include "tsdistill/synth.hpp"

using namespace tsdistill;
using namespace tsdistill::synth;

TEST_CASE("sample_dag smallest graph: one root, one child") {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    DagSpec dag = sample_dag(rng, 2);
    REQUIRE(dag.node_count() == 2);
    CHECK(dag.nodes[0].is_root());
    REQUIRE(dag.nodes[1].parents.size() == 1);
    CHECK(dag.nodes[1].parents[0] == 0);
    CHECK(!dag.observed.empty());
  }
}

TEST_CASE("sample_dag parents always precede children") {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    DagSpec dag = sample_dag(rng, 12);
    for (int v = 0; v < dag.node_count(); ++v) {
      const DagNode& node = dag.nodes[static_cast<size_t>(v)];
      if (v == 0) CHECK(node.is_root());
      for (int p : node.parents) CHECK(p < v);
      if (!node.is_root()) CHECK(node.parents.size() >= 1);
    }
    for (int v : dag.observed) {
      CHECK(v >= 0);
      CHECK(v < dag.node_count());
    }
  }
}

TEST_CASE("sample_dag edge weights are standard normal (CLT check)") {
  Rng rng(3);
  double sum = 0.0, sq = 0.0;
  int64_t count = 0;
  for (int i = 0; i < 1000; ++i) {
    DagSpec dag = sample_dag(rng, 12);
    for (const DagNode& node : dag.nodes)
      for (float w : node.weights) {
        sum += w;
        sq += static_cast<double>(w) * w;
        ++count;
      }
  }
  const double mean = sum / static_cast<double>(count);
  CHECK(std::fabs(mean) < 3.0 / std::sqrt(static_cast<double>(count)));
  CHECK(std::fabs(sq / static_cast<double>(count) - 1.0) < 0.1);
}

TEST_CASE("kernel trees respect depth and leaf limits and PSD-ish symmetry") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    KernelSpec k = sample_kernel(rng);
    CHECK(k.depth() <= 3);
    CHECK(k.leaves() <= 4);
    auto K = build_covariance(k, 32);
    for (int64_t a = 0; a < 32; ++a)
      for (int64_t b = 0; b < 32; ++b)
        CHECK(std::fabs(K[static_cast<size_t>(a * 32 + b)] -
                        K[static_cast<size_t>(b * 32 + a)]) < 1e-9);
  }
}

TEST_CASE("sample_gp white-noise kernel has no autocorrelation") {
  KernelSpec k;
  k.type = KernelType::WhiteNoise;
  k.variance = 1.0;
  MeanSpec mu;
  mu.poly_coeffs = {0.0};
  Rng rng(5);
  const int64_t T = 256;
  double acf_sum = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    auto x = sample_gp(rng, k, mu, T);
    REQUIRE(x.has_value());
    double mean = 0.0;
    for (float v : *x) mean += v;
    mean /= static_cast<double>(T);
    double num = 0.0, den = 0.0;
    for (int64_t t = 0; t + 1 < T; ++t)
      num += ((*x)[static_cast<size_t>(t)] - mean) *
             ((*x)[static_cast<size_t>(t + 1)] - mean);
    for (int64_t t = 0; t < T; ++t) {
      const double d = (*x)[static_cast<size_t>(t)] - mean;
      den += d * d;
    }
    acf_sum += num / den;
  }
  CHECK(std::fabs(acf_sum / 100.0) < 4.0 / std::sqrt(static_cast<double>(T)));
}

TEST_CASE("sample_gp zero-variance kernel returns the mean exactly") {
  KernelSpec k;
  k.type = KernelType::WhiteNoise;
  k.variance = 0.0;
  MeanSpec mu;
  mu.poly_coeffs = {0.0, 1.0};  // mu(t) = t
  Rng rng(6);
  const int64_t T = 64;
  auto x = sample_gp(rng, k, mu, T);
  REQUIRE(x.has_value());
  for (int64_t t = 0; t < T; ++t)
    CHECK((*x)[static_cast<size_t>(t)] ==
          doctest::Approx(static_cast<double>(t) / (T - 1)).epsilon(1e-7));
}

TEST_CASE("sample_gp long-lengthscale RBF is smooth (lag-1 autocorr > 0.9)") {
  KernelSpec k;
  k.type = KernelType::RBF;
  k.variance = 1.0;
  k.lengthscale = 1.0;
  MeanSpec mu;
  mu.poly_coeffs = {0.0};
  Rng rng(7);
  const int64_t T = 256;
  double acf_sum = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    auto x = sample_gp(rng, k, mu, T);
    REQUIRE(x.has_value());
    double mean = 0.0;
    for (float v : *x) mean += v;
    mean /= static_cast<double>(T);
    double num = 0.0, den = 0.0;
    for (int64_t t = 0; t + 1 < T; ++t)
      num += ((*x)[static_cast<size_t>(t)] - mean) *
             ((*x)[static_cast<size_t>(t + 1)] - mean);
    for (int64_t t = 0; t < T; ++t) {
      const double d = (*x)[static_cast<size_t>(t)] - mean;
      den += d * d;
    }
    acf_sum += num / den;
  }
  CHECK(acf_sum / 100.0 > 0.9);
}

TEST_CASE("propagate pass-through and bias-only cases") {
  DagSpec dag;
  dag.nodes.resize(2);
  dag.nodes[0].kernel = KernelSpec{};
  dag.nodes[0].mean = MeanSpec{};
  dag.nodes[1].parents = {0};
  dag.nodes[1].weights = {1.0f};
  dag.nodes[1].bias = 0.0f;
  dag.nodes[1].nonlinearity = Nonlinearity::Identity;
  dag.observed = {1};

  std::vector<float> root = {0.5f, -1.0f, 2.0f};
  auto series = propagate(dag, {root});
  REQUIRE(series.has_value());
  for (size_t t = 0; t < root.size(); ++t) CHECK((*series)[1][t] == root[t]);

  dag.nodes[1].weights = {0.0f};
  dag.nodes[1].bias = 0.7f;
  dag.nodes[1].nonlinearity = Nonlinearity::Tanh;
  auto series2 = propagate(dag, {root});
  REQUIRE(series2.has_value());
  for (size_t t = 0; t < root.size(); ++t)
    CHECK((*series2)[1][t] == doctest::Approx(std::tanh(0.7)).epsilon(1e-6));
}

// brute-force oracle: evaluate each node recursively with no sharing
static float eval_node_recursive(const DagSpec& dag,
                                 const std::vector<std::vector<float>>& roots,
                                 int v, size_t t) {
  const DagNode& node = dag.nodes[static_cast<size_t>(v)];
  if (node.is_root()) {
    int root_idx = 0;
    for (int u = 0; u < v; ++u)
      if (dag.nodes[static_cast<size_t>(u)].is_root()) ++root_idx;
    return roots[static_cast<size_t>(root_idx)][t];
  }
  double acc = node.bias;
  for (size_t p = 0; p < node.parents.size(); ++p)
    acc += static_cast<double>(node.weights[p]) *
           eval_node_recursive(dag, roots, node.parents[p], t);
  return apply_nonlinearity(node.nonlinearity, static_cast<float>(acc));
}

TEST_CASE("propagate matches independent recursive evaluation") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    DagSpec dag = sample_dag(rng, 5);
    std::vector<std::vector<float>> roots;
    for (const DagNode& node : dag.nodes) {
      if (!node.is_root()) continue;
      std::vector<float> r(16);
      for (float& v : r) v = static_cast<float>(rng.normal());
      roots.push_back(std::move(r));
    }
    auto series = propagate(dag, roots);
    REQUIRE(series.has_value());
    for (int v = 0; v < dag.node_count(); ++v)
      for (size_t t = 0; t < 16; ++t)
        CHECK((*series)[static_cast<size_t>(v)][t] ==
              doctest::Approx(eval_node_recursive(dag, roots, v, t)).epsilon(1e-5));
  }
}

TEST_CASE("generate_corpus basic contract") {
  Corpus c = generate_corpus(99, 1, 64);
  CHECK(c.n_samples == 1);
  CHECK(c.length == 64);
  for (float v : c.data) CHECK(std::isfinite(v));
}

TEST_CASE("generate_corpus deterministic, standardized, bounded") {
  Corpus a = generate_corpus(1234, 200, 64);
  Corpus b = generate_corpus(1234, 200, 64);
  REQUIRE(a.data.size() == b.data.size());
  for (size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);

  for (int64_t s = 0; s < a.n_samples; ++s) {
    double mean = 0.0;
    const float* x = a.sample(s);
    for (int64_t t = 0; t < a.length; ++t) mean += x[t];
    mean /= static_cast<double>(a.length);
    double var = 0.0;
    for (int64_t t = 0; t < a.length; ++t) {
      const double d = x[t] - mean;
      var += d * d;
    }
    var /= static_cast<double>(a.length);
    CHECK(std::fabs(mean) < 1e-5);
    CHECK(std::fabs(std::sqrt(var) - 1.0) < 1e-4);
    for (int64_t t = 0; t < a.length; ++t) CHECK(std::fabs(x[t]) <= 50.0);
  }
}

TEST_CASE("generate_corpus rejects length not divisible by 32") {
  CHECK_THROWS(generate_corpus(1, 4, 100));
}

TEST_CASE("UTSD round-trip is byte-identical") {
  Corpus c = generate_corpus(77, 10, 64);
  auto dir = std::filesystem::temp_directory_path();
  std::string p1 = (dir / "tsd_test_a.utsd").string();
  std::string p2 = (dir / "tsd_test_b.utsd").string();
  save_utsd(c, p1);
  Corpus loaded = load_utsd(p1);
  CHECK(loaded.n_samples == c.n_samples);
  CHECK(loaded.length == c.length);
  for (size_t i = 0; i < c.data.size(); ++i) CHECK(loaded.data[i] == c.data[i]);
  save_utsd(loaded, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}
