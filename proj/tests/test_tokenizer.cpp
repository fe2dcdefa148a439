#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "tsdistill/tokenizer.hpp"

using namespace tsdistill;
using testutil::grad_check_sampled;

static ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.patch_window = 4;
  cfg.scalar_dim = 4;
  return cfg;
}

TEST_CASE("tokenize emits T / window patches of width d") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(1);
  TokenizerParams params = TokenizerParams::init(cfg, rng);
  for (int64_t T : {16, 32, 64}) {
    Tensor x = Tensor::randn({3, T}, rng);
    Tensor tokens = tokenize(x, params, cfg);
    CHECK(tokens.shape() == Shape{3, T / cfg.patch_window, cfg.dim});
  }
  CHECK_THROWS_AS(tokenize(Tensor::zeros({2, 18}), params, cfg), ShapeError);

  // reference configuration: 512 -> 32 patches, local 256 -> 16
  ModelConfig full;
  CHECK(full.patches_for(512) == 32);
  CHECK(full.patches_for(256) == 16);
  CHECK(full.patch_window == 16);
}

TEST_CASE("constant input: patch embeddings equal across patches") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(2);
  TokenizerParams params = TokenizerParams::init(cfg, rng);
  Tensor x = Tensor::full({1, 16}, 3.5f);
  Tensor tokens = tokenize(x, params, cfg);
  const int64_t patches = cfg.patches_for(16);
  // all patches see identical content, so all patch vectors must agree
  for (int64_t p = 1; p < patches; ++p)
    for (int64_t j = 0; j < cfg.dim; ++j)
      CHECK(tokens.data()[p * cfg.dim + j] ==
            doctest::Approx(tokens.data()[j]).epsilon(1e-5));
}

TEST_CASE("shift enters only through the scalar-mean path") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(3);
  TokenizerParams params = TokenizerParams::init(cfg, rng);
  // zero the scalar encoders: x and x+100 must then tokenize identically
  for (Tensor t : {params.scalar_mean_emb, params.scalar_mean_bias,
                   params.scalar_std_emb, params.scalar_std_bias})
    std::fill(t.buf().begin(), t.buf().end(), 0.0f);
  Tensor x = Tensor::randn({2, 32}, rng);
  Tensor shifted = Tensor::zeros({2, 32});
  for (int64_t i = 0; i < x.size(); ++i) shifted.data()[i] = x.data()[i] + 100.0f;
  Tensor ta = tokenize(x, params, cfg);
  Tensor tb = tokenize(shifted, params, cfg);
  for (int64_t i = 0; i < ta.size(); ++i)
    CHECK(ta.data()[i] == doctest::Approx(tb.data()[i]).epsilon(1e-3));

  // with live scalar encoders the outputs differ
  Rng rng2(3);
  TokenizerParams live = TokenizerParams::init(cfg, rng2);
  Tensor la = tokenize(x, live, cfg);
  Tensor lb = tokenize(shifted, live, cfg);
  double diff = 0.0;
  for (int64_t i = 0; i < la.size(); ++i)
    diff = std::max(diff, std::fabs(static_cast<double>(la.data()[i]) - lb.data()[i]));
  CHECK(diff > 1e-4);
}

TEST_CASE("z-scored branch is invariant to positive affine input transforms") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(4);
  TokenizerParams params = TokenizerParams::init(cfg, rng);
  for (Tensor t : {params.scalar_mean_emb, params.scalar_mean_bias,
                   params.scalar_std_emb, params.scalar_std_bias})
    std::fill(t.buf().begin(), t.buf().end(), 0.0f);
  Tensor x = Tensor::randn({2, 32}, rng);
  Tensor ax = Tensor::zeros({2, 32});
  for (int64_t i = 0; i < x.size(); ++i) ax.data()[i] = 2.5f * x.data()[i] - 4.0f;
  Tensor ta = tokenize(x, params, cfg);
  Tensor tb = tokenize(ax, params, cfg);
  for (int64_t i = 0; i < ta.size(); ++i)
    CHECK(std::fabs(ta.data()[i] - tb.data()[i]) < 1e-4);
}

TEST_CASE("encode_scalar selection rules") {
  ModelConfig cfg;
  cfg.scalar_dim = 4;
  Rng rng(5);
  Tensor emb = Tensor::randn({9, 4}, rng);
  Tensor bias = Tensor::randn({9, 4}, rng);
  const std::vector<float> scales = cfg.scalar_scales();

  // v = 0 selects the smallest scale and returns its bias
  Tensor z = encode_scalar(0.0f, emb, bias, scales, 1.1f);
  for (int64_t j = 0; j < 4; ++j)
    CHECK(z.data()[j] == doctest::Approx(bias.data()[j]));

  // v = 0.5: smallest s with 0.5 <= 1.1 s is s=1 (index 4), normalized 0.5
  Tensor h = encode_scalar(0.5f, emb, bias, scales, 1.1f);
  for (int64_t j = 0; j < 4; ++j)
    CHECK(h.data()[j] ==
          doctest::Approx(emb.data()[4 * 4 + j] * 0.5f + bias.data()[4 * 4 + j]));

  // selection uses |v|: v and -v pick the same scale
  Tensor pos = encode_scalar(0.5f, emb, bias, scales, 1.1f);
  Tensor neg = encode_scalar(-0.5f, emb, bias, scales, 1.1f);
  for (int64_t j = 0; j < 4; ++j)
    CHECK(pos.data()[j] - bias.data()[4 * 4 + j] ==
          doctest::Approx(-(neg.data()[j] - bias.data()[4 * 4 + j])));

  // monotone selection: larger |v| never selects a smaller scale
  int last = -1;
  for (float v : {0.0f, 1e-4f, 1e-3f, 0.5f, 3.0f, 80.0f, 1e4f, 1e6f}) {
    int idx = 8;
    for (int s = 0; s < 9; ++s)
      if (std::fabs(v) <= 1.1f * scales[static_cast<size_t>(s)]) {
        idx = s;
        break;
      }
    CHECK(idx >= last);
    last = idx;
  }

  CHECK_THROWS_AS(encode_scalar(NAN, emb, bias, scales, 1.1f), InputError);
}

TEST_CASE("tokenize gradient check on a tiny config (T=64, d=8)") {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.patch_window = 16;
  cfg.scalar_dim = 4;
  Rng rng(6);
  TokenizerParams params = TokenizerParams::init(cfg, rng);
  // widen the conv weights so the layer-norm input variance is O(1); the
  // finite-difference oracle needs a well-conditioned evaluation point
  for (Tensor t : {params.conv_a_w, params.conv_b_w})
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] *= 20.0f;
  Tensor x = Tensor::randn({2, 64}, rng);
  Tensor w = Tensor::randn({2, cfg.patches_for(64), cfg.dim}, rng, 0.5f);
  std::vector<Tensor> wrt = {x, params.conv_a_w, params.conv_a_b,
                             params.ln_a_gamma, params.conv_b_w,
                             params.scalar_mean_emb, params.scalar_std_emb,
                             params.proj_w, params.proj_b};
  Rng pick(7);
  double err = grad_check_sampled(
      [&] { return sum_all(mul(tokenize(x, params, cfg), w)); }, wrt, pick, 12);
  CHECK(err < 1e-3);
}

TEST_CASE("tokenize is deterministic") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(8);
  TokenizerParams params = TokenizerParams::init(cfg, rng);
  Tensor x = Tensor::randn({2, 16}, rng);
  Tensor a = tokenize(x, params, cfg);
  Tensor b = tokenize(x, params, cfg);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}
