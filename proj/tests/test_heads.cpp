#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "tsdistill/heads.hpp"
#include "tsdistill/model.hpp"

using namespace tsdistill;
using testutil::grad_check_sampled;

static ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.head_hidden = 8;
  cfg.bottleneck = 6;
  cfg.prototypes = 16;
  return cfg;
}

TEST_CASE("bottleneck output is unit norm") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(1);
  HeadParams params = HeadParams::init(cfg, rng);
  Tensor x = Tensor::randn({5, cfg.dim}, rng);
  Tensor z = project_bottleneck(x, params);
  for (int64_t r = 0; r < 5; ++r) {
    double sq = 0.0;
    for (int64_t j = 0; j < cfg.bottleneck; ++j)
      sq += static_cast<double>(z.data()[r * cfg.bottleneck + j]) *
            z.data()[r * cfg.bottleneck + j];
    CHECK(std::fabs(std::sqrt(sq) - 1.0) < 1e-5);
  }
}

TEST_CASE("logits are invariant to scaling just before normalization") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(2);
  HeadParams params = HeadParams::init(cfg, rng);
  Tensor h = Tensor::randn({4, cfg.bottleneck}, rng);
  Tensor h2 = Tensor::zeros({4, cfg.bottleneck});
  for (int64_t i = 0; i < h.size(); ++i) h2.data()[i] = 2.0f * h.data()[i];
  Tensor w = scale_rows(l2_normalize_rows(params.proto_v, 1e-8f), params.proto_g);
  Tensor la = matmul_nt(l2_normalize_rows(h, 1e-8f), w);
  Tensor lb = matmul_nt(l2_normalize_rows(h2, 1e-8f), w);
  for (int64_t i = 0; i < la.size(); ++i)
    CHECK(la.data()[i] == doctest::Approx(lb.data()[i]).epsilon(1e-5));
}

TEST_CASE("weight-normalized layer: logits scale linearly with g") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(3);
  HeadParams params = HeadParams::init(cfg, rng);
  Tensor x = Tensor::randn({3, cfg.dim}, rng);
  Tensor base = project(x, params);
  for (int64_t k = 0; k < cfg.prototypes; ++k) params.proto_g.data()[k] *= 3.0f;
  Tensor scaled = project(x, params);
  for (int64_t i = 0; i < base.size(); ++i)
    CHECK(scaled.data()[i] == doctest::Approx(3.0f * base.data()[i]).epsilon(1e-4));
}

TEST_CASE("logit magnitude bounded by max |g| after normalization") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(4);
  HeadParams params = HeadParams::init(cfg, rng);
  Tensor x = Tensor::randn({6, cfg.dim}, rng, 3.0f);
  Tensor logits = project(x, params);
  float max_g = 0.0f;
  for (int64_t k = 0; k < cfg.prototypes; ++k)
    max_g = std::max(max_g, std::fabs(params.proto_g.data()[k]));
  for (int64_t i = 0; i < logits.size(); ++i)
    CHECK(std::fabs(logits.data()[i]) <= max_g + 1e-5f);
}

TEST_CASE("project gradient check on a tiny config (K=16, hidden=8)") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(5);
  HeadParams params = HeadParams::init(cfg, rng);
  // O(1) pre-normalization activations and prototype rows for FD conditioning
  for (Tensor t : {params.mlp_w1, params.mlp_w2, params.mlp_w3, params.proto_v})
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] *= 15.0f;
  Tensor x = Tensor::randn({3, cfg.dim}, rng, 0.5f);
  Tensor w = Tensor::randn({3, cfg.prototypes}, rng, 0.3f);
  auto loss = [&] { return sum_all(mul(project(x, params), w)); };
  std::vector<Tensor> wrt = {x,          params.mlp_w1, params.mlp_b1,
                             params.mlp_w3, params.proto_v, params.proto_g};
  Rng pick(6);
  CHECK(grad_check_sampled(loss, wrt, pick, 15) < 1e-3);
}

TEST_CASE("student heads are separate parameter sets with identical shapes") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(7);
  ModelParams model = ModelParams::init(cfg, rng);
  NamedTensors names = model.named();
  // same shapes, different storage
  CHECK(model.dino_head.proto_v.shape() == model.ibot_head.proto_v.shape());
  CHECK(model.dino_head.mlp_w1.shape() == model.ibot_head.mlp_w1.shape());
  CHECK(model.dino_head.proto_v.data() != model.ibot_head.proto_v.data());
  bool saw_dino = false, saw_ibot = false;
  for (auto& [name, t] : names) {
    if (name.rfind("dino_head.", 0) == 0) saw_dino = true;
    if (name.rfind("ibot_head.", 0) == 0) saw_ibot = true;
  }
  CHECK(saw_dino);
  CHECK(saw_ibot);
}

TEST_CASE("clone detaches storage; ema_update moves toward the student") {
  ModelConfig cfg = tiny_cfg();
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.mlp_hidden = 8;
  Rng rng(8);
  ModelParams student = ModelParams::init(cfg, rng);
  ModelParams teacher = student.clone();
  CHECK(teacher.tokenizer.proj_w.data() != student.tokenizer.proj_w.data());

  // m=1 leaves the teacher unchanged
  uint64_t before = param_hash(teacher);
  ema_update(teacher, student, 1.0);
  CHECK(param_hash(teacher) == before);

  // m=0 copies the student
  student.tokenizer.proj_w.data()[0] = 7.5f;
  ema_update(teacher, student, 0.0);
  CHECK(param_hash(teacher) == param_hash(student));

  // m=0.992 with theta_t=0, theta_s=1: theta_t -> 0.008
  for (auto& [name, t] : teacher.named()) {
    (void)name;
    Tensor tt = t;
    std::fill(tt.buf().begin(), tt.buf().end(), 0.0f);
  }
  for (auto& [name, t] : student.named()) {
    (void)name;
    Tensor tt = t;
    std::fill(tt.buf().begin(), tt.buf().end(), 1.0f);
  }
  ema_update(teacher, student, 0.992);
  CHECK(teacher.encoder.cls_token.data()[0] == doctest::Approx(0.008).epsilon(1e-5));
}
