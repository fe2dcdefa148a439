#include "tsdistill/heads.hpp"

namespace tsdistill {

HeadParams HeadParams::init(const ModelConfig& cfg, Rng& rng) {
  HeadParams p;
  const float sigma = 0.02f;
  p.mlp_w1 = Tensor::trunc_normal({cfg.dim, cfg.head_hidden}, rng, sigma);
  p.mlp_b1 = Tensor::zeros({cfg.head_hidden});
  p.mlp_w2 = Tensor::trunc_normal({cfg.head_hidden, cfg.head_hidden}, rng, sigma);
  p.mlp_b2 = Tensor::zeros({cfg.head_hidden});
  p.mlp_w3 = Tensor::trunc_normal({cfg.head_hidden, cfg.bottleneck}, rng, sigma);
  p.mlp_b3 = Tensor::zeros({cfg.bottleneck});
  p.proto_v = Tensor::trunc_normal({cfg.prototypes, cfg.bottleneck}, rng, sigma);
  p.proto_g = Tensor::full({cfg.prototypes}, 1.0f);
  return p;
}

void HeadParams::named(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + ".mlp.w1", mlp_w1);
  out.emplace_back(prefix + ".mlp.b1", mlp_b1);
  out.emplace_back(prefix + ".mlp.w2", mlp_w2);
  out.emplace_back(prefix + ".mlp.b2", mlp_b2);
  out.emplace_back(prefix + ".mlp.w3", mlp_w3);
  out.emplace_back(prefix + ".mlp.b3", mlp_b3);
  out.emplace_back(prefix + ".proto.v", proto_v);
  out.emplace_back(prefix + ".proto.g", proto_g);
}

Tensor project_bottleneck(Tensor features, const HeadParams& params) {
  Tensor h = gelu(add_bcast(matmul(features, params.mlp_w1), params.mlp_b1));
  h = gelu(add_bcast(matmul(h, params.mlp_w2), params.mlp_b2));
  h = add_bcast(matmul(h, params.mlp_w3), params.mlp_b3);
  return l2_normalize_rows(h, 1e-8f);
}

Tensor project(Tensor features, const HeadParams& params) {
  Tensor z = project_bottleneck(features, params);
  // weight normalization: effective row k is g_k * v_k / ||v_k||
  Tensor w = scale_rows(l2_normalize_rows(params.proto_v, 1e-8f), params.proto_g);
  return matmul_nt(z, w);
}

}  // namespace tsdistill
