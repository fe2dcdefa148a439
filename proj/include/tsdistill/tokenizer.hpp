#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tsdistill/model_config.hpp"
#include "tsdistill/tensor.hpp"

namespace tsdistill {

// Token generator: two conv branches on the z-scored series and its first
// difference, plus multi-scale scalar encodings of per-patch raw mean/std,
// concatenated and projected to the model width.
struct TokenizerParams {
  Tensor conv_a_w, conv_a_b;  // [d,1,k], [d]
  Tensor ln_a_gamma, ln_a_beta;
  Tensor conv_b_w, conv_b_b;
  Tensor ln_b_gamma, ln_b_beta;
  Tensor scalar_mean_emb, scalar_mean_bias;  // [9, scalar_dim]
  Tensor scalar_std_emb, scalar_std_bias;
  Tensor proj_w, proj_b;  // [projector_in, d], [d]

  static TokenizerParams init(const ModelConfig& cfg, Rng& rng);
  void named(const std::string& prefix,
             std::vector<std::pair<std::string, Tensor>>& out) const;

  template <typename Fn>
  void visit(Fn&& fn) {
    fn(conv_a_w); fn(conv_a_b); fn(ln_a_gamma); fn(ln_a_beta);
    fn(conv_b_w); fn(conv_b_b); fn(ln_b_gamma); fn(ln_b_beta);
    fn(scalar_mean_emb); fn(scalar_mean_bias);
    fn(scalar_std_emb); fn(scalar_std_bias);
    fn(proj_w); fn(proj_b);
  }
};

// x [B,T] with T divisible by cfg.patches -> [B, P, d]
Tensor tokenize(Tensor x, const TokenizerParams& params, const ModelConfig& cfg);

// one scalar through the multi-scale encoder (exposed for tests)
Tensor encode_scalar(float value, Tensor emb, Tensor bias,
                     const std::vector<float>& scales, float tolerance);

}  // namespace tsdistill
