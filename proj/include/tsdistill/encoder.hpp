#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tsdistill/model_config.hpp"
#include "tsdistill/tensor.hpp"

namespace tsdistill {

struct EncoderLayerParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, bq, wk, bk, wv, bv;  // [d, inner], [inner]
  Tensor wo, bo;                  // [inner, d], [d]
  Tensor ln2_gamma, ln2_beta;
  Tensor mlp_w1, mlp_b1;  // [d, mlp_hidden]
  Tensor mlp_w2, mlp_b2;  // [mlp_hidden, d]

  template <typename Fn>
  void visit(Fn&& fn) {
    fn(ln1_gamma); fn(ln1_beta);
    fn(wq); fn(bq); fn(wk); fn(bk); fn(wv); fn(bv); fn(wo); fn(bo);
    fn(ln2_gamma); fn(ln2_beta);
    fn(mlp_w1); fn(mlp_b1); fn(mlp_w2); fn(mlp_b2);
  }
};

// Pre-norm transformer stack with a CLS token at position 0 and a learnable
// MASK token (zero-initialized) substituted for masked patches.
struct EncoderParams {
  Tensor cls_token;   // [d]
  Tensor mask_token;  // [d], zero-initialized
  std::vector<EncoderLayerParams> layers;
  Tensor final_ln_gamma, final_ln_beta;

  static EncoderParams init(const ModelConfig& cfg, Rng& rng);
  void named(const std::string& prefix,
             std::vector<std::pair<std::string, Tensor>>& out) const;

  template <typename Fn>
  void visit(Fn&& fn) {
    fn(cls_token);
    fn(mask_token);
    for (auto& layer : layers) layer.visit(fn);
    fn(final_ln_gamma);
    fn(final_ln_beta);
  }
};

struct EncodeOutput {
  Tensor cls;      // [B, d]
  Tensor patches;  // [B, P, d]
  Tensor masked_input;  // [B, P, d] tokens after MASK substitution (inspection hook)
};

// PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(.)
Tensor sinusoidal_pe(int64_t n_positions, int64_t d);

// mask, when present, flags patch positions replaced by the MASK token before
// positions are added. Positions cover all P+1 slots including CLS at 0.
EncodeOutput encode(Tensor tokens, const std::vector<uint8_t>* mask,
                    const EncoderParams& params, const ModelConfig& cfg,
                    bool training, Rng& dropout_rng,
                    bool use_positions = true);

}  // namespace tsdistill
