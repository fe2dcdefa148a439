#include "tsdistill/encoder.hpp"

#include <cmath>

namespace tsdistill {

EncoderParams EncoderParams::init(const ModelConfig& cfg, Rng& rng) {
  EncoderParams p;
  const float sigma = 0.02f;
  const int64_t d = cfg.dim, inner = cfg.attn_inner();
  p.cls_token = Tensor::trunc_normal({d}, rng, sigma);
  p.mask_token = Tensor::zeros({d});
  p.layers.resize(static_cast<size_t>(cfg.layers));
  for (auto& layer : p.layers) {
    layer.ln1_gamma = Tensor::full({d}, 1.0f);
    layer.ln1_beta = Tensor::zeros({d});
    layer.wq = Tensor::trunc_normal({d, inner}, rng, sigma);
    layer.bq = Tensor::zeros({inner});
    layer.wk = Tensor::trunc_normal({d, inner}, rng, sigma);
    layer.bk = Tensor::zeros({inner});
    layer.wv = Tensor::trunc_normal({d, inner}, rng, sigma);
    layer.bv = Tensor::zeros({inner});
    layer.wo = Tensor::trunc_normal({inner, d}, rng, sigma);
    layer.bo = Tensor::zeros({d});
    layer.ln2_gamma = Tensor::full({d}, 1.0f);
    layer.ln2_beta = Tensor::zeros({d});
    layer.mlp_w1 = Tensor::trunc_normal({d, cfg.mlp_hidden}, rng, sigma);
    layer.mlp_b1 = Tensor::zeros({cfg.mlp_hidden});
    layer.mlp_w2 = Tensor::trunc_normal({cfg.mlp_hidden, d}, rng, sigma);
    layer.mlp_b2 = Tensor::zeros({d});
  }
  p.final_ln_gamma = Tensor::full({d}, 1.0f);
  p.final_ln_beta = Tensor::zeros({d});
  return p;
}

void EncoderParams::named(const std::string& prefix,
                          std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + ".cls", cls_token);
  out.emplace_back(prefix + ".mask_token", mask_token);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    const EncoderLayerParams& layer = layers[l];
    out.emplace_back(lp + ".ln1.gamma", layer.ln1_gamma);
    out.emplace_back(lp + ".ln1.beta", layer.ln1_beta);
    out.emplace_back(lp + ".attn.wq", layer.wq);
    out.emplace_back(lp + ".attn.bq", layer.bq);
    out.emplace_back(lp + ".attn.wk", layer.wk);
    out.emplace_back(lp + ".attn.bk", layer.bk);
    out.emplace_back(lp + ".attn.wv", layer.wv);
    out.emplace_back(lp + ".attn.bv", layer.bv);
    out.emplace_back(lp + ".attn.wo", layer.wo);
    out.emplace_back(lp + ".attn.bo", layer.bo);
    out.emplace_back(lp + ".ln2.gamma", layer.ln2_gamma);
    out.emplace_back(lp + ".ln2.beta", layer.ln2_beta);
    out.emplace_back(lp + ".mlp.w1", layer.mlp_w1);
    out.emplace_back(lp + ".mlp.b1", layer.mlp_b1);
    out.emplace_back(lp + ".mlp.w2", layer.mlp_w2);
    out.emplace_back(lp + ".mlp.b2", layer.mlp_b2);
  }
  out.emplace_back(prefix + ".final_ln.gamma", final_ln_gamma);
  out.emplace_back(prefix + ".final_ln.beta", final_ln_beta);
}

Tensor sinusoidal_pe(int64_t n_positions, int64_t d) {
  if (d % 2 != 0) throw ConfigError("sinusoidal_pe: dimension must be even");
  Tensor pe = Tensor::zeros({n_positions, d});
  for (int64_t p = 0; p < n_positions; ++p)
    for (int64_t i = 0; i < d / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / d);
      pe.data()[p * d + 2 * i] = static_cast<float>(std::sin(p * freq));
      pe.data()[p * d + 2 * i + 1] = static_cast<float>(std::cos(p * freq));
    }
  return pe;
}

static Tensor attention(Tensor x, const EncoderLayerParams& layer,
                        const ModelConfig& cfg, bool training, Rng& rng) {
  const int64_t B = x.dim(0), S = x.dim(1);
  const int64_t H = cfg.heads, dh = cfg.head_dim;
  auto split_heads = [&](Tensor proj) {
    // [B,S,H*dh] -> [B*H, S, dh]
    Tensor r = reshape(proj, {B, S, H, dh});
    Tensor t = permute(r, {0, 2, 1, 3});
    return reshape(t, {B * H, S, dh});
  };
  Tensor q = split_heads(add_bcast(matmul(x, layer.wq), layer.bq));
  Tensor k = split_heads(add_bcast(matmul(x, layer.wk), layer.bk));
  Tensor v = split_heads(add_bcast(matmul(x, layer.wv), layer.bv));
  Tensor scores = scale(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn = softmax_last(scores);
  attn = dropout(attn, cfg.dropout, training, rng);
  Tensor ctx = bmm(attn, v);  // [B*H, S, dh]
  Tensor merged = reshape(permute(reshape(ctx, {B, H, S, dh}), {0, 2, 1, 3}),
                          {B, S, H * dh});
  return add_bcast(matmul(merged, layer.wo), layer.bo);
}

EncodeOutput encode(Tensor tokens, const std::vector<uint8_t>* mask,
                    const EncoderParams& params, const ModelConfig& cfg,
                    bool training, Rng& dropout_rng, bool use_positions) {
  if (tokens.ndim() != 3) throw ShapeError("encode: expect tokens [B,P,d]");
  const int64_t B = tokens.dim(0), P = tokens.dim(1), d = tokens.dim(2);
  if (d != cfg.dim) throw ShapeError("encode: token width mismatch");
  if (mask && static_cast<int64_t>(mask->size()) != B * P)
    throw ShapeError("encode: mask shape mismatch");

  EncodeOutput out;
  Tensor x = tokens;
  if (mask) x = mask_rows(x, *mask, params.mask_token);
  out.masked_input = x;
  x = prepend_row(x, params.cls_token);  // [B, P+1, d]
  if (use_positions) x = add_bcast(x, sinusoidal_pe(P + 1, d));

  for (const EncoderLayerParams& layer : params.layers) {
    Tensor h = layer_norm(x, layer.ln1_gamma, layer.ln1_beta);
    x = add(x, attention(h, layer, cfg, training, dropout_rng));
    Tensor m = layer_norm(x, layer.ln2_gamma, layer.ln2_beta);
    m = add_bcast(matmul(gelu(add_bcast(matmul(m, layer.mlp_w1), layer.mlp_b1)),
                         layer.mlp_w2),
                  layer.mlp_b2);
    m = dropout(m, cfg.dropout, training, dropout_rng);
    x = add(x, m);
  }
  x = layer_norm(x, params.final_ln_gamma, params.final_ln_beta);
  out.cls = reshape(narrow(x, 1, 0, 1), {B, d});
  out.patches = narrow(x, 1, 1, P);
  return out;
}

}  // namespace tsdistill
