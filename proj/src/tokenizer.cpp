#include "tsdistill/tokenizer.hpp"

namespace tsdistill {

TokenizerParams TokenizerParams::init(const ModelConfig& cfg, Rng& rng) {
  TokenizerParams p;
  const float sigma = 0.02f;
  p.conv_a_w = Tensor::trunc_normal({cfg.dim, 1, cfg.conv_kernel}, rng, sigma);
  p.conv_a_b = Tensor::zeros({cfg.dim});
  p.ln_a_gamma = Tensor::full({cfg.dim}, 1.0f);
  p.ln_a_beta = Tensor::zeros({cfg.dim});
  p.conv_b_w = Tensor::trunc_normal({cfg.dim, 1, cfg.conv_kernel}, rng, sigma);
  p.conv_b_b = Tensor::zeros({cfg.dim});
  p.ln_b_gamma = Tensor::full({cfg.dim}, 1.0f);
  p.ln_b_beta = Tensor::zeros({cfg.dim});
  p.scalar_mean_emb = Tensor::trunc_normal({9, cfg.scalar_dim}, rng, sigma);
  p.scalar_mean_bias = Tensor::trunc_normal({9, cfg.scalar_dim}, rng, sigma);
  p.scalar_std_emb = Tensor::trunc_normal({9, cfg.scalar_dim}, rng, sigma);
  p.scalar_std_bias = Tensor::trunc_normal({9, cfg.scalar_dim}, rng, sigma);
  p.proj_w = Tensor::trunc_normal({cfg.projector_in(), cfg.dim}, rng, sigma);
  p.proj_b = Tensor::zeros({cfg.dim});
  return p;
}

void TokenizerParams::named(const std::string& prefix,
                            std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + ".conv_a.w", conv_a_w);
  out.emplace_back(prefix + ".conv_a.b", conv_a_b);
  out.emplace_back(prefix + ".ln_a.gamma", ln_a_gamma);
  out.emplace_back(prefix + ".ln_a.beta", ln_a_beta);
  out.emplace_back(prefix + ".conv_b.w", conv_b_w);
  out.emplace_back(prefix + ".conv_b.b", conv_b_b);
  out.emplace_back(prefix + ".ln_b.gamma", ln_b_gamma);
  out.emplace_back(prefix + ".ln_b.beta", ln_b_beta);
  out.emplace_back(prefix + ".scalar_mean.emb", scalar_mean_emb);
  out.emplace_back(prefix + ".scalar_mean.bias", scalar_mean_bias);
  out.emplace_back(prefix + ".scalar_std.emb", scalar_std_emb);
  out.emplace_back(prefix + ".scalar_std.bias", scalar_std_bias);
  out.emplace_back(prefix + ".proj.w", proj_w);
  out.emplace_back(prefix + ".proj.b", proj_b);
}

// conv branch: [B,T] -> conv1d(C_in=1) -> layer norm over channels -> pooled
// per-patch means [B,P,d]
static Tensor conv_branch(Tensor series, Tensor w, Tensor b, Tensor gamma,
                          Tensor beta, int64_t patches) {
  const int64_t B = series.dim(0), T = series.dim(1);
  Tensor x3 = reshape(series, {B, 1, T});
  Tensor conv = conv1d_same(x3, w, b);          // [B, d, T]
  Tensor seq = permute(conv, {0, 2, 1});        // [B, T, d]
  Tensor normed = layer_norm(seq, gamma, beta);
  return patch_pool_mean(normed, patches);      // [B, P, d]
}

Tensor tokenize(Tensor x, const TokenizerParams& params, const ModelConfig& cfg) {
  if (x.ndim() != 2) throw ShapeError("tokenize: expect [B,T]");
  const int64_t T = x.dim(1);
  if (T % cfg.patch_window != 0)
    throw ShapeError("tokenize: length " + std::to_string(T) +
                     " not divisible by the patch window " +
                     std::to_string(cfg.patch_window));
  const int64_t patches = cfg.patches_for(T);

  // branch A on the z-scored series, branch B on its first difference
  Tensor z = standardize_last(x, 1e-6f);
  Tensor dz = first_diff(z);
  Tensor pooled_a = conv_branch(z, params.conv_a_w, params.conv_a_b,
                                params.ln_a_gamma, params.ln_a_beta, patches);
  Tensor pooled_b = conv_branch(dz, params.conv_b_w, params.conv_b_b,
                                params.ln_b_gamma, params.ln_b_beta, patches);

  // raw per-patch statistics through the multi-scale scalar encoders
  const std::vector<float> scales = cfg.scalar_scales();
  Tensor means = patch_mean(x, patches);
  Tensor stds = patch_std(x, patches, 1e-8f);
  Tensor mean_enc = scalar_encode(means, params.scalar_mean_emb,
                                  params.scalar_mean_bias, scales,
                                  cfg.scalar_tolerance);  // [B,P,ds]
  Tensor std_enc = scalar_encode(stds, params.scalar_std_emb,
                                 params.scalar_std_bias, scales,
                                 cfg.scalar_tolerance);

  Tensor cat = concat_last({pooled_a, pooled_b, mean_enc, std_enc});
  return add_bcast(matmul(cat, params.proj_w), params.proj_b);  // [B,P,d]
}

Tensor encode_scalar(float value, Tensor emb, Tensor bias,
                     const std::vector<float>& scales, float tolerance) {
  Tensor v = Tensor::from_data({1, 1}, {value});
  Tensor out = scalar_encode(v, emb, bias, scales, tolerance);
  return reshape(out, {emb.dim(1)});
}

}  // namespace tsdistill
