#include "tsdistill/augment.hpp"

#include <cmath>
#include <stdexcept>

namespace tsdistill {

namespace {
constexpr uint64_t kMaskRoute = 0xffff'0000'6d61'736bULL;

// same endpoint-aligned math as the tensor op, on raw buffers
void resize_linear(const float* src, int64_t n, float* dst, int64_t m) {
  NoGradScope ng;
  Tensor in = Tensor::zeros({1, n});
  std::copy(src, src + n, in.data());
  Tensor out = linear_resize(in, m);
  std::copy(out.data(), out.data() + m, dst);
}

double series_std(const float* x, int64_t n) {
  double mean = 0.0;
  for (int64_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  return std::sqrt(var / static_cast<double>(n));
}
}  // namespace

std::vector<float> jitter(const std::vector<float>& x, double sigma, Rng& rng) {
  if (sigma < 0.0) throw InputError("jitter: sigma must be >= 0");
  std::vector<float> out = x;
  if (sigma == 0.0) return out;
  for (float& v : out) v += static_cast<float>(sigma * rng.normal());
  return out;
}

std::vector<uint8_t> sample_masks(int64_t batch, int64_t n_views, Rng& rng,
                                  const AugmentConfig& cfg) {
  const int64_t P = cfg.patches;
  std::vector<uint8_t> masks(static_cast<size_t>(batch * n_views * P), 0);
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t v = 0; v < n_views; ++v) {
      if (!rng.bernoulli(cfg.mask_prob)) continue;
      double ratio;
      if (cfg.mask_ratio_uniform) {
        ratio = rng.uniform(cfg.mask_ratio_min, cfg.mask_ratio_max);
      } else {
        // uniform choice over a linspace of candidate ratios
        const int64_t i = rng.uniform_int(cfg.mask_ratio_steps);
        ratio = cfg.mask_ratio_min +
                (cfg.mask_ratio_max - cfg.mask_ratio_min) *
                    static_cast<double>(i) /
                    static_cast<double>(cfg.mask_ratio_steps - 1);
      }
      const int64_t count = static_cast<int64_t>(ratio * static_cast<double>(P));
      uint8_t* row = masks.data() + (b * n_views + v) * P;
      for (int64_t p : rng.sample_without_replacement(P, count)) row[p] = 1;
    }
  return masks;
}

ViewSet make_views(Tensor x, Rng& rng, const AugmentConfig& cfg) {
  if (x.ndim() != 2) throw ShapeError("make_views: expect [B,T]");
  const int64_t B = x.dim(0), T = x.dim(1);
  if (T < 2) throw InputError("make_views: series too short to crop");

  ViewSet views;
  views.batch = B;
  views.global_views = Tensor::zeros({B, cfg.n_global, cfg.global_len});
  views.local_views = Tensor::zeros({B, cfg.n_local, cfg.local_len});
  views.global_meta.resize(static_cast<size_t>(B * cfg.n_global));
  views.local_meta.resize(static_cast<size_t>(B * cfg.n_local));

  for (int64_t b = 0; b < B; ++b) {
    Rng s = rng.split(static_cast<uint64_t>(b));
    const float* series = x.data() + b * T;
    const double sigma = cfg.jitter_sigma_scale * series_std(series, T);

    auto crop_into = [&](double frac_min, double frac_max, int64_t out_len,
                         float* dst, CropMeta& meta) {
      const double r = s.uniform(frac_min, frac_max);
      int64_t crop_len = static_cast<int64_t>(std::ceil(r * static_cast<double>(T)));
      crop_len = std::min(std::max<int64_t>(crop_len, 2), T);
      const int64_t start = s.uniform_int(T - crop_len + 1);
      resize_linear(series + start, crop_len, dst, out_len);
      meta = {start, crop_len, r, false};
    };

    float* gbase = views.global_views.data() + b * cfg.n_global * cfg.global_len;
    for (int64_t g = 0; g < cfg.n_global; ++g)
      crop_into(cfg.global_frac_min, cfg.global_frac_max, cfg.global_len,
                gbase + g * cfg.global_len,
                views.global_meta[static_cast<size_t>(b * cfg.n_global + g)]);

    // jitter exactly one of the global views (applied after resize)
    const int64_t jidx = s.uniform_int(cfg.n_global);
    if (sigma > 0.0) {
      float* gv = gbase + jidx * cfg.global_len;
      for (int64_t t = 0; t < cfg.global_len; ++t)
        gv[t] += static_cast<float>(sigma * s.normal());
    }
    views.global_meta[static_cast<size_t>(b * cfg.n_global + jidx)].jittered = true;

    float* lbase = views.local_views.data() + b * cfg.n_local * cfg.local_len;
    for (int64_t l = 0; l < cfg.n_local; ++l) {
      CropMeta& meta = views.local_meta[static_cast<size_t>(b * cfg.n_local + l)];
      crop_into(cfg.local_frac_min, cfg.local_frac_max, cfg.local_len,
                lbase + l * cfg.local_len, meta);
      if (s.bernoulli(cfg.local_jitter_prob)) {
        meta.jittered = true;
        if (sigma > 0.0) {
          float* lv = lbase + l * cfg.local_len;
          for (int64_t t = 0; t < cfg.local_len; ++t)
            lv[t] += static_cast<float>(sigma * s.normal());
        }
      }
    }
  }

  Rng mask_rng = rng.split(kMaskRoute);
  views.masks = sample_masks(B, cfg.n_global, mask_rng, cfg);
  return views;
}

}  // namespace tsdistill
