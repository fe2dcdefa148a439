#pragma once

#include <cstdint>
#include <vector>

#include "tsdistill/rng.hpp"
#include "tsdistill/tensor.hpp"

namespace tsdistill {

struct AugmentConfig {
  int64_t n_global = 2;
  int64_t n_local = 8;
  int64_t global_len = 512;
  int64_t local_len = 256;
  double global_frac_min = 0.4, global_frac_max = 1.0;
  double local_frac_min = 0.1, local_frac_max = 0.4;
  double jitter_sigma_scale = 0.2;  // sigma = scale * std(x)
  double local_jitter_prob = 0.5;
  int64_t patches = 32;
  double mask_prob = 0.5;
  double mask_ratio_min = 0.1, mask_ratio_max = 0.7;
  int64_t mask_ratio_steps = 32;   // linspace candidates
  bool mask_ratio_uniform = false; // true: draw the ratio from U(min,max) instead
};

struct CropMeta {
  int64_t start = 0;
  int64_t crop_len = 0;
  double fraction = 0.0;
  bool jittered = false;
};

struct ViewSet {
  // [B, n_global, global_len] and [B, n_local, local_len]
  Tensor global_views;
  Tensor local_views;
  // [B, n_global, patches], true = replaced by MASK for the student
  std::vector<uint8_t> masks;
  std::vector<CropMeta> global_meta;  // B * n_global, sample-major
  std::vector<CropMeta> local_meta;   // B * n_local
  int64_t batch = 0;

  const uint8_t* mask_row(int64_t b, int64_t g, const AugmentConfig& cfg) const {
    return masks.data() + (b * cfg.n_global + g) * cfg.patches;
  }
};

// Crops are contiguous slices resized by linear interpolation; Gaussian
// jitter (sigma from the pre-crop series std) hits exactly one of the two
// global views and each local view with probability 0.5.
ViewSet make_views(Tensor x, Rng& rng, const AugmentConfig& cfg = {});

// Per (sample, view): selected with probability mask_prob; selected views
// mask floor(ratio * patches) positions drawn without replacement.
std::vector<uint8_t> sample_masks(int64_t batch, int64_t n_views, Rng& rng,
                                  const AugmentConfig& cfg = {});

std::vector<float> jitter(const std::vector<float>& x, double sigma, Rng& rng);

}  // namespace tsdistill
