#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace tsdistill {

// Architecture dimensions. Defaults follow the reference configuration;
// tests shrink everything through this one struct.
struct ModelConfig {
  int64_t dim = 256;          // token / embedding width
  int64_t layers = 6;
  int64_t heads = 8;
  int64_t head_dim = 128;     // per-head q/k/v width (attention inner = heads*head_dim)
  int64_t mlp_hidden = 512;
  float dropout = 0.1f;
  // fixed patch window: a length-T input yields T / patch_window patches
  // (the reference length 512 gives P = 32; local crops of 256 give P = 16)
  int64_t patch_window = 16;
  int64_t scalar_dim = 32;    // multi-scale scalar embedding width
  int64_t conv_kernel = 3;
  float scalar_tolerance = 1.1f;

  int64_t head_hidden = 2048;
  int64_t bottleneck = 256;
  int64_t prototypes = 65536;  // K

  // nine log-spaced scales 1e-4 .. 1e4
  std::vector<float> scalar_scales() const {
    std::vector<float> s;
    for (int e = -4; e <= 4; ++e) s.push_back(static_cast<float>(std::pow(10.0, e)));
    return s;
  }

  int64_t attn_inner() const { return heads * head_dim; }
  // concatenation layout: [convA_pool | convB_pool | meanEnc | stdEnc]
  int64_t projector_in() const { return 2 * dim + 2 * scalar_dim; }
  int64_t patches_for(int64_t length) const { return length / patch_window; }
};

}  // namespace tsdistill
