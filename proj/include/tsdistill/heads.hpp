#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tsdistill/model_config.hpp"
#include "tsdistill/tensor.hpp"

namespace tsdistill {

// 3-layer MLP to a bottleneck, L2 normalization, then a weight-normalized
// bias-free linear map onto the prototype set.
struct HeadParams {
  Tensor mlp_w1, mlp_b1;  // [d, hidden]
  Tensor mlp_w2, mlp_b2;  // [hidden, hidden]
  Tensor mlp_w3, mlp_b3;  // [hidden, bottleneck]
  Tensor proto_v;         // [K, bottleneck] direction
  Tensor proto_g;         // [K] magnitude, init 1

  static HeadParams init(const ModelConfig& cfg, Rng& rng);
  void named(const std::string& prefix,
             std::vector<std::pair<std::string, Tensor>>& out) const;

  template <typename Fn>
  void visit(Fn&& fn) {
    fn(mlp_w1); fn(mlp_b1); fn(mlp_w2); fn(mlp_b2); fn(mlp_w3); fn(mlp_b3);
    fn(proto_v); fn(proto_g);
  }
};

// features [N, d] -> prototype logits [N, K]
Tensor project(Tensor features, const HeadParams& params);

// bottleneck output after normalization (exposed for tests)
Tensor project_bottleneck(Tensor features, const HeadParams& params);

}  // namespace tsdistill
