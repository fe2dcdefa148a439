#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tsdistill/encoder.hpp"
#include "tsdistill/heads.hpp"
#include "tsdistill/model_config.hpp"
#include "tsdistill/tokenizer.hpp"

namespace tsdistill {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Full parameter tree: tokenizer + encoder + separate DINO and iBOT heads.
// One instance per network (student or teacher).
struct ModelParams {
  TokenizerParams tokenizer;
  EncoderParams encoder;
  HeadParams dino_head;
  HeadParams ibot_head;

  static ModelParams init(const ModelConfig& cfg, Rng& rng);
  NamedTensors named() const;  // stable order shared by every traversal
  ModelParams clone() const;
  void set_requires_grad(bool v);
  void zero_grad();
};

// elementwise theta_t <- m*theta_t + (1-m)*theta_s over aligned trees
void ema_update(ModelParams& teacher, const ModelParams& student, double m);

uint64_t param_hash(const ModelParams& params);  // for no-touch assertions

}  // namespace tsdistill
