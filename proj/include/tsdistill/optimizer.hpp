#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsdistill/model.hpp"
#include "tsdistill/model_config.hpp"
#include "tsdistill/schedules.hpp"
#include "tsdistill/tensor.hpp"

namespace tsdistill {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 3.0;
  double layer_decay = 0.9;        // per encoder layer
  double tokenizer_lr_mult = 0.2;  // on top of the layer-decay floor
};

struct ParamSlot {
  std::string name;
  Tensor param;
  double lr_mult = 1.0;
  bool weight_decay = true;  // rank >= 2 params only
  bool prototype = false;    // delayed schedule
  std::vector<float> m, v;   // Adam moments
};

// Classifies every parameter by name. Encoder layer l of L gets
// layer_decay^(L+1-l); tokenizer params additionally get tokenizer_lr_mult on
// the input-level floor; prototype layers follow the delayed schedule;
// rank <= 1 params (bias, norm, gains, tokens) run without weight decay.
// Unknown names fail loudly.
std::vector<ParamSlot> build_param_groups(const ModelParams& student,
                                          const ModelConfig& mcfg,
                                          const OptimizerConfig& ocfg);

class AdamW {
 public:
  AdamW(std::vector<ParamSlot> slots, const OptimizerConfig& cfg);

  // Clips the global gradient norm, then applies one decoupled update.
  // Returns false (and changes nothing) when any gradient is non-finite.
  bool step(const Schedules& schedules, int64_t step_index);

  void zero_grad();
  int64_t applied_steps() const { return applied_steps_; }
  void set_applied_steps(int64_t n) { applied_steps_ = n; }
  std::vector<ParamSlot>& slots() { return slots_; }
  const std::vector<ParamSlot>& slots() const { return slots_; }

  // freeze_prototypes contract: force the prototype group lr to zero
  void set_prototypes_frozen(bool frozen) { proto_frozen_ = frozen; }

 private:
  std::vector<ParamSlot> slots_;
  OptimizerConfig cfg_;
  int64_t applied_steps_ = 0;
  bool proto_frozen_ = false;
};

}  // namespace tsdistill
