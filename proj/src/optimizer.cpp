#include "tsdistill/optimizer.hpp"

#include <cmath>

namespace tsdistill {

std::vector<ParamSlot> build_param_groups(const ModelParams& student,
                                          const ModelConfig& mcfg,
                                          const OptimizerConfig& ocfg) {
  const int64_t L = mcfg.layers;
  const double input_floor = std::pow(ocfg.layer_decay, static_cast<double>(L + 1));
  std::vector<ParamSlot> slots;
  for (const auto& [name, tensor] : student.named()) {
    ParamSlot slot;
    slot.name = name;
    slot.param = tensor;
    slot.weight_decay = tensor.ndim() >= 2;  // bias/norm/gain/token run wd-free

    if (name.rfind("tok.", 0) == 0) {
      slot.lr_mult = input_floor * ocfg.tokenizer_lr_mult;
    } else if (name.rfind("enc.layer", 0) == 0) {
      const size_t digits_at = std::string("enc.layer").size();
      const size_t dot = name.find('.', digits_at);
      const int64_t l = std::stoll(name.substr(digits_at, dot - digits_at));
      if (l < 0 || l >= L)
        throw ConfigError("build_param_groups: layer index out of range in " + name);
      // 1-indexed layer l+1 gets layer_decay^(L+1-(l+1))
      slot.lr_mult = std::pow(ocfg.layer_decay, static_cast<double>(L - l));
    } else if (name == "enc.cls" || name == "enc.mask_token") {
      slot.lr_mult = input_floor;
    } else if (name.rfind("enc.final_ln", 0) == 0) {
      slot.lr_mult = 1.0;
    } else if (name.rfind("dino_head.", 0) == 0 || name.rfind("ibot_head.", 0) == 0) {
      slot.lr_mult = 1.0;
      slot.prototype = name.find(".proto.") != std::string::npos;
    } else {
      throw ConfigError("build_param_groups: unclassifiable parameter " + name);
    }
    slot.m.assign(static_cast<size_t>(tensor.size()), 0.0f);
    slot.v.assign(static_cast<size_t>(tensor.size()), 0.0f);
    slots.push_back(std::move(slot));
  }
  return slots;
}

AdamW::AdamW(std::vector<ParamSlot> slots, const OptimizerConfig& cfg)
    : slots_(std::move(slots)), cfg_(cfg) {}

bool AdamW::step(const Schedules& schedules, int64_t step_index) {
  // clip on the global norm over all parameters jointly
  double norm_sq = 0.0;
  for (ParamSlot& slot : slots_) {
    if (!slot.param.has_grad()) continue;
    for (float g : slot.param.grad()) {
      if (!std::isfinite(g)) return false;  // skip the whole step
      norm_sq += static_cast<double>(g) * g;
    }
  }
  const double norm = std::sqrt(norm_sq);
  const double clip_scale =
      (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

  const int64_t t = ++applied_steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
  const double lr_main = schedules.lr(step_index);
  const double lr_proto =
      proto_frozen_ ? 0.0 : schedules.prototype_lr(step_index);
  const double wd = schedules.weight_decay(step_index);

  for (ParamSlot& slot : slots_) {
    const double lr_eff = (slot.prototype ? lr_proto : lr_main) * slot.lr_mult;
    const double wd_eff = slot.weight_decay ? wd : 0.0;
    float* p = slot.param.data();
    const bool has_grad = slot.param.has_grad();
    const float* gbuf = has_grad ? slot.param.grad().data() : nullptr;
    const int64_t n = slot.param.size();
    for (int64_t i = 0; i < n; ++i) {
      const double g = (gbuf ? static_cast<double>(gbuf[i]) : 0.0) * clip_scale;
      const double m = cfg_.beta1 * slot.m[static_cast<size_t>(i)] +
                       (1.0 - cfg_.beta1) * g;
      const double v = cfg_.beta2 * slot.v[static_cast<size_t>(i)] +
                       (1.0 - cfg_.beta2) * g * g;
      slot.m[static_cast<size_t>(i)] = static_cast<float>(m);
      slot.v[static_cast<size_t>(i)] = static_cast<float>(v);
      const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
      p[i] = static_cast<float>(p[i] - lr_eff * update - lr_eff * wd_eff * p[i]);
    }
  }
  return true;
}

void AdamW::zero_grad() {
  for (ParamSlot& slot : slots_) slot.param.zero_grad();
}

}  // namespace tsdistill
