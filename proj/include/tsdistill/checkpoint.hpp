#pragma once

#include <cstdint>
#include <string>

#include "tsdistill/model.hpp"

namespace tsdistill {

// One "UTCK" file carries both parameter trees, the optimizer moments, the
// RNG seed, and the step counter: magic, u32 version, length-prefixed JSON
// metadata, then a table of (name, rank, dims, f32 payload) entries.
struct Checkpoint {
  int64_t step = 0;           // completed steps; training resumes here
  int64_t applied_steps = 0;  // optimizer bias-correction counter
  uint64_t rng_seed = 0;
  std::string config_hash;
  std::string config_json;
  double lr = 0.0, wd = 0.0, ema_m = 0.0, teacher_temp = 0.0;  // at save time
  NamedTensors entries;

  const Tensor* find(const std::string& name) const;
};

void save_utck(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_utck(const std::string& path);

}  // namespace tsdistill
