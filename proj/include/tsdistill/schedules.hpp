#pragma once

#include <cstdint>

namespace tsdistill {

struct ScheduleConfig {
  double base_lr = 1e-3;
  double min_lr = 1e-7;
  double warmup_epochs = 0.7;
  double wd_start = 0.04;
  double wd_end = 0.4;
  double ema_start = 0.992;
  double ema_end = 1.0;
  double teacher_temp_start = 0.04;
  double teacher_temp_end = 0.07;
  double teacher_temp_warmup_epochs = 2.5;
  double freeze_proto_epochs = 0.07;
};

// Total functions of step in [0, total_steps]. Epoch-denominated knobs are
// converted through steps_per_epoch = ceil(n_samples / batch).
class Schedules {
 public:
  Schedules(const ScheduleConfig& cfg, int64_t total_steps, int64_t steps_per_epoch);

  double lr(int64_t step) const;            // linear warmup from 0, cosine to min_lr
  double weight_decay(int64_t step) const;  // cosine wd_start -> wd_end
  double ema_momentum(int64_t step) const;  // cosine ema_start -> ema_end
  double teacher_temp(int64_t step) const;  // linear over warmup, then constant
  double prototype_lr(int64_t step) const;  // main lr, 0 while frozen

  int64_t total_steps() const { return total_steps_; }
  int64_t warmup_steps() const { return warmup_steps_; }
  int64_t freeze_steps() const { return freeze_steps_; }

 private:
  ScheduleConfig cfg_;
  int64_t total_steps_ = 0;
  int64_t warmup_steps_ = 0;
  int64_t temp_warmup_steps_ = 0;
  int64_t freeze_steps_ = 0;
};

}  // namespace tsdistill
