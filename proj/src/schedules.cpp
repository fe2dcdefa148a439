#include "tsdistill/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tsdistill {

namespace {
constexpr double kPi = 3.14159265358979323846;

double cosine(double from, double to, double progress) {
  progress = std::clamp(progress, 0.0, 1.0);
  return to + 0.5 * (from - to) * (1.0 + std::cos(kPi * progress));
}
}  // namespace

Schedules::Schedules(const ScheduleConfig& cfg, int64_t total_steps,
                     int64_t steps_per_epoch)
    : cfg_(cfg), total_steps_(total_steps) {
  if (total_steps < 1 || steps_per_epoch < 1)
    throw std::invalid_argument("Schedules: need positive step counts");
  auto to_steps = [&](double epochs) {
    return static_cast<int64_t>(
        std::llround(epochs * static_cast<double>(steps_per_epoch)));
  };
  warmup_steps_ = std::min(to_steps(cfg.warmup_epochs), total_steps);
  temp_warmup_steps_ = std::min(to_steps(cfg.teacher_temp_warmup_epochs), total_steps);
  freeze_steps_ = std::min(to_steps(cfg.freeze_proto_epochs), total_steps);
}

double Schedules::lr(int64_t step) const {
  if (warmup_steps_ > 0 && step < warmup_steps_)
    return cfg_.base_lr * static_cast<double>(step) /
           static_cast<double>(warmup_steps_);
  const double span = static_cast<double>(std::max<int64_t>(total_steps_ - warmup_steps_, 1));
  return cosine(cfg_.base_lr, cfg_.min_lr,
                static_cast<double>(step - warmup_steps_) / span);
}

double Schedules::weight_decay(int64_t step) const {
  return cosine(cfg_.wd_start, cfg_.wd_end,
                static_cast<double>(step) / static_cast<double>(total_steps_));
}

double Schedules::ema_momentum(int64_t step) const {
  return cosine(cfg_.ema_start, cfg_.ema_end,
                static_cast<double>(step) / static_cast<double>(total_steps_));
}

double Schedules::teacher_temp(int64_t step) const {
  if (temp_warmup_steps_ <= 0 || step >= temp_warmup_steps_)
    return cfg_.teacher_temp_end;
  return cfg_.teacher_temp_start +
         (cfg_.teacher_temp_end - cfg_.teacher_temp_start) *
             static_cast<double>(step) / static_cast<double>(temp_warmup_steps_);
}

double Schedules::prototype_lr(int64_t step) const {
  return step < freeze_steps_ ? 0.0 : lr(step);
}

}  // namespace tsdistill
