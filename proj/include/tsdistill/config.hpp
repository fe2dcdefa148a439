#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsdistill/augment.hpp"
#include "tsdistill/losses.hpp"
#include "tsdistill/model_config.hpp"
#include "tsdistill/optimizer.hpp"
#include "tsdistill/schedules.hpp"

namespace tsdistill {

struct TrainConfig {
  int64_t batch_size = 256;
  double epochs = 10.0;  // total steps = round(epochs * steps_per_epoch)
  int64_t checkpoint_every = 500;
  int64_t log_every = 10;
  uint64_t seed = 42;
};

struct EvalConfig {
  int64_t probe_epochs = 100;
  double probe_lr = 1e-3;
  double probe_wd = 0.0;
  int64_t probe_batch = 128;
  int64_t finetune_epochs = 100;
  double finetune_wd = 0.05;
  std::vector<double> finetune_lr_grid = {1e-4, 2e-4, 1e-3};
  double finetune_val_fraction = 0.2;
  int64_t seeds = 3;
  bool best_epoch_on_test = true;  // false: select the epoch on a val split
  int64_t embed_len = 512;         // downstream series resized to this
};

// Whole-run configuration. JSON round-trips with a strict schema: unknown
// keys are rejected with their path, missing keys keep these defaults.
struct RunConfig {
  ModelConfig model;
  AugmentConfig augment;
  LossConfig loss;
  ScheduleConfig schedule;
  OptimizerConfig optim;
  TrainConfig train;
  EvalConfig eval;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_json_file(const std::string& path);
  std::string to_json() const;  // canonical (sorted keys)
  uint64_t hash() const;        // of the canonical serialization
  std::string hash_hex() const;

  void validate() const;  // cross-field consistency
};

}  // namespace tsdistill
