#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "tsdistill/checkpoint.hpp"
#include "tsdistill/config.hpp"
#include "tsdistill/model.hpp"
#include "tsdistill/synth.hpp"

namespace tsdistill {

struct MetricsRow {
  int64_t step = 0;
  double lr = 0.0, wd = 0.0, ema_m = 0.0, tau_t = 0.0;
  double dino = 0.0, ibot = 0.0, koleo = 0.0, total = 0.0;
  double target_entropy = 0.0;
};

struct TrainResult {
  ModelParams student;
  ModelParams teacher;  // the exported model
  std::vector<MetricsRow> metrics;
  int64_t total_steps = 0;
  int64_t skipped_steps = 0;  // non-finite gradients
};

// Student-teacher loop: batch -> views + masks -> total_loss -> AdamW on the
// student -> EMA teacher update. All randomness derives from
// (config seed, step), so a resumed run reproduces an uninterrupted one
// bit-exactly. out_dir empty = no checkpoints written.
TrainResult pretrain(const RunConfig& cfg, const synth::Corpus& corpus,
                     const std::string& out_dir = "",
                     const std::string& resume_path = "",
                     std::ostream* metrics_csv = nullptr);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);

// rebuilds a parameter tree from checkpoint entries under the given prefix
ModelParams params_from_checkpoint(const Checkpoint& ckpt,
                                   const std::string& prefix,
                                   const ModelConfig& mcfg);

}  // namespace tsdistill
