#pragma once

#include <cstdint>
#include <vector>

#include "tsdistill/augment.hpp"
#include "tsdistill/model.hpp"
#include "tsdistill/tensor.hpp"

namespace tsdistill {

struct LossConfig {
  double lambda_dino = 1.0;
  double lambda_ibot = 1.0;
  double lambda_koleo = 0.1;
  double student_temp = 0.1;
  int sinkhorn_iters = 3;
  bool ibot_sign_positive = true;  // false flips to the leading-minus variant
};

// Replaces the distributed all-reduce: a single-process run uses the
// identity hook. A multi-worker driver would sum across workers here.
struct ReduceHook {
  virtual ~ReduceHook() = default;
  virtual void sum_inplace(double* values, size_t n) { (void)values; (void)n; }
  virtual int64_t world_size() const { return 1; }
};

// Balanced soft assignments over prototypes. logits [N, K]; rows of the
// result sum to 1. Never records gradients.
Tensor sinkhorn_knopp(Tensor logits, double tau, int n_iter = 3,
                      ReduceHook* hook = nullptr);

struct DinoLossOutput {
  Tensor global_term;  // scalars
  Tensor local_term;
  Tensor total;
  double alpha_g = 0.0;
  double alpha_l = 0.0;
};

// student_global / student_local: per-crop [B, K] logits (tape tensors);
// teacher_probs: per-teacher-crop [B, K] constants. Same-index global pairs
// are excluded.
DinoLossOutput dino_loss(const std::vector<Tensor>& student_global,
                         const std::vector<Tensor>& student_local,
                         const std::vector<Tensor>& teacher_probs,
                         double student_temp);

// Patch-level cross-entropy at masked positions. sample_of_patch maps each
// masked-patch row to its owning crop-sample; n_crop_samples normalizes.
Tensor ibot_loss(Tensor student_patch_logits, Tensor teacher_patch_probs,
                 const std::vector<int64_t>& sample_of_patch,
                 int64_t n_crop_samples, double student_temp,
                 bool sign_positive = true);

// -(1/B) sum_i log(min_{j != i} ||zhat_i - zhat_j|| + 1e-8)
Tensor koleo_loss(Tensor cls_features);

struct LossReport {
  double dino_global = 0.0;
  double dino_local = 0.0;
  double dino_total = 0.0;
  double ibot = 0.0;
  double koleo = 0.0;
  double total = 0.0;
  double alpha_g = 0.0;
  double alpha_l = 0.0;
  double teacher_entropy = 0.0;  // mean entropy of teacher DINO targets
  int64_t masked_patches = 0;
  double teacher_temp = 0.0;
};

struct TotalLossOutput {
  Tensor loss;  // scalar on the active tape
  LossReport report;
};

// Full assembly: teacher forward (no grad) -> Sinkhorn targets; student
// forward over masked global + all local views; three weighted terms.
TotalLossOutput total_loss(const ViewSet& views, const ModelParams& student,
                           const ModelParams& teacher, const ModelConfig& mcfg,
                           const AugmentConfig& acfg, const LossConfig& lcfg,
                           double teacher_temp, Rng& dropout_rng,
                           ReduceHook* hook = nullptr);

double mean_row_entropy(Tensor probs);  // diagnostic over [N, K] rows

}  // namespace tsdistill
