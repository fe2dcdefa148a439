#include "tsdistill/losses.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace tsdistill {

Tensor sinkhorn_knopp(Tensor logits, double tau, int n_iter, ReduceHook* hook) {
  if (tau <= 0.0) throw ConfigError("sinkhorn_knopp: tau must be positive");
  if (logits.ndim() != 2 || logits.dim(0) < 1)
    throw ShapeError("sinkhorn_knopp: expect [N,K] with N >= 1");
  if (!all_finite(logits)) throw InputError("sinkhorn_knopp: non-finite logits");
  ReduceHook identity;
  if (!hook) hook = &identity;

  const int64_t N = logits.dim(0), K = logits.dim(1);
  const int64_t n_eff = N * hook->world_size();

  // Q is prototypes x samples, double precision end to end
  std::vector<double> Q(static_cast<size_t>(K * N));
  double max_logit = -1e300;
  for (int64_t i = 0; i < logits.size(); ++i)
    max_logit = std::max(max_logit, static_cast<double>(logits.data()[i]));
  double total = 0.0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t k = 0; k < K; ++k) {
      const double q = std::exp((logits.data()[n * K + k] - max_logit) / tau);
      Q[static_cast<size_t>(k * N + n)] = q;
      total += q;
    }
  hook->sum_inplace(&total, 1);
  for (double& q : Q) q /= total;

  std::vector<double> row_sums(static_cast<size_t>(K));
  std::vector<double> col_sums(static_cast<size_t>(N));
  for (int it = 0; it < n_iter; ++it) {
    // rows (prototypes) sum to 1/K across the effective batch
    std::fill(row_sums.begin(), row_sums.end(), 0.0);
    for (int64_t k = 0; k < K; ++k)
      for (int64_t n = 0; n < N; ++n) row_sums[static_cast<size_t>(k)] += Q[static_cast<size_t>(k * N + n)];
    hook->sum_inplace(row_sums.data(), row_sums.size());
    for (int64_t k = 0; k < K; ++k) {
      const double denom = row_sums[static_cast<size_t>(k)] * static_cast<double>(K);
      if (denom > 0.0)
        for (int64_t n = 0; n < N; ++n) Q[static_cast<size_t>(k * N + n)] /= denom;
    }
    // columns (samples) sum to 1/n_eff
    std::fill(col_sums.begin(), col_sums.end(), 0.0);
    for (int64_t k = 0; k < K; ++k)
      for (int64_t n = 0; n < N; ++n) col_sums[static_cast<size_t>(n)] += Q[static_cast<size_t>(k * N + n)];
    for (int64_t n = 0; n < N; ++n) {
      const double denom = col_sums[static_cast<size_t>(n)] * static_cast<double>(n_eff);
      if (denom > 0.0)
        for (int64_t k = 0; k < K; ++k) Q[static_cast<size_t>(k * N + n)] /= denom;
    }
  }

  // rescale columns to unit sum and hand back per-sample rows
  Tensor out = Tensor::zeros({N, K});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t k = 0; k < K; ++k)
      out.data()[n * K + k] = static_cast<float>(
          Q[static_cast<size_t>(k * N + n)] * static_cast<double>(n_eff));
  return out;
}

// H(s,t) = -(1/B) sum_{i,k} p_t[i,k] log q_s[i,k]
static Tensor pair_cross_entropy(Tensor log_probs, Tensor targets, int64_t batch) {
  return scale(sum_all(mul(log_probs, targets)), -1.0 / static_cast<double>(batch));
}

DinoLossOutput dino_loss(const std::vector<Tensor>& student_global,
                         const std::vector<Tensor>& student_local,
                         const std::vector<Tensor>& teacher_probs,
                         double student_temp) {
  const int64_t S_g = static_cast<int64_t>(student_global.size());
  const int64_t S_l = static_cast<int64_t>(student_local.size());
  const int64_t T_g = static_cast<int64_t>(teacher_probs.size());
  if (S_g < 1 || T_g < 1)
    throw ConfigError("dino_loss: need at least one student and teacher global crop");
  const int64_t B = teacher_probs[0].dim(0);
  const int64_t K = teacher_probs[0].dim(1);
  for (const Tensor& t : student_global)
    if (t.dim(0) != B || t.dim(1) != K)
      throw ConfigError("dino_loss: student global logits shape mismatch");
  for (const Tensor& t : student_local)
    if (t.dim(0) != B || t.dim(1) != K)
      throw ConfigError("dino_loss: student local logits shape mismatch");

  std::vector<Tensor> log_global, log_local;
  log_global.reserve(static_cast<size_t>(S_g));
  for (const Tensor& z : student_global)
    log_global.push_back(log_softmax_last(z, student_temp));
  for (const Tensor& z : student_local)
    log_local.push_back(log_softmax_last(z, student_temp));

  const int64_t n_g = S_g * T_g - std::min(S_g, T_g);
  const int64_t n_l = S_l * T_g;

  DinoLossOutput out;
  out.alpha_g = static_cast<double>(n_g) / static_cast<double>(n_g + n_l);
  out.alpha_l = static_cast<double>(n_l) / static_cast<double>(n_g + n_l);

  // global term: same-index pairs excluded (the diagonal is zeroed)
  Tensor global_acc = Tensor::scalar(0.0f);
  for (int64_t s = 0; s < S_g; ++s)
    for (int64_t t = 0; t < T_g; ++t) {
      if (s == t) continue;
      global_acc = add(global_acc, pair_cross_entropy(
                                       log_global[static_cast<size_t>(s)],
                                       teacher_probs[static_cast<size_t>(t)], B));
    }
  out.global_term = n_g > 0 ? scale(global_acc, 1.0 / static_cast<double>(n_g))
                            : global_acc;

  Tensor local_acc = Tensor::scalar(0.0f);
  for (int64_t s = 0; s < S_l; ++s)
    for (int64_t t = 0; t < T_g; ++t)
      local_acc = add(local_acc, pair_cross_entropy(
                                     log_local[static_cast<size_t>(s)],
                                     teacher_probs[static_cast<size_t>(t)], B));
  out.local_term =
      n_l > 0 ? scale(local_acc, 1.0 / static_cast<double>(n_l)) : local_acc;

  out.total = add(scale(out.global_term, out.alpha_g),
                  scale(out.local_term, out.alpha_l));
  return out;
}

Tensor ibot_loss(Tensor student_patch_logits, Tensor teacher_patch_probs,
                 const std::vector<int64_t>& sample_of_patch,
                 int64_t n_crop_samples, double student_temp,
                 bool sign_positive) {
  const int64_t M = static_cast<int64_t>(sample_of_patch.size());
  if (M == 0) return Tensor::scalar(0.0f);
  if (student_patch_logits.dim(0) != M || teacher_patch_probs.dim(0) != M)
    throw std::runtime_error("ibot_loss: mask bookkeeping inconsistent");

  std::vector<int64_t> counts(static_cast<size_t>(n_crop_samples), 0);
  for (int64_t s : sample_of_patch) {
    if (s < 0 || s >= n_crop_samples)
      throw std::runtime_error("ibot_loss: patch sample index out of range");
    ++counts[static_cast<size_t>(s)];
  }

  // weight each patch by the inverse masked-patch count of its sample
  Tensor weights = Tensor::zeros({M});
  for (int64_t m = 0; m < M; ++m)
    weights.data()[m] = 1.0f / static_cast<float>(std::max<int64_t>(
                                   counts[static_cast<size_t>(
                                       sample_of_patch[static_cast<size_t>(m)])],
                                   1));

  Tensor logq = log_softmax_last(student_patch_logits, student_temp);
  Tensor row_ce = sum_last(mul(logq, teacher_patch_probs));  // [M], = -l_m
  const double sign = sign_positive ? -1.0 : 1.0;
  return scale(sum_all(mul(row_ce, weights)),
               sign / static_cast<double>(n_crop_samples));
}

Tensor koleo_loss(Tensor cls_features) {
  if (cls_features.ndim() != 2 || cls_features.dim(0) < 2)
    throw ConfigError("koleo_loss: need at least two feature rows");
  const int64_t B = cls_features.dim(0), d = cls_features.dim(1);
  constexpr double kEps = 1e-8;

  // normalized rows in double
  auto zhat = std::make_shared<std::vector<double>>(static_cast<size_t>(B * d));
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(B));
  for (int64_t i = 0; i < B; ++i) {
    double sq = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double v = cls_features.data()[i * d + j];
      sq += v * v;
    }
    const double nrm = std::max(std::sqrt(sq), 1e-12);
    (*norms)[static_cast<size_t>(i)] = nrm;
    for (int64_t j = 0; j < d; ++j)
      (*zhat)[static_cast<size_t>(i * d + j)] =
          cls_features.data()[i * d + j] / nrm;
  }

  auto nearest = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B));
  auto dists = std::make_shared<std::vector<double>>(static_cast<size_t>(B));
  double loss_acc = 0.0;
  for (int64_t i = 0; i < B; ++i) {
    double best = 1e300;
    int64_t best_j = -1;
    for (int64_t j = 0; j < B; ++j) {
      if (j == i) continue;
      double sq = 0.0;
      for (int64_t c = 0; c < d; ++c) {
        const double diff = (*zhat)[static_cast<size_t>(i * d + c)] -
                            (*zhat)[static_cast<size_t>(j * d + c)];
        sq += diff * diff;
      }
      if (sq < best) {
        best = sq;
        best_j = j;
      }
    }
    (*nearest)[static_cast<size_t>(i)] = best_j;
    (*dists)[static_cast<size_t>(i)] = std::sqrt(best);
    loss_acc += std::log(std::sqrt(best) + kEps);
  }
  Tensor out = Tensor::scalar(static_cast<float>(-loss_acc / static_cast<double>(B)));

  Tensor x = cls_features;
  if (tape_active({&x})) {
    out.mark_node();
    tape_record("koleo_loss", [x, out, zhat, norms, nearest, dists, B, d]() mutable {
      if (!out.has_grad() || !x.needs_grad()) return;
      const double g = out.grad()[0];
      std::vector<double> dzhat(static_cast<size_t>(B * d), 0.0);
      for (int64_t i = 0; i < B; ++i) {
        const double dist = (*dists)[static_cast<size_t>(i)];
        if (dist <= 0.0) continue;  // tied points: zero subgradient
        const int64_t j = (*nearest)[static_cast<size_t>(i)];
        const double coeff = -g / (static_cast<double>(B) * (dist + kEps) * dist);
        for (int64_t c = 0; c < d; ++c) {
          const double u = (*zhat)[static_cast<size_t>(i * d + c)] -
                           (*zhat)[static_cast<size_t>(j * d + c)];
          dzhat[static_cast<size_t>(i * d + c)] += coeff * u;
          dzhat[static_cast<size_t>(j * d + c)] -= coeff * u;
        }
      }
      // back through row normalization
      float* gx = x.grad_accum();
      for (int64_t i = 0; i < B; ++i) {
        double dot = 0.0;
        for (int64_t c = 0; c < d; ++c)
          dot += (*zhat)[static_cast<size_t>(i * d + c)] *
                 dzhat[static_cast<size_t>(i * d + c)];
        const double nrm = (*norms)[static_cast<size_t>(i)];
        for (int64_t c = 0; c < d; ++c)
          gx[i * d + c] += static_cast<float>(
              (dzhat[static_cast<size_t>(i * d + c)] -
               (*zhat)[static_cast<size_t>(i * d + c)] * dot) /
              nrm);
      }
    });
  }
  return out;
}

double mean_row_entropy(Tensor probs) {
  const int64_t K = probs.dim(-1);
  const int64_t rows = probs.size() / K;
  double acc = 0.0;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t k = 0; k < K; ++k) {
      const double p = probs.data()[r * K + k];
      if (p > 0.0) acc -= p * std::log(p);
    }
  return acc / static_cast<double>(rows);
}

// sample-major [B, V, L] -> view-major [V*B, L]
static Tensor to_view_major(Tensor views) {
  const int64_t B = views.dim(0), V = views.dim(1), L = views.dim(2);
  Tensor out = Tensor::zeros({V * B, L});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t v = 0; v < V; ++v)
      std::memcpy(out.data() + (v * B + b) * L, views.data() + (b * V + v) * L,
                  static_cast<size_t>(L) * sizeof(float));
  return out;
}

TotalLossOutput total_loss(const ViewSet& views, const ModelParams& student,
                           const ModelParams& teacher, const ModelConfig& mcfg,
                           const AugmentConfig& acfg, const LossConfig& lcfg,
                           double teacher_temp, Rng& dropout_rng,
                           ReduceHook* hook) {
  const int64_t B = views.batch;
  const int64_t G = acfg.n_global, L = acfg.n_local;
  const int64_t P_g = mcfg.patches_for(acfg.global_len);
  if (P_g != acfg.patches)
    throw ConfigError("total_loss: augment patch grid does not match the model");

  Tensor globals_vm = to_view_major(views.global_views);  // [G*B, Lg]
  // masks in the same view-major order
  std::vector<uint8_t> mask_vm(static_cast<size_t>(G * B * P_g), 0);
  std::vector<int64_t> masked_rows;      // into [G*B*P_g]
  std::vector<int64_t> sample_of_patch;  // crop-sample id g*B+b
  for (int64_t g = 0; g < G; ++g)
    for (int64_t b = 0; b < B; ++b) {
      const uint8_t* src = views.mask_row(b, g, acfg);
      uint8_t* dst = mask_vm.data() + (g * B + b) * P_g;
      std::memcpy(dst, src, static_cast<size_t>(P_g));
      for (int64_t p = 0; p < P_g; ++p)
        if (src[p]) {
          masked_rows.push_back((g * B + b) * P_g + p);
          sample_of_patch.push_back(g * B + b);
        }
    }
  const int64_t M = static_cast<int64_t>(masked_rows.size());
  const bool use_dino = lcfg.lambda_dino != 0.0;
  const bool use_ibot = lcfg.lambda_ibot != 0.0 && M > 0;
  const bool use_koleo = lcfg.lambda_koleo != 0.0;

  // ---- teacher targets (no gradients, unmasked globals, eval mode) ----
  std::vector<Tensor> teacher_probs;
  Tensor teacher_patch_probs;
  double teacher_entropy = 0.0;
  {
    NoGradScope ng;
    Rng eval_rng(0);  // never consumed: teacher stays in eval mode
    Tensor tokens = tokenize(globals_vm, teacher.tokenizer, mcfg);
    EncodeOutput enc = encode(tokens, nullptr, teacher.encoder, mcfg,
                              /*training=*/false, eval_rng);
    Tensor dino_logits = project(enc.cls, teacher.dino_head);  // [G*B, K]
    for (int64_t g = 0; g < G; ++g) {
      Tensor crop_logits = narrow(dino_logits, 0, g * B, B);
      teacher_probs.push_back(
          sinkhorn_knopp(crop_logits, teacher_temp, lcfg.sinkhorn_iters, hook));
      teacher_entropy += mean_row_entropy(teacher_probs.back());
    }
    teacher_entropy /= static_cast<double>(G);

    if (use_ibot) {
      Tensor flat = reshape(enc.patches, {G * B * P_g, mcfg.dim});
      Tensor masked = index_select_rows(flat, masked_rows);
      Tensor patch_logits = project(masked, teacher.ibot_head);
      teacher_patch_probs =
          sinkhorn_knopp(patch_logits, teacher_temp, lcfg.sinkhorn_iters, hook);
    }
  }

  // ---- student forward (tape active in the caller) ----
  Tensor s_tokens = tokenize(globals_vm, student.tokenizer, mcfg);
  EncodeOutput s_enc = encode(s_tokens, &mask_vm, student.encoder, mcfg,
                              /*training=*/true, dropout_rng);

  std::vector<Tensor> student_global, student_local;
  if (use_dino) {
    Tensor s_dino_logits = project(s_enc.cls, student.dino_head);
    for (int64_t g = 0; g < G; ++g)
      student_global.push_back(narrow(s_dino_logits, 0, g * B, B));
  }

  if (use_dino && L > 0) {
    Tensor locals_vm = to_view_major(views.local_views);
    Tensor l_tokens = tokenize(locals_vm, student.tokenizer, mcfg);
    EncodeOutput l_enc = encode(l_tokens, nullptr, student.encoder, mcfg,
                                /*training=*/true, dropout_rng);
    Tensor l_logits = project(l_enc.cls, student.dino_head);
    for (int64_t l = 0; l < L; ++l)
      student_local.push_back(narrow(l_logits, 0, l * B, B));
  }

  TotalLossOutput out;
  Tensor dino_total = Tensor::scalar(0.0f);
  if (use_dino) {
    DinoLossOutput dino =
        dino_loss(student_global, student_local, teacher_probs, lcfg.student_temp);
    dino_total = dino.total;
    out.report.dino_global = dino.global_term.item();
    out.report.dino_local = dino.local_term.item();
    out.report.alpha_g = dino.alpha_g;
    out.report.alpha_l = dino.alpha_l;
  }
  out.report.dino_total = dino_total.item();

  Tensor ibot = Tensor::scalar(0.0f);
  if (use_ibot) {
    Tensor s_flat = reshape(s_enc.patches, {G * B * P_g, mcfg.dim});
    Tensor s_masked = index_select_rows(s_flat, masked_rows);
    Tensor s_patch_logits = project(s_masked, student.ibot_head);
    ibot = ibot_loss(s_patch_logits, teacher_patch_probs, sample_of_patch,
                     G * B, lcfg.student_temp, lcfg.ibot_sign_positive);
  }
  out.report.ibot = ibot.item();

  Tensor koleo = Tensor::scalar(0.0f);
  if (use_koleo) koleo = koleo_loss(s_enc.cls);
  out.report.koleo = koleo.item();

  out.loss = add(add(scale(dino_total, lcfg.lambda_dino),
                     scale(ibot, lcfg.lambda_ibot)),
                 scale(koleo, lcfg.lambda_koleo));
  out.report.total = out.loss.item();
  out.report.teacher_entropy = teacher_entropy;
  out.report.masked_patches = M;
  out.report.teacher_temp = teacher_temp;
  return out;
}

}  // namespace tsdistill
