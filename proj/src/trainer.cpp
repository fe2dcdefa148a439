#include "tsdistill/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "tsdistill/losses.hpp"
#include "tsdistill/optimizer.hpp"

namespace tsdistill {

namespace {
constexpr uint64_t kInitRoute = 0x1a17;
constexpr uint64_t kShuffleRoute = 0x5481;
constexpr uint64_t kAugRoute = 0xa06;
constexpr uint64_t kDropRoute = 0xd809;

Tensor gather_batch(const synth::Corpus& corpus, const std::vector<int64_t>& order,
                    int64_t step_in_epoch, int64_t batch_size) {
  const int64_t n = corpus.n_samples;
  Tensor batch = Tensor::zeros({batch_size, corpus.length});
  for (int64_t i = 0; i < batch_size; ++i) {
    const int64_t pos = (step_in_epoch * batch_size + i) % n;
    const float* src = corpus.sample(order[static_cast<size_t>(pos)]);
    std::memcpy(batch.data() + i * corpus.length, src,
                static_cast<size_t>(corpus.length) * sizeof(float));
  }
  return batch;
}
}  // namespace

void write_metrics_header(std::ostream& out) {
  out << "step,lr,wd,ema_m,tau_t,dino,ibot,koleo,total,target_entropy\n";
}

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                static_cast<long long>(r.step), r.lr, r.wd, r.ema_m, r.tau_t,
                r.dino, r.ibot, r.koleo, r.total, r.target_entropy);
  out << buf;
}

ModelParams params_from_checkpoint(const Checkpoint& ckpt,
                                   const std::string& prefix,
                                   const ModelConfig& mcfg) {
  Rng dummy(0);
  ModelParams params = ModelParams::init(mcfg, dummy);
  for (auto& [name, tensor] : params.named()) {
    const Tensor* src = ckpt.find(prefix + name);
    if (!src)
      throw std::runtime_error("checkpoint: missing entry " + prefix + name);
    if (src->shape() != tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + prefix + name);
    Tensor dst = tensor;
    std::copy(src->buf().begin(), src->buf().end(), dst.buf().begin());
  }
  return params;
}

static Checkpoint make_checkpoint(const RunConfig& cfg, const ModelParams& student,
                                  const ModelParams& teacher, const AdamW& opt,
                                  const Schedules& sched, int64_t next_step) {
  Checkpoint ckpt;
  ckpt.step = next_step;
  ckpt.applied_steps = opt.applied_steps();
  ckpt.rng_seed = cfg.train.seed;
  ckpt.config_hash = cfg.hash_hex();
  ckpt.config_json = cfg.to_json();
  const int64_t at = std::min(next_step, sched.total_steps());
  ckpt.lr = sched.lr(at);
  ckpt.wd = sched.weight_decay(at);
  ckpt.ema_m = sched.ema_momentum(at);
  ckpt.teacher_temp = sched.teacher_temp(at);
  for (const auto& [name, t] : student.named())
    ckpt.entries.emplace_back("student." + name, t.clone());
  for (const auto& [name, t] : teacher.named())
    ckpt.entries.emplace_back("teacher." + name, t.clone());
  for (const ParamSlot& slot : opt.slots()) {
    Tensor m = Tensor::from_data(slot.param.shape(), slot.m);
    Tensor v = Tensor::from_data(slot.param.shape(), slot.v);
    ckpt.entries.emplace_back("opt.m." + slot.name, std::move(m));
    ckpt.entries.emplace_back("opt.v." + slot.name, std::move(v));
  }
  return ckpt;
}

TrainResult pretrain(const RunConfig& cfg, const synth::Corpus& corpus,
                     const std::string& out_dir, const std::string& resume_path,
                     std::ostream* metrics_csv) {
  cfg.validate();
  if (corpus.n_samples < 1) throw InputError("pretrain: empty corpus");
  if (corpus.length % cfg.model.patch_window != 0)
    throw InputError("pretrain: corpus length incompatible with the patch window");

  const int64_t B = cfg.train.batch_size;
  const int64_t steps_per_epoch =
      (corpus.n_samples + B - 1) / B;  // ceil(n / batch)
  const int64_t total_steps = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(cfg.train.epochs *
                                           static_cast<double>(steps_per_epoch))));
  Schedules sched(cfg.schedule, total_steps, steps_per_epoch);

  Rng master(cfg.train.seed);
  Rng init_rng = master.split(kInitRoute);

  ModelParams student = ModelParams::init(cfg.model, init_rng);
  ModelParams teacher = student.clone();
  int64_t start_step = 0;
  int64_t applied_steps = 0;

  if (!resume_path.empty()) {
    Checkpoint ckpt = load_utck(resume_path);
    if (ckpt.config_hash != cfg.hash_hex())
      throw ConfigError("pretrain: checkpoint was produced by a different config");
    student = params_from_checkpoint(ckpt, "student.", cfg.model);
    teacher = params_from_checkpoint(ckpt, "teacher.", cfg.model);
    start_step = ckpt.step;
    applied_steps = ckpt.applied_steps;
  }

  student.set_requires_grad(true);
  teacher.set_requires_grad(false);

  AdamW opt(build_param_groups(student, cfg.model, cfg.optim), cfg.optim);
  if (!resume_path.empty()) {
    Checkpoint ckpt = load_utck(resume_path);
    for (ParamSlot& slot : opt.slots()) {
      const Tensor* m = ckpt.find("opt.m." + slot.name);
      const Tensor* v = ckpt.find("opt.v." + slot.name);
      if (!m || !v)
        throw std::runtime_error("checkpoint: missing optimizer state for " +
                                 slot.name);
      slot.m = m->buf();
      slot.v = v->buf();
    }
    opt.set_applied_steps(applied_steps);
  }

  LossConfig lcfg = cfg.loss;
  TrainResult result{std::move(student), std::move(teacher), {}, total_steps, 0};

  if (metrics_csv && start_step == 0) write_metrics_header(*metrics_csv);

  std::vector<int64_t> order(static_cast<size_t>(corpus.n_samples));
  int64_t order_epoch = -1;
  int consecutive_bad = 0;

  for (int64_t step = start_step; step < total_steps; ++step) {
    const int64_t epoch = step / steps_per_epoch;
    if (epoch != order_epoch) {
      for (int64_t i = 0; i < corpus.n_samples; ++i) order[static_cast<size_t>(i)] = i;
      Rng shuffle_rng = master.split(kShuffleRoute).split(static_cast<uint64_t>(epoch));
      shuffle_rng.shuffle(order);
      order_epoch = epoch;
    }
    Tensor batch = gather_batch(corpus, order, step % steps_per_epoch, B);

    Rng aug_rng = master.split(kAugRoute).split(static_cast<uint64_t>(step));
    ViewSet views = make_views(batch, aug_rng, cfg.augment);

    Rng drop_rng = master.split(kDropRoute).split(static_cast<uint64_t>(step));
    Graph graph;
    LossReport report;
    bool stepped = false;
    {
      GraphScope scope(graph);
      TotalLossOutput out =
          total_loss(views, result.student, result.teacher, cfg.model,
                     cfg.augment, lcfg, sched.teacher_temp(step), drop_rng);
      report = out.report;
      if (std::isfinite(report.total)) {
        graph.backward(out.loss);
        stepped = opt.step(sched, step);
      }
    }
    opt.zero_grad();

    if (!std::isfinite(report.total) || !stepped) {
      ++result.skipped_steps;
      ++consecutive_bad;
      if (consecutive_bad >= 10) {
        if (!out_dir.empty()) {
          std::filesystem::create_directories(out_dir);
          std::ofstream dump(out_dir + "/diagnostic_dump.txt");
          dump << "aborted at step " << step << "\n"
               << "last total loss " << report.total << "\n"
               << "masked patches " << report.masked_patches << "\n"
               << "teacher entropy " << report.teacher_entropy << "\n";
        }
        throw std::runtime_error(
            "pretrain: loss was non-finite for 10 consecutive steps");
      }
    } else {
      consecutive_bad = 0;
    }

    ema_update(result.teacher, result.student, sched.ema_momentum(step));

    if (step % cfg.train.log_every == 0 || step + 1 == total_steps) {
      MetricsRow row{step,
                     sched.lr(step),
                     sched.weight_decay(step),
                     sched.ema_momentum(step),
                     report.teacher_temp,
                     report.dino_total,
                     report.ibot,
                     report.koleo,
                     report.total,
                     report.teacher_entropy};
      result.metrics.push_back(row);
      if (metrics_csv) write_metrics_row(*metrics_csv, row);
    }

    const bool last = step + 1 == total_steps;
    if (!out_dir.empty() &&
        ((step + 1) % cfg.train.checkpoint_every == 0 || last)) {
      std::filesystem::create_directories(out_dir);
      Checkpoint ckpt = make_checkpoint(cfg, result.student, result.teacher, opt,
                                        sched, step + 1);
      const std::string name =
          last ? "final.utck" : "step_" + std::to_string(step + 1) + ".utck";
      save_utck(ckpt, out_dir + "/" + name);
    }
  }
  return result;
}

}  // namespace tsdistill
