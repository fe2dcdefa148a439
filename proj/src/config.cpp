#include "tsdistill/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace tsdistill {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& path,
                const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config: " + path + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("config: unknown key " + path + "." + it.key());
}

template <typename T>
void get(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad type for " + path + "." + key);
  }
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse failure: ") + e.what());
  }
  check_keys(j, "$", {"model", "augment", "loss", "schedule", "optim", "train", "eval"});
  RunConfig cfg;

  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model",
               {"dim", "layers", "heads", "head_dim", "mlp_hidden", "dropout",
                "patch_window", "scalar_dim", "conv_kernel", "scalar_tolerance",
                "head_hidden", "bottleneck", "prototypes"});
    get(m, "dim", cfg.model.dim, "model");
    get(m, "layers", cfg.model.layers, "model");
    get(m, "heads", cfg.model.heads, "model");
    get(m, "head_dim", cfg.model.head_dim, "model");
    get(m, "mlp_hidden", cfg.model.mlp_hidden, "model");
    get(m, "dropout", cfg.model.dropout, "model");
    get(m, "patch_window", cfg.model.patch_window, "model");
    get(m, "scalar_dim", cfg.model.scalar_dim, "model");
    get(m, "conv_kernel", cfg.model.conv_kernel, "model");
    get(m, "scalar_tolerance", cfg.model.scalar_tolerance, "model");
    get(m, "head_hidden", cfg.model.head_hidden, "model");
    get(m, "bottleneck", cfg.model.bottleneck, "model");
    get(m, "prototypes", cfg.model.prototypes, "model");
  }
  if (j.contains("augment")) {
    const json& a = j["augment"];
    check_keys(a, "augment",
               {"n_global", "n_local", "global_len", "local_len",
                "global_frac_min", "global_frac_max", "local_frac_min",
                "local_frac_max", "jitter_sigma_scale", "local_jitter_prob",
                "patches", "mask_prob", "mask_ratio_min", "mask_ratio_max",
                "mask_ratio_steps", "mask_ratio_uniform"});
    get(a, "n_global", cfg.augment.n_global, "augment");
    get(a, "n_local", cfg.augment.n_local, "augment");
    get(a, "global_len", cfg.augment.global_len, "augment");
    get(a, "local_len", cfg.augment.local_len, "augment");
    get(a, "global_frac_min", cfg.augment.global_frac_min, "augment");
    get(a, "global_frac_max", cfg.augment.global_frac_max, "augment");
    get(a, "local_frac_min", cfg.augment.local_frac_min, "augment");
    get(a, "local_frac_max", cfg.augment.local_frac_max, "augment");
    get(a, "jitter_sigma_scale", cfg.augment.jitter_sigma_scale, "augment");
    get(a, "local_jitter_prob", cfg.augment.local_jitter_prob, "augment");
    get(a, "patches", cfg.augment.patches, "augment");
    get(a, "mask_prob", cfg.augment.mask_prob, "augment");
    get(a, "mask_ratio_min", cfg.augment.mask_ratio_min, "augment");
    get(a, "mask_ratio_max", cfg.augment.mask_ratio_max, "augment");
    get(a, "mask_ratio_steps", cfg.augment.mask_ratio_steps, "augment");
    get(a, "mask_ratio_uniform", cfg.augment.mask_ratio_uniform, "augment");
  }
  if (j.contains("loss")) {
    const json& l = j["loss"];
    check_keys(l, "loss",
               {"lambda_dino", "lambda_ibot", "lambda_koleo", "student_temp",
                "sinkhorn_iters", "ibot_sign_positive"});
    get(l, "lambda_dino", cfg.loss.lambda_dino, "loss");
    get(l, "lambda_ibot", cfg.loss.lambda_ibot, "loss");
    get(l, "lambda_koleo", cfg.loss.lambda_koleo, "loss");
    get(l, "student_temp", cfg.loss.student_temp, "loss");
    get(l, "sinkhorn_iters", cfg.loss.sinkhorn_iters, "loss");
    get(l, "ibot_sign_positive", cfg.loss.ibot_sign_positive, "loss");
  }
  if (j.contains("schedule")) {
    const json& s = j["schedule"];
    check_keys(s, "schedule",
               {"base_lr", "min_lr", "warmup_epochs", "wd_start", "wd_end",
                "ema_start", "ema_end", "teacher_temp_start", "teacher_temp_end",
                "teacher_temp_warmup_epochs", "freeze_proto_epochs"});
    get(s, "base_lr", cfg.schedule.base_lr, "schedule");
    get(s, "min_lr", cfg.schedule.min_lr, "schedule");
    get(s, "warmup_epochs", cfg.schedule.warmup_epochs, "schedule");
    get(s, "wd_start", cfg.schedule.wd_start, "schedule");
    get(s, "wd_end", cfg.schedule.wd_end, "schedule");
    get(s, "ema_start", cfg.schedule.ema_start, "schedule");
    get(s, "ema_end", cfg.schedule.ema_end, "schedule");
    get(s, "teacher_temp_start", cfg.schedule.teacher_temp_start, "schedule");
    get(s, "teacher_temp_end", cfg.schedule.teacher_temp_end, "schedule");
    get(s, "teacher_temp_warmup_epochs", cfg.schedule.teacher_temp_warmup_epochs,
        "schedule");
    get(s, "freeze_proto_epochs", cfg.schedule.freeze_proto_epochs, "schedule");
  }
  if (j.contains("optim")) {
    const json& o = j["optim"];
    check_keys(o, "optim",
               {"beta1", "beta2", "eps", "clip_norm", "layer_decay",
                "tokenizer_lr_mult"});
    get(o, "beta1", cfg.optim.beta1, "optim");
    get(o, "beta2", cfg.optim.beta2, "optim");
    get(o, "eps", cfg.optim.eps, "optim");
    get(o, "clip_norm", cfg.optim.clip_norm, "optim");
    get(o, "layer_decay", cfg.optim.layer_decay, "optim");
    get(o, "tokenizer_lr_mult", cfg.optim.tokenizer_lr_mult, "optim");
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, "train",
               {"batch_size", "epochs", "checkpoint_every", "log_every", "seed"});
    get(t, "batch_size", cfg.train.batch_size, "train");
    get(t, "epochs", cfg.train.epochs, "train");
    get(t, "checkpoint_every", cfg.train.checkpoint_every, "train");
    get(t, "log_every", cfg.train.log_every, "train");
    get(t, "seed", cfg.train.seed, "train");
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    check_keys(e, "eval",
               {"probe_epochs", "probe_lr", "probe_wd", "probe_batch",
                "finetune_epochs", "finetune_wd", "finetune_lr_grid",
                "finetune_val_fraction", "seeds", "best_epoch_on_test",
                "embed_len"});
    get(e, "probe_epochs", cfg.eval.probe_epochs, "eval");
    get(e, "probe_lr", cfg.eval.probe_lr, "eval");
    get(e, "probe_wd", cfg.eval.probe_wd, "eval");
    get(e, "probe_batch", cfg.eval.probe_batch, "eval");
    get(e, "finetune_epochs", cfg.eval.finetune_epochs, "eval");
    get(e, "finetune_wd", cfg.eval.finetune_wd, "eval");
    get(e, "finetune_lr_grid", cfg.eval.finetune_lr_grid, "eval");
    get(e, "finetune_val_fraction", cfg.eval.finetune_val_fraction, "eval");
    get(e, "seeds", cfg.eval.seeds, "eval");
    get(e, "best_epoch_on_test", cfg.eval.best_epoch_on_test, "eval");
    get(e, "embed_len", cfg.eval.embed_len, "eval");
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string RunConfig::to_json() const {
  json j;
  j["model"] = {{"dim", model.dim},
                {"layers", model.layers},
                {"heads", model.heads},
                {"head_dim", model.head_dim},
                {"mlp_hidden", model.mlp_hidden},
                {"dropout", model.dropout},
                {"patch_window", model.patch_window},
                {"scalar_dim", model.scalar_dim},
                {"conv_kernel", model.conv_kernel},
                {"scalar_tolerance", model.scalar_tolerance},
                {"head_hidden", model.head_hidden},
                {"bottleneck", model.bottleneck},
                {"prototypes", model.prototypes}};
  j["augment"] = {{"n_global", augment.n_global},
                  {"n_local", augment.n_local},
                  {"global_len", augment.global_len},
                  {"local_len", augment.local_len},
                  {"global_frac_min", augment.global_frac_min},
                  {"global_frac_max", augment.global_frac_max},
                  {"local_frac_min", augment.local_frac_min},
                  {"local_frac_max", augment.local_frac_max},
                  {"jitter_sigma_scale", augment.jitter_sigma_scale},
                  {"local_jitter_prob", augment.local_jitter_prob},
                  {"patches", augment.patches},
                  {"mask_prob", augment.mask_prob},
                  {"mask_ratio_min", augment.mask_ratio_min},
                  {"mask_ratio_max", augment.mask_ratio_max},
                  {"mask_ratio_steps", augment.mask_ratio_steps},
                  {"mask_ratio_uniform", augment.mask_ratio_uniform}};
  j["loss"] = {{"lambda_dino", loss.lambda_dino},
               {"lambda_ibot", loss.lambda_ibot},
               {"lambda_koleo", loss.lambda_koleo},
               {"student_temp", loss.student_temp},
               {"sinkhorn_iters", loss.sinkhorn_iters},
               {"ibot_sign_positive", loss.ibot_sign_positive}};
  j["schedule"] = {{"base_lr", schedule.base_lr},
                   {"min_lr", schedule.min_lr},
                   {"warmup_epochs", schedule.warmup_epochs},
                   {"wd_start", schedule.wd_start},
                   {"wd_end", schedule.wd_end},
                   {"ema_start", schedule.ema_start},
                   {"ema_end", schedule.ema_end},
                   {"teacher_temp_start", schedule.teacher_temp_start},
                   {"teacher_temp_end", schedule.teacher_temp_end},
                   {"teacher_temp_warmup_epochs", schedule.teacher_temp_warmup_epochs},
                   {"freeze_proto_epochs", schedule.freeze_proto_epochs}};
  j["optim"] = {{"beta1", optim.beta1},
                {"beta2", optim.beta2},
                {"eps", optim.eps},
                {"clip_norm", optim.clip_norm},
                {"layer_decay", optim.layer_decay},
                {"tokenizer_lr_mult", optim.tokenizer_lr_mult}};
  j["train"] = {{"batch_size", train.batch_size},
                {"epochs", train.epochs},
                {"checkpoint_every", train.checkpoint_every},
                {"log_every", train.log_every},
                {"seed", train.seed}};
  j["eval"] = {{"probe_epochs", eval.probe_epochs},
               {"probe_lr", eval.probe_lr},
               {"probe_wd", eval.probe_wd},
               {"probe_batch", eval.probe_batch},
               {"finetune_epochs", eval.finetune_epochs},
               {"finetune_wd", eval.finetune_wd},
               {"finetune_lr_grid", eval.finetune_lr_grid},
               {"finetune_val_fraction", eval.finetune_val_fraction},
               {"seeds", eval.seeds},
               {"best_epoch_on_test", eval.best_epoch_on_test},
               {"embed_len", eval.embed_len}};
  return j.dump(2);
}

uint64_t RunConfig::hash() const {
  uint64_t h = 1469598103934665603ULL;
  for (char c : to_json()) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ULL;
  }
  return h;
}

std::string RunConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash()));
  return buf;
}

void RunConfig::validate() const {
  if (model.dim % 2 != 0)
    throw ConfigError("config: model.dim must be even for the positional encodings");
  if (model.dropout < 0.0f || model.dropout >= 1.0f)
    throw ConfigError("config: model.dropout must be in [0, 1)");
  if (augment.global_len % model.patch_window != 0 ||
      augment.local_len % model.patch_window != 0)
    throw ConfigError("config: crop lengths must be multiples of the patch window");
  if (model.patches_for(augment.global_len) != augment.patches)
    throw ConfigError("config: augment.patches must equal global_len / patch_window");
  if (loss.student_temp <= 0.0 || schedule.teacher_temp_start <= 0.0 ||
      schedule.teacher_temp_end <= 0.0)
    throw ConfigError("config: temperatures must be positive");
  if (train.batch_size < 2)
    throw ConfigError("config: train.batch_size must be at least 2");
  if (train.epochs <= 0.0) throw ConfigError("config: train.epochs must be positive");
  if (eval.embed_len % model.patch_window != 0)
    throw ConfigError("config: eval.embed_len must be a multiple of the patch window");
}

}  // namespace tsdistill
