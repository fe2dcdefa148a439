#include "tsdistill/model.hpp"

#include <cstring>
#include <stdexcept>

namespace tsdistill {

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
  ModelParams p;
  p.tokenizer = TokenizerParams::init(cfg, rng);
  p.encoder = EncoderParams::init(cfg, rng);
  p.dino_head = HeadParams::init(cfg, rng);
  p.ibot_head = HeadParams::init(cfg, rng);
  return p;
}

NamedTensors ModelParams::named() const {
  NamedTensors out;
  tokenizer.named("tok", out);
  encoder.named("enc", out);
  dino_head.named("dino_head", out);
  ibot_head.named("ibot_head", out);
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = *this;  // handle copies alias this tree
  auto detach = [](Tensor& t) { t = t.clone(); };
  copy.tokenizer.visit(detach);
  copy.encoder.visit(detach);
  copy.dino_head.visit(detach);
  copy.ibot_head.visit(detach);
  return copy;
}

void ModelParams::set_requires_grad(bool v) {
  for (auto& [name, t] : named()) {
    (void)name;
    Tensor tt = t;
    tt.set_requires_grad(v);
  }
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : named()) {
    (void)name;
    Tensor tt = t;
    tt.zero_grad();
  }
}

void ema_update(ModelParams& teacher, const ModelParams& student, double m) {
  NamedTensors t = teacher.named();
  NamedTensors s = student.named();
  if (t.size() != s.size()) throw std::runtime_error("ema_update: tree mismatch");
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i].first != s[i].first || t[i].second.size() != s[i].second.size())
      throw std::runtime_error("ema_update: tree mismatch at " + t[i].first);
    float* td = t[i].second.data();
    const float* sd = s[i].second.data();
    const int64_t n = t[i].second.size();
    for (int64_t j = 0; j < n; ++j)
      td[j] = static_cast<float>(m * td[j] + (1.0 - m) * sd[j]);
  }
}

uint64_t param_hash(const ModelParams& params) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (const auto& [name, t] : params.named()) {
    for (char c : name) {
      h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
      h *= 1099511628211ULL;
    }
    const auto& buf = t.buf();
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(buf.data());
    for (size_t i = 0; i < buf.size() * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace tsdistill
