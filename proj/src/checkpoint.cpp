#include "tsdistill/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace tsdistill {

using nlohmann::json;

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

namespace {
void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}
uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
}  // namespace

void save_utck(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_utck: cannot open " + path);
  out.write("UTCK", 4);
  write_u32(out, 1);

  json meta;
  meta["step"] = ckpt.step;
  meta["applied_steps"] = ckpt.applied_steps;
  meta["rng_seed"] = ckpt.rng_seed;
  meta["config_hash"] = ckpt.config_hash;
  meta["config"] = ckpt.config_json;
  meta["schedule"] = {{"lr", ckpt.lr},
                      {"wd", ckpt.wd},
                      {"ema_m", ckpt.ema_m},
                      {"teacher_temp", ckpt.teacher_temp}};
  const std::string meta_text = meta.dump();
  write_u32(out, static_cast<uint32_t>(meta_text.size()));
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

  write_u32(out, static_cast<uint32_t>(ckpt.entries.size()));
  for (const auto& [name, tensor] : ckpt.entries) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(tensor.ndim()));
    for (int64_t d : tensor.shape()) write_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("save_utck: write failed for " + path);
}

Checkpoint load_utck(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_utck: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "UTCK", 4) != 0)
    throw std::runtime_error("load_utck: bad magic in " + path);
  const uint32_t version = read_u32(in);
  if (version != 1)
    throw std::runtime_error("load_utck: unsupported version " +
                             std::to_string(version));

  Checkpoint ckpt;
  const uint32_t meta_len = read_u32(in);
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), meta_len);
  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("load_utck: bad metadata: ") + e.what());
  }
  ckpt.step = meta.at("step").get<int64_t>();
  ckpt.applied_steps = meta.at("applied_steps").get<int64_t>();
  ckpt.rng_seed = meta.at("rng_seed").get<uint64_t>();
  ckpt.config_hash = meta.at("config_hash").get<std::string>();
  ckpt.config_json = meta.at("config").get<std::string>();
  ckpt.lr = meta.at("schedule").at("lr").get<double>();
  ckpt.wd = meta.at("schedule").at("wd").get<double>();
  ckpt.ema_m = meta.at("schedule").at("ema_m").get<double>();
  ckpt.teacher_temp = meta.at("schedule").at("teacher_temp").get<double>();

  const uint32_t n_entries = read_u32(in);
  ckpt.entries.reserve(n_entries);
  for (uint32_t i = 0; i < n_entries; ++i) {
    const uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t rank = read_u32(in);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d)
      shape[d] = static_cast<int64_t>(read_u32(in));
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    ckpt.entries.emplace_back(std::move(name), std::move(t));
  }
  if (!in) throw std::runtime_error("load_utck: truncated file " + path);
  return ckpt;
}

}  // namespace tsdistill
