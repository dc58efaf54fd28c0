#include "storm/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "storm/bytes.hpp"

namespace storm {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'R', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_f32_vector(std::ostream& os, const std::vector<float>& v) {
  write_u64le(os, v.size());
  for (float x : v) write_f32le(os, x);
}

std::vector<float> read_f32_vector(std::istream& is) {
  const std::uint64_t n = read_u64le(is);
  // 256M entries ~ 1GB: anything larger is a corrupt length field.
  if (n > (1ull << 28)) throw std::runtime_error("checkpoint: absurd vector length");
  std::vector<float> v(n);
  for (auto& x : v) x = read_f32le(is);
  return v;
}

}  // namespace

std::string to_string(CheckpointRole role) {
  switch (role) {
    case CheckpointRole::kScoreRegen:
      return "score-regen";
    case CheckpointRole::kScoreRefine:
      return "score-refine";
    case CheckpointRole::kPredictor:
      return "predictor";
  }
  throw std::runtime_error("unknown checkpoint role");
}

CheckpointRole checkpoint_role_from_string(const std::string& s) {
  if (s == "score-regen") return CheckpointRole::kScoreRegen;
  if (s == "score-refine") return CheckpointRole::kScoreRefine;
  if (s == "predictor") return CheckpointRole::kPredictor;
  throw std::runtime_error("unknown checkpoint role: '" + s +
                           "' (expected score-regen|score-refine|predictor)");
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  // Write-then-rename so an interrupted save never leaves a torn file at
  // `path` (the rotating -last checkpoint is the only resume point).
  const std::string tmp = path + ".tmp";
  std::ofstream os(tmp, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + tmp);
  os.write(kMagic, sizeof(kMagic));
  write_u32le(os, kVersion);
  write_u32le(os, static_cast<std::uint32_t>(ckpt.role));
  write_u32le(os, static_cast<std::uint32_t>(ckpt.conditioning));
  write_f64le(os, ckpt.sde.gamma);
  write_f64le(os, ckpt.sde.sigma_min);
  write_f64le(os, ckpt.sde.sigma_max);
  write_f64le(os, ckpt.sde.t_max);
  write_f64le(os, ckpt.sde.t_eps);
  write_u32le(os, static_cast<std::uint32_t>(ckpt.base_channels));
  write_u32le(os, static_cast<std::uint32_t>(ckpt.emb_dim));
  write_u64le(os, ckpt.step);
  write_u64le(os, static_cast<std::uint64_t>(ckpt.adam_t));
  write_f32_vector(os, ckpt.params);
  write_f32_vector(os, ckpt.ema);
  write_f32_vector(os, ckpt.adam_m);
  write_f32_vector(os, ckpt.adam_v);
  os.close();
  if (!os) throw std::runtime_error("write failed: " + tmp);
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move " + tmp + " into place");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  const std::uint32_t version = read_u32le(is);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version) + " in " + path);
  Checkpoint ckpt;
  const std::uint32_t role = read_u32le(is);
  if (role > 2) throw std::runtime_error("checkpoint: bad role field");
  ckpt.role = static_cast<CheckpointRole>(role);
  const std::uint32_t cond = read_u32le(is);
  if (cond > 2) throw std::runtime_error("checkpoint: bad conditioning field");
  ckpt.conditioning = static_cast<ConditioningMode>(cond);
  ckpt.sde.gamma = read_f64le(is);
  ckpt.sde.sigma_min = read_f64le(is);
  ckpt.sde.sigma_max = read_f64le(is);
  ckpt.sde.t_max = read_f64le(is);
  ckpt.sde.t_eps = read_f64le(is);
  ckpt.base_channels = static_cast<int>(read_u32le(is));
  ckpt.emb_dim = static_cast<int>(read_u32le(is));
  ckpt.step = read_u64le(is);
  ckpt.adam_t = static_cast<std::int64_t>(read_u64le(is));
  ckpt.params = read_f32_vector(is);
  ckpt.ema = read_f32_vector(is);
  ckpt.adam_m = read_f32_vector(is);
  ckpt.adam_v = read_f32_vector(is);
  return ckpt;
}

}  // namespace storm
