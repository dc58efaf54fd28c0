#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "storm/score_model.hpp"
#include "storm/sde.hpp"

namespace storm {

// What the stored network is: tools refuse to load a checkpoint into a
// pipeline slot whose role does not match.
enum class CheckpointRole { kScoreRegen, kScoreRefine, kPredictor };

std::string to_string(CheckpointRole role);
CheckpointRole checkpoint_role_from_string(const std::string& s);

// Versioned little-endian container for one trained network: parameters, the
// EMA shadow, optimizer state, the diffusion configuration it was trained
// under, and enough architecture metadata to rebuild the net.
struct Checkpoint {
  CheckpointRole role = CheckpointRole::kScoreRegen;
  ConditioningMode conditioning = ConditioningMode::kBoth;  // score roles only
  SdeConfig sde;
  int base_channels = 8;
  int emb_dim = 16;  // 0 when the noise-conditioning pathway is absent
  std::uint64_t step = 0;
  std::vector<float> params;
  std::vector<float> ema;
  std::vector<float> adam_m;
  std::vector<float> adam_v;
  std::int64_t adam_t = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace storm
