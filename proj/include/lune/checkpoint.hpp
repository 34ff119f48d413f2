#pragma once

#include "lune/lora.hpp"
#include "lune/model.hpp"

#include <filesystem>

namespace lune {

// Binary layout, little-endian:
//   "LUNE" u32 version u32 kind
//   config: vocab d_model n_layers n_heads d_ff max_seq_len (u32 each) seed (u64)
//   u32 block count, then per block: u32 name length, name bytes,
//   u32 rank, rank x u32 dims, f32 payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_model(const std::filesystem::path& path, const TransformerModel& model);
TransformerModel load_model(const std::filesystem::path& path);

// Adapter files carry A/B for each target plus a small metadata block; the
// backbone config must match the one they were trained against.
void save_adapters(const std::filesystem::path& path, const AdaptedModel& model);
AdaptedModel load_adapters(const std::filesystem::path& path, const TransformerModel& base);

// Rounds every parameter through float32, matching a save/load round trip.
void round_to_f32(TransformerModel& model);

}  // namespace lune
