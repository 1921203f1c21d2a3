// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0
//
// PSAE checkpoint, little-endian:
//
//   char[4] "PSAE" | u32 version (1)
//   config block:
//     u32 D | u32 N | u32 K | u8 schedule mode (0 fixed, 1 sampled)
//     u32 flags (bit 0: unit-norm decoder) | f64 aux_scale | f64 sparsity_coeff
//     u32 n_sizes | u32 sizes[n_sizes] | f64 weights[n_sizes]
//   u32 n_tensors, then per tensor:
//     u32 name_len | name bytes | u32 rank | u64 dims[rank] | f32 data[prod(dims)]
//     (tensors: w_enc [D,N], w_dec [N,D], b_center [D], b_enc [N])
//   u8 has_stats, and if 1:
//     u64 n_samples | u32 N | f64 mean_sq_act[N] | f64 fire_freq[N]
//
// Nothing may follow the last block.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "psae/matryoshka.hpp"
#include "psae/ranking.hpp"
#include "psae/sae.hpp"

namespace psae {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  SaeConfig config;
  GranularitySchedule schedule;
  SaeParams params;
  std::optional<FeatureStats> stats;

  bool operator==(const Checkpoint&) const = default;
};

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const char> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace psae
