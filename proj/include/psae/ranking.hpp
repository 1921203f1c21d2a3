// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Turning a trained SAE into a progressive coder: measure per-latent
// importance, sort latents by it, then keep only the first g.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "psae/data.hpp"
#include "psae/sae.hpp"

namespace psae {

struct FeatureStats {
  std::vector<double> mean_sq_act;  // E[z^2]
  std::vector<double> fire_freq;    // E[1{|z| > 0}]
  std::uint64_t n_samples = 0;

  std::size_t n() const noexcept { return mean_sq_act.size(); }
  bool operator==(const FeatureStats&) const = default;
};

/// Streaming sums over codes; samples are added in stream order so the
/// result does not depend on how the stream was cut into batches.
class StatsAccumulator {
 public:
  explicit StatsAccumulator(std::size_t n);

  void add(const SparseCodeBatch& codes);
  /// Associative merge of a partial accumulator over a disjoint shard.
  void merge(const StatsAccumulator& other);
  FeatureStats finalize() const;

  std::uint64_t n_samples() const noexcept { return n_samples_; }

 private:
  std::vector<double> sum_sq_;
  std::vector<std::uint64_t> fired_;
  std::uint64_t n_samples_ = 0;
};

/// One pass over the stream with full-width TopK(k) codes.
FeatureStats collect_stats(const SaeParams& params, BatchStream& stream, std::size_t k);

enum class RankCriterion : std::uint8_t { kMeanSq, kFreq };

RankCriterion parse_criterion(std::string_view name);
std::string_view criterion_name(RankCriterion c);

/// perm[i] = id of the i-th most important latent; ties keep original order.
std::vector<std::uint32_t> rank_features(const FeatureStats& stats, RankCriterion criterion);

struct PrunedSae {
  SaeParams params;  // latent size g
  std::size_t k = 0;
};

/// Permute by `perm`, then keep latents [0, g) with k = per_granularity_k(K, N, g).
PrunedSae prune_to_granularity(const SaeParams& params, std::span<const std::uint32_t> perm, std::size_t g,
                               std::size_t full_k);

/// Newline-delimited integers, one latent id per line.
void write_permutation(const std::filesystem::path& path, std::span<const std::uint32_t> perm);
std::vector<std::uint32_t> read_permutation(const std::filesystem::path& path);

}  // namespace psae
