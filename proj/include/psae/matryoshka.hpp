// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Nested (Matryoshka) forward pass and loss. All granularities share one
// encoder/decoder; the full-width pre-activation is computed once and each
// prefix applies its own TopK with k scaled to keep k/m = K/N.

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "psae/sae.hpp"

namespace psae {

enum class ScheduleMode : std::uint8_t { kFixed = 0, kSampled = 1 };

struct GranularitySchedule {
  std::vector<std::size_t> sizes;  // strictly ascending, last == N
  std::vector<double> weights;     // c_m, one per size
  ScheduleMode mode = ScheduleMode::kFixed;
  std::size_t full_k = 0;

  /// Fixed nested sizes with unit weights.
  static GranularitySchedule fixed(std::vector<std::size_t> sizes, std::size_t full_k);
  /// Plain SAE: a single granularity N.
  static GranularitySchedule single(std::size_t n, std::size_t full_k);
  /// Uniformly sampled granularity per step, always paired with N.
  static GranularitySchedule sampled(std::size_t n, std::size_t full_k);

  std::size_t n() const { return sizes.empty() ? 0 : sizes.back(); }

  /// Throws ArgumentError if the schedule is malformed or does not end at `n`.
  void validate(std::size_t n) const;
  bool operator==(const GranularitySchedule&) const = default;
};

/// round_half_up(K * m / N), clamped to [1, m].
std::size_t per_granularity_k(std::size_t full_k, std::size_t n, std::size_t m);

struct GranularityOutput {
  std::size_t size = 0;
  std::size_t k = 0;
  SparseCodeBatch codes;
  Matrix x_hat;
};

struct MatryoshkaOutput {
  MatrixD pre;  // batch x N, computed once
  std::vector<GranularityOutput> levels;
};

MatryoshkaOutput matryoshka_forward(const SaeParams& params, const Matrix& x, const GranularitySchedule& schedule);

struct MatryoshkaLoss {
  double total = 0.0;
  std::vector<double> recon;  // per granularity, unweighted
  double aux = 0.0;
};

/// total = sum_m c_m * mean||x - x_hat_m||^2 + lambda * S(z_N) + aux_scale * aux(z_N).
MatryoshkaLoss matryoshka_loss(const SaeParams& params, const Matrix& x, const MatryoshkaOutput& out,
                               std::span<const double> weights, std::span<const std::uint8_t> dead_mask,
                               const SaeConfig& cfg);

struct SampledGranularity {
  std::size_t m = 0;
  std::size_t k = 0;
};

/// m ~ U{1..N} (discrete), k = per_granularity_k(K, N, m).
SampledGranularity sample_granularity(std::mt19937_64& rng, std::size_t n, std::size_t full_k);

/// The schedule used for one training step. Fixed mode returns `schedule`;
/// sampled mode draws m and returns {m, N} (just {N} if m == N).
GranularitySchedule step_schedule(const GranularitySchedule& schedule, std::mt19937_64& rng);

}  // namespace psae
