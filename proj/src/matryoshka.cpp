// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include "psae/matryoshka.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace psae {

GranularitySchedule GranularitySchedule::fixed(std::vector<std::size_t> sizes, std::size_t full_k) {
  GranularitySchedule s;
  s.weights.assign(sizes.size(), 1.0);
  s.sizes = std::move(sizes);
  s.full_k = full_k;
  return s;
}

GranularitySchedule GranularitySchedule::single(std::size_t n, std::size_t full_k) { return fixed({n}, full_k); }

GranularitySchedule GranularitySchedule::sampled(std::size_t n, std::size_t full_k) {
  GranularitySchedule s = fixed({n}, full_k);
  s.mode = ScheduleMode::kSampled;
  return s;
}

void GranularitySchedule::validate(std::size_t n_latent) const {
  if (sizes.empty()) throw ArgumentError("schedule: no granularities");
  if (weights.size() != sizes.size()) throw ArgumentError("schedule: one weight per granularity required");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw ArgumentError("schedule: granularity must be positive");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ArgumentError("schedule: sizes must be strictly ascending");
  }
  if (sizes.back() != n_latent) {
    throw ArgumentError(fmt::format("schedule: largest size {} != N={}", sizes.back(), n_latent));
  }
  bool any_positive = false;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ArgumentError("schedule: weights must be finite and >= 0");
    any_positive = any_positive || w > 0.0;
  }
  if (!any_positive) throw ArgumentError("schedule: at least one weight must be positive");
  if (full_k > n_latent) throw ArgumentError(fmt::format("schedule: K={} exceeds N={}", full_k, n_latent));
}

std::size_t per_granularity_k(std::size_t full_k, std::size_t n, std::size_t m) {
  if (n == 0 || m == 0 || m > n) throw ArgumentError(fmt::format("per_granularity_k: need 1 <= m={} <= N={}", m, n));
  // Half-up rounding of K*m/N in integer arithmetic.
  const std::size_t k = (2 * full_k * m + n) / (2 * n);
  return std::clamp<std::size_t>(k, 1, m);
}

MatryoshkaOutput matryoshka_forward(const SaeParams& params, const Matrix& x, const GranularitySchedule& schedule) {
  const std::size_t n = params.n();
  schedule.validate(n);
  MatryoshkaOutput out;
  out.pre = preactivations(params, x, n);
  out.levels.reserve(schedule.sizes.size());
  for (std::size_t m : schedule.sizes) {
    GranularityOutput level;
    level.size = m;
    level.k = m == n ? schedule.full_k : per_granularity_k(schedule.full_k, n, m);
    level.codes = topk_codes(out.pre, m, level.k);
    level.x_hat = decode(params, level.codes, m);
    out.levels.push_back(std::move(level));
  }
  return out;
}

MatryoshkaLoss matryoshka_loss(const SaeParams& params, const Matrix& x, const MatryoshkaOutput& out,
                               std::span<const double> weights, std::span<const std::uint8_t> dead_mask,
                               const SaeConfig& cfg) {
  if (weights.size() != out.levels.size()) {
    throw ArgumentError(fmt::format("matryoshka_loss: {} weights for {} granularities", weights.size(),
                                    out.levels.size()));
  }
  if (out.levels.empty() || out.levels.back().size != params.n()) {
    throw ArgumentError("matryoshka_loss: outputs must include the full granularity N");
  }
  if (dead_mask.size() != params.n()) throw ArgumentError("matryoshka_loss: dead mask length != N");

  MatryoshkaLoss loss;
  for (std::size_t i = 0; i < out.levels.size(); ++i) {
    const double r = recon_mse(x, out.levels[i].x_hat);
    loss.recon.push_back(r);
    loss.total += weights[i] * r;
  }
  const auto& full = out.levels.back();
  if (cfg.sparsity_coeff != 0.0 && x.rows() > 0) {
    double l1 = 0.0;
    for (std::size_t i = 0; i < full.codes.n_samples(); ++i)
      for (float v : full.codes.values(i)) l1 += std::abs(static_cast<double>(v));
    loss.total += cfg.sparsity_coeff * l1 / static_cast<double>(x.rows());
  }
  if (aux_k(params.n(), dead_mask) > 0) {
    MatrixD residual(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
      residual.data()[i] = static_cast<double>(x.data()[i]) - static_cast<double>(full.x_hat.data()[i]);
    }
    loss.aux = aux_loss(params, out.pre, residual, dead_mask);
    loss.total += cfg.aux_scale * loss.aux;
  }
  return loss;
}

SampledGranularity sample_granularity(std::mt19937_64& rng, std::size_t n, std::size_t full_k) {
  if (n == 0) throw ArgumentError("sample_granularity: N must be >= 1");
  std::uniform_int_distribution<std::size_t> dist(1, n);
  SampledGranularity s;
  s.m = dist(rng);
  s.k = per_granularity_k(full_k, n, s.m);
  return s;
}

GranularitySchedule step_schedule(const GranularitySchedule& schedule, std::mt19937_64& rng) {
  if (schedule.mode == ScheduleMode::kFixed) return schedule;
  const std::size_t n = schedule.n();
  const auto draw = sample_granularity(rng, n, schedule.full_k);
  if (draw.m == n) return GranularitySchedule::single(n, schedule.full_k);
  return GranularitySchedule::fixed({draw.m, n}, schedule.full_k);
}

}  // namespace psae
