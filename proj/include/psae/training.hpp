// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW training of TopK / Matryoshka SAEs with hand-written gradients.
//
// Gradients treat each TopK support as fixed: only selected latents receive
// gradient. The auxiliary loss reconstructs the full-width residual
// e = x - x_hat_N from the top k_aux dead-latent pre-activations and is
// normalized by the batch variance of e; e is treated as a constant target.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "psae/data.hpp"
#include "psae/matryoshka.hpp"
#include "psae/sae.hpp"

namespace psae {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  std::size_t batch_size = 256;
  std::uint64_t n_tokens = 2'000'000;
  std::uint64_t dead_window = 100'000;
  std::uint64_t seed = 0;
  bool init_center = true;  // set b_center to the first batch mean

  void validate() const;
};

struct Gradients {
  MatrixD w_enc;  // D x N
  MatrixD w_dec;  // N x D
  std::vector<double> b_center;
  std::vector<double> b_enc;

  static Gradients zeros_like(const SaeParams& params);
};

struct GradResult {
  Gradients grads;
  MatryoshkaLoss loss;
  SparseCodeBatch full_codes;  // full-width TopK codes of the batch
};

/// Loss and exact gradients for one batch under `schedule` (single-size
/// schedule = plain TopK SAE).
GradResult compute_grads(const SaeParams& params, const Matrix& batch, const GranularitySchedule& schedule,
                         std::span<const std::uint8_t> dead_mask, const SaeConfig& cfg);

struct AdamWState {
  std::uint64_t t = 0;
  std::vector<double> m_w_enc, v_w_enc;
  std::vector<double> m_w_dec, v_w_dec;
  std::vector<double> m_b_center, v_b_center;
  std::vector<double> m_b_enc, v_b_enc;

  static AdamWState for_params(const SaeParams& params);
};

/// One decoupled-weight-decay Adam update of a flat parameter group at step t (>= 1).
void adamw_update(std::span<float> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::uint64_t t, const TrainConfig& cfg);

/// Advances state.t and updates every parameter group; renormalizes decoder
/// rows afterwards when `unit_norm_decoder` is set.
void adamw_step(AdamWState& state, SaeParams& params, const Gradients& grads, const TrainConfig& cfg,
                bool unit_norm_decoder);

class DeadFeatureTracker {
 public:
  DeadFeatureTracker(std::size_t n, std::uint64_t window);

  /// Resets counters of latents active in `codes`, adds the batch size to the rest.
  const DeadMask& update(const SparseCodeBatch& codes);

  const DeadMask& mask() const noexcept { return mask_; }
  std::span<const std::uint64_t> counts() const noexcept { return counts_; }
  std::size_t n_dead() const;

 private:
  std::vector<std::uint64_t> counts_;
  std::uint64_t window_;
  DeadMask mask_;
};

struct StepLog {
  std::uint64_t step = 0;
  std::uint64_t samples = 0;
  std::size_t sampled_m = 0;  // 0 unless the schedule is sampled
  double total = 0.0;
  double recon = 0.0;  // full-width reconstruction MSE
  double aux = 0.0;
  std::size_t n_dead = 0;
};

struct TrainResult {
  SaeParams params;
  std::vector<StepLog> log;
  AdamWState optimizer;
};

using StepCallback = std::function<void(const StepLog&)>;

/// Streams batches until cfg.n_tokens samples have been consumed (the final
/// batch is truncated to fit). Deterministic given params, data order and seed.
TrainResult train(SaeParams params, BatchStream& stream, const GranularitySchedule& schedule,
                  const SaeConfig& sae_cfg, const TrainConfig& cfg, const StepCallback& on_step = {});

enum class Arch : std::uint8_t { kTopK, kMatryoshka, kMatryoshkaSampled };

Arch parse_arch(std::string_view name);
std::string_view arch_name(Arch arch);

/// Schedule for an architecture: TopK uses {N}; Matryoshka uses `sizes`;
/// sampled Matryoshka samples m ~ U{1..N} each step.
GranularitySchedule make_schedule(Arch arch, std::span<const std::size_t> sizes, std::size_t full_k);

Arch arch_of(const GranularitySchedule& schedule);

}  // namespace psae
