// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0
//
// TopK sparse autoencoder:
//   pre   = (x - b_center) . w_enc[:, :g] + b_enc[:g]
//   z     = topk(pre, k)
//   x_hat = z . w_dec[:g, :] + b_center
// Every routine takes a granularity g so the same code serves full-width and
// prefix (progressive) models.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "psae/core_math.hpp"

namespace psae {

struct SaeConfig {
  std::size_t n = 0;  // latent size
  std::size_t d = 0;  // input dimension
  std::size_t k = 0;  // active latents at full width
  bool unit_norm_decoder = true;
  double aux_scale = 1.0 / 32.0;
  double sparsity_coeff = 0.0;  // lambda; TopK fixes ||z||_0 so this defaults to 0

  void validate() const;
  bool operator==(const SaeConfig&) const = default;
};

struct SaeParams {
  Matrix w_enc;                 // D x N
  Matrix w_dec;                 // N x D
  std::vector<float> b_center;  // D
  std::vector<float> b_enc;     // N

  std::size_t n() const noexcept { return w_dec.rows(); }
  std::size_t d() const noexcept { return w_dec.cols(); }

  /// Throws ArgumentError on inconsistent shapes or non-finite entries.
  void validate() const;
  bool operator==(const SaeParams&) const = default;
};

/// Feature mask, 1 = dead. One byte per latent.
using DeadMask = std::vector<std::uint8_t>;

struct LossTerms {
  double total = 0.0;
  double recon = 0.0;
  double aux = 0.0;
};

/// Random unit-norm decoder rows, w_enc = w_dec^T, zero biases.
SaeParams init_params(const SaeConfig& cfg, std::uint64_t seed);

/// Pre-activations for the first g latents, batch x g, accumulated in double.
/// Entry (i, j) is computed identically for every g > j.
MatrixD preactivations(const SaeParams& params, const Matrix& x, std::size_t g);

/// Number of preactivations() calls made by this process (instrumentation).
std::uint64_t preactivation_call_count();

/// TopK over the first `width` columns of each row of `pre`.
SparseCodeBatch topk_codes(const MatrixD& pre, std::size_t width, std::size_t k);

SparseCodeBatch encode(const SaeParams& params, const Matrix& x, std::size_t k, std::size_t g);

Matrix decode(const SaeParams& params, const SparseCodeBatch& codes, std::size_t g);

/// Normalized MSE of reconstructing `residual` from the top-k_aux dead-feature
/// pre-activations, k_aux = min(N/2, n_dead). Zero when nothing is dead.
double aux_loss(const SaeParams& params, const MatrixD& full_pre, const MatrixD& residual,
                std::span<const std::uint8_t> dead_mask);

/// k_aux = min(N/2, n_dead).
std::size_t aux_k(std::size_t n, std::span<const std::uint8_t> dead_mask);

/// Mean over the batch of ||x - x_hat||^2.
double recon_mse(const Matrix& x, const Matrix& x_hat);

/// total = recon + lambda * mean ||z||_1 + aux_scale * aux.
LossTerms sae_loss(const SaeParams& params, const Matrix& x, const SparseCodeBatch& codes,
                   const Matrix& x_hat, std::span<const std::uint8_t> dead_mask, const SaeConfig& cfg);

/// Throws ArgumentError unless perm is a bijection on {0..n-1}.
void check_permutation(std::span<const std::uint32_t> perm, std::size_t n);

std::vector<std::uint32_t> invert_permutation(std::span<const std::uint32_t> perm);

/// New latent i is old latent perm[i]: reorders w_enc columns, b_enc and w_dec rows.
SaeParams apply_permutation(const SaeParams& params, std::span<const std::uint32_t> perm);

/// Rescales every decoder row to unit L2 norm (zero rows are left alone).
void normalize_decoder_rows(SaeParams& params);

}  // namespace psae
