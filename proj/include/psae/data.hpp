// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic superposition activations, the SAEA shard format and batching.
//
// SAEA layout (little-endian):
//   offset 0   char[4]  magic "SAEA"
//   offset 4   u32      version (1)
//   offset 8   u64      n_samples
//   offset 16  u32      dim
//   offset 20  f32[n_samples * dim] row-major payload

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "psae/core_math.hpp"

namespace psae {

struct SuperpositionConfig {
  std::size_t n_true = 512;          // ground-truth features
  std::size_t d = 64;                // observed dimension, < n_true
  double p_active = 0.05;            // Bernoulli gate per feature and sample
  double importance_exponent = -0.6;  // feature scale = rank^exponent (rank 1-based)
  double noise_std = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ActivationShard {
  Matrix data;             // n_samples x dim
  std::string provenance;  // free-form config echo, not serialized in the binary format

  std::size_t n_samples() const noexcept { return data.rows(); }
  std::size_t dim() const noexcept { return data.cols(); }
};

/// Fixed feature directions (n_true x d, unit-norm rows) derived from cfg.seed.
Matrix superposition_dictionary(const SuperpositionConfig& cfg);

struct SuperpositionSample {
  ActivationShard shard;
  MatrixD latents;  // n_samples x n_true ground-truth activations (only if requested)
};

/// x = sum_r s_r * M_r + noise with s_r = Bernoulli(p) * U(0.5, 1.5) * r^exponent.
ActivationShard gen_superposition(const SuperpositionConfig& cfg, std::size_t n_samples);

/// Same stream as gen_superposition, additionally returning the latents s.
SuperpositionSample gen_superposition_with_latents(const SuperpositionConfig& cfg, std::size_t n_samples);

inline constexpr std::uint32_t kShardVersion = 1;
inline constexpr std::size_t kShardHeaderBytes = 20;

void write_shard(const std::filesystem::path& path, const ActivationShard& shard);
ActivationShard read_shard(const std::filesystem::path& path);

/// Headerless little-endian f32 rows of length `dim`.
ActivationShard read_raw_f32(const std::filesystem::path& path, std::size_t dim);

/// Copies rows [begin, end) into a new matrix.
Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end);

class BatchStream {
 public:
  virtual ~BatchStream() = default;
  /// Next batch, or nullopt when the stream is exhausted.
  virtual std::optional<Matrix> next() = 0;
};

/// One epoch over a shard in a seeded random order; the last batch may be short.
class BatchIterator : public BatchStream {
 public:
  BatchIterator(const Matrix& data, std::size_t batch_size, std::uint64_t shuffle_seed);

  std::optional<Matrix> next() override;
  const std::vector<std::size_t>& order() const noexcept { return order_; }

 private:
  const Matrix* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Endless sequence of epochs, reshuffled each epoch with seed + epoch.
class EpochStream : public BatchStream {
 public:
  EpochStream(const Matrix& data, std::size_t batch_size, std::uint64_t shuffle_seed);

  std::optional<Matrix> next() override;
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  const Matrix* data_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::optional<BatchIterator> current_;
};

/// Sequential batches in storage order, single pass.
class SequentialStream : public BatchStream {
 public:
  SequentialStream(const Matrix& data, std::size_t batch_size);
  std::optional<Matrix> next() override;

 private:
  const Matrix* data_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

}  // namespace psae
