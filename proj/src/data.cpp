// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include "psae/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "psae/binary_io.hpp"

namespace psae {
namespace binio {

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(fmt::format("write failed for {}", path.string()));
}

}  // namespace binio

namespace {

constexpr std::uint64_t kSampleStreamSalt = 0x9E3779B97F4A7C15ull;

}  // namespace

void SuperpositionConfig::validate() const {
  if (d == 0) throw ArgumentError("superposition: d must be positive");
  if (n_true <= d) throw ArgumentError(fmt::format("superposition: n_true={} must exceed d={}", n_true, d));
  if (!(p_active > 0.0 && p_active < 1.0)) throw ArgumentError("superposition: p_active must be in (0, 1)");
  if (!(importance_exponent < 0.0)) throw ArgumentError("superposition: importance_exponent must be < 0");
  if (!(noise_std >= 0.0)) throw ArgumentError("superposition: noise_std must be >= 0");
}

Matrix superposition_dictionary(const SuperpositionConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix dict(cfg.n_true, cfg.d);
  std::vector<double> row(cfg.d);
  for (std::size_t r = 0; r < cfg.n_true; ++r) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (auto& v : row) {
        v = normal(rng);
        norm2 += v * v;
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t c = 0; c < cfg.d; ++c) dict(r, c) = static_cast<float>(row[c] * inv);
  }
  return dict;
}

namespace {

SuperpositionSample generate(const SuperpositionConfig& cfg, std::size_t n_samples, bool keep_latents) {
  const Matrix dict = superposition_dictionary(cfg);
  std::vector<double> scale(cfg.n_true);
  for (std::size_t r = 0; r < cfg.n_true; ++r) {
    scale[r] = std::pow(static_cast<double>(r + 1), cfg.importance_exponent);
  }

  std::mt19937_64 rng(cfg.seed ^ kSampleStreamSalt);
  // Gaps between active features are geometric, which is equivalent to an
  // independent Bernoulli draw per feature.
  std::geometric_distribution<std::size_t> gap(cfg.p_active);
  std::uniform_real_distribution<double> magnitude(0.5, 1.5);
  std::normal_distribution<double> noise(0.0, cfg.noise_std > 0.0 ? cfg.noise_std : 1.0);

  SuperpositionSample out;
  out.shard.data = Matrix(n_samples, cfg.d);
  if (keep_latents) out.latents = MatrixD(n_samples, cfg.n_true);
  out.shard.provenance =
      fmt::format("superposition n_true={} d={} p_active={} exponent={} noise_std={} seed={}", cfg.n_true, cfg.d,
                  cfg.p_active, cfg.importance_exponent, cfg.noise_std, cfg.seed);

  std::vector<double> acc(cfg.d);
  for (std::size_t i = 0; i < n_samples; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    std::size_t r = gap(rng);
    while (r < cfg.n_true) {
      const double s = magnitude(rng) * scale[r];
      if (keep_latents) out.latents(i, r) = s;
      auto dir = dict.row(r);
      for (std::size_t c = 0; c < cfg.d; ++c) acc[c] += s * static_cast<double>(dir[c]);
      r += 1 + gap(rng);
    }
    if (cfg.noise_std > 0.0) {
      for (auto& a : acc) a += noise(rng);
    }
    auto dst = out.shard.data.row(i);
    for (std::size_t c = 0; c < cfg.d; ++c) dst[c] = static_cast<float>(acc[c]);
  }
  return out;
}

}  // namespace

ActivationShard gen_superposition(const SuperpositionConfig& cfg, std::size_t n_samples) {
  return generate(cfg, n_samples, false).shard;
}

SuperpositionSample gen_superposition_with_latents(const SuperpositionConfig& cfg, std::size_t n_samples) {
  return generate(cfg, n_samples, true);
}

void write_shard(const std::filesystem::path& path, const ActivationShard& shard) {
  if (shard.dim() > UINT32_MAX) throw ArgumentError("write_shard: dim does not fit in u32");
  binio::Writer w;
  w.bytes("SAEA");
  w.u32(kShardVersion);
  w.u64(shard.n_samples());
  w.u32(static_cast<std::uint32_t>(shard.dim()));
  w.f32s(shard.data.data());
  binio::write_file(path, w.buffer());
}

ActivationShard read_shard(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(bytes);
  if (r.remaining() < 4 || r.bytes(4, "magic") != "SAEA") throw FormatError("bad shard magic (expected SAEA)", 0);
  const auto version = r.u32("version");
  if (version != kShardVersion) {
    throw FormatError(fmt::format("unsupported shard version {} (expected {})", version, kShardVersion), 4);
  }
  const auto n = r.u64("n_samples");
  const auto dim = r.u32("dim");
  const std::uint64_t payload = r.remaining();
  if (dim == 0 || payload % (4ull * dim) != 0 || payload / (4ull * dim) != n) {
    throw FormatError(fmt::format("shard payload of {} bytes does not match header {} x {}", payload, n, dim),
                      r.offset());
  }
  ActivationShard shard;
  shard.data = Matrix(n, dim);
  r.f32s(shard.data.data(), "payload");
  if (!shard.data.all_finite()) throw FormatError("shard payload contains non-finite values", kShardHeaderBytes);
  shard.provenance = path.string();
  return shard;
}

ActivationShard read_raw_f32(const std::filesystem::path& path, std::size_t dim) {
  if (dim == 0) throw ArgumentError("read_raw_f32: dim must be positive");
  const auto bytes = binio::read_file(path);
  if (bytes.size() % (4 * dim) != 0) {
    throw FormatError(fmt::format("raw file of {} bytes is not a whole number of {}-float rows", bytes.size(), dim),
                      bytes.size());
  }
  binio::Reader r(bytes);
  ActivationShard shard;
  shard.data = Matrix(bytes.size() / (4 * dim), dim);
  r.f32s(shard.data.data(), "payload");
  if (!shard.data.all_finite()) throw FormatError("raw payload contains non-finite values", 0);
  shard.provenance = path.string();
  return shard;
}

Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.rows()) throw ArgumentError("slice_rows: bad range");
  Matrix out(end - begin, m.cols());
  std::copy(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()),
            m.data().begin() + static_cast<std::ptrdiff_t>(end * m.cols()), out.data().begin());
  return out;
}

BatchIterator::BatchIterator(const Matrix& data, std::size_t batch_size, std::uint64_t shuffle_seed)
    : data_(&data), batch_size_(batch_size), order_(data.rows()) {
  if (batch_size == 0) throw ArgumentError("batch size must be >= 1");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order_.begin(), order_.end(), rng);
}

std::optional<Matrix> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  Matrix batch(n, data_->cols());
  for (std::size_t i = 0; i < n; ++i) {
    auto src = data_->row(order_[cursor_ + i]);
    std::copy(src.begin(), src.end(), batch.row(i).begin());
  }
  cursor_ += n;
  return batch;
}

EpochStream::EpochStream(const Matrix& data, std::size_t batch_size, std::uint64_t shuffle_seed)
    : data_(&data), batch_size_(batch_size), seed_(shuffle_seed) {
  if (batch_size == 0) throw ArgumentError("batch size must be >= 1");
}

std::optional<Matrix> EpochStream::next() {
  if (data_->rows() == 0) return std::nullopt;
  if (!current_) current_.emplace(*data_, batch_size_, seed_ + epoch_);
  auto batch = current_->next();
  if (!batch) {
    ++epoch_;
    current_.emplace(*data_, batch_size_, seed_ + epoch_);
    batch = current_->next();
  }
  return batch;
}

SequentialStream::SequentialStream(const Matrix& data, std::size_t batch_size)
    : data_(&data), batch_size_(batch_size) {
  if (batch_size == 0) throw ArgumentError("batch size must be >= 1");
}

std::optional<Matrix> SequentialStream::next() {
  if (cursor_ >= data_->rows()) return std::nullopt;
  const std::size_t end = std::min(data_->rows(), cursor_ + batch_size_);
  Matrix batch = slice_rows(*data_, cursor_, end);
  cursor_ = end;
  return batch;
}

}  // namespace psae
