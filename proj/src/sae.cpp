// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include "psae/sae.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "psae/parallel.hpp"

namespace psae {
namespace {

std::atomic<std::uint64_t> g_preactivation_calls{0};

constexpr std::size_t kSampleBlock = 4;

}  // namespace

void SaeConfig::validate() const {
  if (n == 0 || d == 0) throw ArgumentError("SaeConfig: n and d must be positive");
  if (k > n) throw ArgumentError(fmt::format("SaeConfig: k={} exceeds n={}", k, n));
  if (!(aux_scale >= 0.0)) throw ArgumentError("SaeConfig: aux_scale must be >= 0");
  if (!(sparsity_coeff >= 0.0)) throw ArgumentError("SaeConfig: sparsity_coeff must be >= 0");
}

void SaeParams::validate() const {
  const std::size_t nn = n();
  const std::size_t dd = d();
  if (w_enc.rows() != dd || w_enc.cols() != nn) {
    throw ArgumentError(fmt::format("SaeParams: w_enc is {}x{}, expected {}x{}", w_enc.rows(), w_enc.cols(), dd, nn));
  }
  if (b_center.size() != dd) throw ArgumentError("SaeParams: b_center length != D");
  if (b_enc.size() != nn) throw ArgumentError("SaeParams: b_enc length != N");
  auto finite = [](std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float f) { return std::isfinite(f); });
  };
  if (!w_enc.all_finite() || !w_dec.all_finite() || !finite(b_center) || !finite(b_enc)) {
    throw ArgumentError("SaeParams: non-finite entry");
  }
}

// Kept apart from the generator's dictionary stream, which also starts from the raw seed.
constexpr std::uint64_t kInitStreamSalt = 0xBF58476D1CE4E5B9ull;

SaeParams init_params(const SaeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed ^ kInitStreamSalt);
  std::normal_distribution<double> normal(0.0, 1.0);
  SaeParams p;
  p.w_dec = Matrix(cfg.n, cfg.d);
  p.w_enc = Matrix(cfg.d, cfg.n);
  p.b_center.assign(cfg.d, 0.0f);
  p.b_enc.assign(cfg.n, 0.0f);
  std::vector<double> row(cfg.d);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (auto& v : row) {
        v = normal(rng);
        norm2 += v * v;
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t j = 0; j < cfg.d; ++j) {
      const auto v = static_cast<float>(row[j] * inv);
      p.w_dec(i, j) = v;
      p.w_enc(j, i) = v;
    }
  }
  return p;
}

MatrixD preactivations(const SaeParams& params, const Matrix& x, std::size_t g) {
  g_preactivation_calls.fetch_add(1, std::memory_order_relaxed);
  const std::size_t dd = params.d();
  if (g > params.n()) throw ArgumentError(fmt::format("granularity {} exceeds N={}", g, params.n()));
  if (x.cols() != dd) throw ArgumentError(fmt::format("input dim {} != D={}", x.cols(), dd));
  const std::size_t batch = x.rows();
  MatrixD pre(batch, g);
  const std::size_t blocks = (batch + kSampleBlock - 1) / kSampleBlock;
  parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
    double xc[kSampleBlock];
    for (std::size_t blk = b0; blk < b1; ++blk) {
      const std::size_t s0 = blk * kSampleBlock;
      const std::size_t ns = std::min(kSampleBlock, batch - s0);
      for (std::size_t s = 0; s < ns; ++s) {
        auto out = pre.row(s0 + s);
        for (std::size_t j = 0; j < g; ++j) out[j] = params.b_enc[j];
      }
      for (std::size_t c = 0; c < dd; ++c) {
        const float* w = params.w_enc.row(c).data();
        for (std::size_t s = 0; s < ns; ++s) {
          xc[s] = static_cast<double>(x(s0 + s, c)) - static_cast<double>(params.b_center[c]);
        }
        for (std::size_t s = 0; s < ns; ++s) {
          double* out = pre.row(s0 + s).data();
          const double v = xc[s];
          for (std::size_t j = 0; j < g; ++j) out[j] += v * static_cast<double>(w[j]);
        }
      }
    }
  });
  return pre;
}

std::uint64_t preactivation_call_count() { return g_preactivation_calls.load(std::memory_order_relaxed); }

SparseCodeBatch topk_codes(const MatrixD& pre, std::size_t width, std::size_t k) {
  if (width > pre.cols()) throw ArgumentError("topk_codes: width exceeds pre-activation columns");
  if (k > width) throw ArgumentError(fmt::format("k={} exceeds granularity {}", k, width));
  SparseCodeBatch codes(pre.rows(), width, k);
  parallel_for(pre.rows(), [&](std::size_t i0, std::size_t i1) {
    std::vector<std::uint32_t> scratch;
    for (std::size_t i = i0; i < i1; ++i) {
      auto row = pre.row(i).first(width);
      auto idx = codes.indices(i);
      topk_indices(row, k, scratch, idx);
      auto val = codes.values(i);
      for (std::size_t j = 0; j < k; ++j) val[j] = static_cast<float>(row[idx[j]]);
    }
  });
  return codes;
}

SparseCodeBatch encode(const SaeParams& params, const Matrix& x, std::size_t k, std::size_t g) {
  if (g > params.n()) throw ArgumentError(fmt::format("encode: granularity {} exceeds N={}", g, params.n()));
  if (k > g) throw ArgumentError(fmt::format("encode: k={} exceeds granularity {}", k, g));
  return topk_codes(preactivations(params, x, g), g, k);
}

Matrix decode(const SaeParams& params, const SparseCodeBatch& codes, std::size_t g) {
  if (g > params.n()) throw ArgumentError(fmt::format("decode: granularity {} exceeds N={}", g, params.n()));
  if (codes.dim() != g) throw ArgumentError(fmt::format("decode: code dim {} != granularity {}", codes.dim(), g));
  Matrix out = sparse_decode_matmul(codes, params.w_dec.view().top_rows(g));
  const std::size_t dd = params.d();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t c = 0; c < dd; ++c) row[c] += params.b_center[c];
  }
  return out;
}

std::size_t aux_k(std::size_t n, std::span<const std::uint8_t> dead_mask) {
  const auto n_dead = static_cast<std::size_t>(std::count_if(dead_mask.begin(), dead_mask.end(),
                                                             [](std::uint8_t m) { return m != 0; }));
  return std::min(n / 2, n_dead);
}

double aux_loss(const SaeParams& params, const MatrixD& full_pre, const MatrixD& residual,
                std::span<const std::uint8_t> dead_mask) {
  const std::size_t nn = params.n();
  const std::size_t dd = params.d();
  if (dead_mask.size() != nn) throw ArgumentError("aux_loss: dead mask length != N");
  if (full_pre.cols() != nn || full_pre.rows() != residual.rows() || residual.cols() != dd) {
    throw ArgumentError("aux_loss: shape mismatch");
  }
  const std::size_t kaux = aux_k(nn, dead_mask);
  if (kaux == 0 || residual.rows() == 0) return 0.0;

  std::vector<std::uint32_t> dead;
  for (std::size_t j = 0; j < nn; ++j)
    if (dead_mask[j]) dead.push_back(static_cast<std::uint32_t>(j));

  const std::size_t batch = residual.rows();
  std::vector<double> mean(dd, 0.0);
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t c = 0; c < dd; ++c) mean[c] += residual(i, c);
  for (auto& m : mean) m /= static_cast<double>(batch);

  double num = 0.0;
  double den = 0.0;
  std::vector<double> dead_pre(dead.size());
  std::vector<std::uint32_t> scratch;
  std::vector<std::uint32_t> sel(kaux);
  std::vector<double> recon(dd);
  for (std::size_t i = 0; i < batch; ++i) {
    auto pre = full_pre.row(i);
    for (std::size_t j = 0; j < dead.size(); ++j) dead_pre[j] = pre[dead[j]];
    topk_indices(dead_pre, kaux, scratch, sel);
    std::fill(recon.begin(), recon.end(), 0.0);
    for (auto s : sel) {
      const double v = dead_pre[s];
      auto w = params.w_dec.row(dead[s]);
      for (std::size_t c = 0; c < dd; ++c) recon[c] += v * static_cast<double>(w[c]);
    }
    auto e = residual.row(i);
    for (std::size_t c = 0; c < dd; ++c) {
      const double diff = e[c] - recon[c];
      num += diff * diff;
      const double dev = e[c] - mean[c];
      den += dev * dev;
    }
  }
  if (den <= 0.0) return 0.0;
  return num / den;
}

double recon_mse(const Matrix& x, const Matrix& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) throw ArgumentError("recon_mse: shape mismatch");
  if (x.rows() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = static_cast<double>(x.data()[i]) - static_cast<double>(x_hat.data()[i]);
    sum += diff * diff;
  }
  return sum / static_cast<double>(x.rows());
}

LossTerms sae_loss(const SaeParams& params, const Matrix& x, const SparseCodeBatch& codes,
                   const Matrix& x_hat, std::span<const std::uint8_t> dead_mask, const SaeConfig& cfg) {
  if (dead_mask.size() != params.n()) throw ArgumentError("sae_loss: dead mask length != N");
  if (codes.n_samples() != x.rows()) throw ArgumentError("sae_loss: codes/batch size mismatch");
  LossTerms t;
  t.recon = recon_mse(x, x_hat);
  double l1 = 0.0;
  if (cfg.sparsity_coeff != 0.0 && x.rows() > 0) {
    for (std::size_t i = 0; i < codes.n_samples(); ++i)
      for (float v : codes.values(i)) l1 += std::abs(static_cast<double>(v));
    l1 /= static_cast<double>(x.rows());
  }
  if (aux_k(params.n(), dead_mask) > 0) {
    MatrixD residual(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
      residual.data()[i] = static_cast<double>(x.data()[i]) - static_cast<double>(x_hat.data()[i]);
    }
    t.aux = aux_loss(params, preactivations(params, x, params.n()), residual, dead_mask);
  }
  t.total = t.recon + cfg.sparsity_coeff * l1 + cfg.aux_scale * t.aux;
  return t;
}

void check_permutation(std::span<const std::uint32_t> perm, std::size_t n) {
  if (perm.size() != n) {
    throw ArgumentError(fmt::format("permutation has length {}, expected {}", perm.size(), n));
  }
  std::vector<std::uint8_t> seen(n, 0);
  for (auto p : perm) {
    if (p >= n || seen[p]) throw ArgumentError("permutation is not a bijection");
    seen[p] = 1;
  }
}

std::vector<std::uint32_t> invert_permutation(std::span<const std::uint32_t> perm) {
  check_permutation(perm, perm.size());
  std::vector<std::uint32_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<std::uint32_t>(i);
  return inv;
}

SaeParams apply_permutation(const SaeParams& params, std::span<const std::uint32_t> perm) {
  const std::size_t nn = params.n();
  const std::size_t dd = params.d();
  check_permutation(perm, nn);
  SaeParams out;
  out.b_center = params.b_center;
  out.w_enc = Matrix(dd, nn);
  out.w_dec = Matrix(nn, dd);
  out.b_enc.resize(nn);
  for (std::size_t i = 0; i < nn; ++i) {
    const std::size_t src = perm[i];
    out.b_enc[i] = params.b_enc[src];
    std::copy_n(params.w_dec.row(src).begin(), dd, out.w_dec.row(i).begin());
    for (std::size_t c = 0; c < dd; ++c) out.w_enc(c, i) = params.w_enc(c, src);
  }
  return out;
}

void normalize_decoder_rows(SaeParams& params) {
  for (std::size_t i = 0; i < params.n(); ++i) {
    auto row = params.w_dec.row(i);
    double norm2 = 0.0;
    for (float v : row) norm2 += static_cast<double>(v) * v;
    if (norm2 <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(norm2);
    for (float& v : row) v = static_cast<float>(v * inv);
  }
}

}  // namespace psae
