// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include "psae/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <fmt/format.h>

namespace psae {

template <typename T>
bool BasicMatrix<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class BasicMatrix<float>;
template class BasicMatrix<double>;

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return a.size() == 0 || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

SparseCodeBatch::SparseCodeBatch(std::size_t n_samples, std::size_t dim, std::size_t k)
    : n_samples_(n_samples), dim_(dim), k_(k), indices_(n_samples * k, 0), values_(n_samples * k, 0.0f) {
  if (k > dim) throw ArgumentError(fmt::format("SparseCodeBatch: k={} exceeds dim={}", k, dim));
}

Matrix SparseCodeBatch::densify() const {
  Matrix out(n_samples_, dim_);
  for (std::size_t i = 0; i < n_samples_; ++i) {
    auto idx = indices(i);
    auto val = values(i);
    for (std::size_t j = 0; j < k_; ++j) out(i, idx[j]) = val[j];
  }
  return out;
}

void SparseCodeBatch::validate() const {
  for (std::size_t i = 0; i < n_samples_; ++i) {
    auto idx = indices(i);
    auto val = values(i);
    for (std::size_t j = 0; j < k_; ++j) {
      if (idx[j] >= dim_) {
        throw CorruptionError(fmt::format("sample {}: code index {} >= dim {}", i, idx[j], dim_));
      }
      if (j > 0 && idx[j] <= idx[j - 1]) {
        throw CorruptionError(fmt::format("sample {}: code indices not strictly increasing", i));
      }
      if (!std::isfinite(val[j])) throw CorruptionError(fmt::format("sample {}: non-finite code value", i));
    }
  }
}

void topk_indices(std::span<const double> pre, std::size_t k, std::vector<std::uint32_t>& scratch,
                  std::span<std::uint32_t> out) {
  if (k > pre.size()) {
    throw ArgumentError(fmt::format("topk: k={} exceeds length {}", k, pre.size()));
  }
  if (out.size() != k) throw ArgumentError("topk: output span must have length k");
  if (k == 0) return;
  scratch.resize(pre.size());
  std::iota(scratch.begin(), scratch.end(), 0u);
  auto before = [&pre](std::uint32_t a, std::uint32_t b) {
    return pre[a] > pre[b] || (pre[a] == pre[b] && a < b);
  };
  if (k < pre.size()) {
    std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k - 1), scratch.end(),
                     before);
  }
  std::copy_n(scratch.begin(), k, out.begin());
  std::sort(out.begin(), out.end());
}

std::vector<CodeEntry> topk_select(std::span<const double> pre, std::size_t k) {
  std::vector<std::uint32_t> scratch;
  std::vector<std::uint32_t> idx(k);
  topk_indices(pre, k, scratch, idx);
  std::vector<CodeEntry> out;
  out.reserve(k);
  for (auto i : idx) out.push_back({i, pre[i]});
  return out;
}

Matrix sparse_decode_matmul(const SparseCodeBatch& codes, MatrixView<float> dict) {
  if (codes.dim() != dict.rows()) {
    throw ArgumentError(
        fmt::format("sparse_decode_matmul: code dim {} != dictionary rows {}", codes.dim(), dict.rows()));
  }
  const std::size_t d = dict.cols();
  Matrix out(codes.n_samples(), d);
  std::vector<double> acc(d);
  for (std::size_t i = 0; i < codes.n_samples(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    auto idx = codes.indices(i);
    auto val = codes.values(i);
    for (std::size_t j = 0; j < codes.k(); ++j) {
      if (idx[j] >= dict.rows()) {
        throw CorruptionError(
            fmt::format("sparse_decode_matmul: index {} >= dictionary size {}", idx[j], dict.rows()));
      }
      const double v = val[j];
      auto row = dict.row(idx[j]);
      for (std::size_t c = 0; c < d; ++c) acc[c] += v * static_cast<double>(row[c]);
    }
    auto dst = out.row(i);
    for (std::size_t c = 0; c < d; ++c) dst[c] = static_cast<float>(acc[c]);
  }
  return out;
}

std::vector<double> sym_eigvals(const MatrixD& m) {
  const std::size_t n = m.rows();
  if (m.cols() != n) throw ArgumentError("sym_eigvals: matrix is not square");
  double scale = 1.0;
  for (double v : m.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(m(i, j) - m(j, i)) > 1e-9 * scale) {
        throw ArgumentError(fmt::format("sym_eigvals: asymmetric at ({}, {})", i, j));
      }
    }
  }

  MatrixD a = m;
  // Symmetrize exactly so rotations act on a truly symmetric matrix.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = s;
      a(j, i) = s;
    }
  }

  auto off_norm = [&a, n] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
    return s;
  };
  double total = 0.0;
  for (double v : a.data()) total += v * v;

  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    if (off_norm() <= 1e-30 * std::max(total, 1e-300)) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t r = 0; r < n; ++r) {
          const double arp = a(r, p);
          const double arq = a(r, q);
          a(r, p) = c * arp - s * arq;
          a(r, q) = s * arp + c * arq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double apr = a(p, r);
          const double aqr = a(q, r);
          a(p, r) = c * apr - s * aqr;
          a(q, r) = s * apr + c * aqr;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
      }
    }
  }

  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("pearson: length mismatch");
  if (x.size() < 2) throw ArgumentError("pearson: need at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw UndefinedError("pearson: zero variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

RegressionFit ols(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("ols: length mismatch");
  if (x.size() < 2) throw ArgumentError("ols: need at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0) throw ArgumentError("ols: x has no spread");
  RegressionFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (fit.intercept + fit.slope * x[i]);
    ss_res += r * r;
  }
  // Flat y fitted exactly counts as a perfect fit.
  fit.r2 = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : (ss_res <= 1e-24 ? 1.0 : 0.0);
  return fit;
}

RegressionFit ols_loglog(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("ols_loglog: length mismatch");
  std::vector<double> lx(x.size()), ly(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
      throw ArgumentError(fmt::format("ols_loglog: nonpositive value at position {}", i));
    }
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  return ols(lx, ly);
}

}  // namespace psae
