// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense/sparse kernels and small regression helpers shared by every other module.
// Storage may be 32-bit; every reduction accumulates in double.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "psae/errors.hpp"

namespace psae {

/// Read-only row-major view with an explicit row stride. Used to address
/// prefixes of a weight matrix (first g rows of a decoder) without copying.
template <typename T>
class MatrixView {
 public:
  MatrixView() = default;
  MatrixView(const T* data, std::size_t rows, std::size_t cols, std::size_t stride)
      : data_(data), rows_(rows), cols_(cols), stride_(stride) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<const T> row(std::size_t i) const { return {data_ + i * stride_, cols_}; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * stride_ + j]; }

  MatrixView top_rows(std::size_t n) const {
    if (n > rows_) throw ArgumentError("top_rows: requested more rows than available");
    return {data_, n, cols_, stride_};
  }

 private:
  const T* data_ = nullptr;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t stride_ = 0;
};

template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ArgumentError("matrix data length != rows * cols");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  std::span<T> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  MatrixView<T> view() const { return {data_.data(), rows_, cols_, cols_}; }

  bool all_finite() const;

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using MatrixD = BasicMatrix<double>;

/// True when both matrices have equal shape and identical bit patterns.
bool bitwise_equal(const Matrix& a, const Matrix& b);

struct CodeEntry {
  std::uint32_t index;
  double value;

  bool operator==(const CodeEntry&) const = default;
};

/// Batch of TopK codes: exactly k (index, value) pairs per sample, indices
/// strictly ascending and < dim.
class SparseCodeBatch {
 public:
  SparseCodeBatch() = default;
  SparseCodeBatch(std::size_t n_samples, std::size_t dim, std::size_t k);

  std::size_t n_samples() const noexcept { return n_samples_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t k() const noexcept { return k_; }

  std::span<std::uint32_t> indices(std::size_t i) { return {indices_.data() + i * k_, k_}; }
  std::span<const std::uint32_t> indices(std::size_t i) const {
    return {indices_.data() + i * k_, k_};
  }
  std::span<float> values(std::size_t i) { return {values_.data() + i * k_, k_}; }
  std::span<const float> values(std::size_t i) const { return {values_.data() + i * k_, k_}; }

  /// Dense n_samples x dim matrix with zeros off the support.
  Matrix densify() const;

  /// Throws CorruptionError if any sample breaks the ordering/range invariants.
  void validate() const;

  bool operator==(const SparseCodeBatch&) const = default;

 private:
  std::size_t n_samples_ = 0;
  std::size_t dim_ = 0;
  std::size_t k_ = 0;
  std::vector<std::uint32_t> indices_;
  std::vector<float> values_;
};

struct RegressionFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Indices of the k largest values (ties -> lower index), sorted ascending.
/// `scratch` is reused between calls to avoid reallocating.
void topk_indices(std::span<const double> pre, std::size_t k, std::vector<std::uint32_t>& scratch,
                  std::span<std::uint32_t> out);

/// Keeps the k largest values of `pre` (not magnitudes); ties go to the lower index.
std::vector<CodeEntry> topk_select(std::span<const double> pre, std::size_t k);

/// Row i of the result is sum_j value_ij * dict[index_ij, :]. Touches only the
/// stored pairs; cost is n_samples * k * D.
Matrix sparse_decode_matmul(const SparseCodeBatch& codes, MatrixView<float> dict);

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted descending.
std::vector<double> sym_eigvals(const MatrixD& m);

/// Sample Pearson correlation. Throws UndefinedError if either side has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

/// Least squares of log(y) on log(x).
RegressionFit ols_loglog(std::span<const double> x, std::span<const double> y);

/// Plain least squares of y on x (r2 clamped to [0, 1]).
RegressionFit ols(std::span<const double> x, std::span<const double> y);

}  // namespace psae
