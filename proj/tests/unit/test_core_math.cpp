// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "psae/core_math.hpp"

using namespace psae;

namespace {

SparseCodeBatch codes_from(std::size_t dim, std::size_t k, const std::vector<std::vector<CodeEntry>>& rows) {
  SparseCodeBatch c(rows.size(), dim, k);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      c.indices(i)[j] = rows[i][j].index;
      c.values(i)[j] = static_cast<float>(rows[i][j].value);
    }
  }
  return c;
}

}  // namespace

TEST_CASE("topk_select keeps the largest values, not magnitudes") {
  const std::vector<double> pre{0.5, -1.2, 3.0, 0.1};
  const auto out = topk_select(pre, 2);
  REQUIRE(out.size() == 2);
  CHECK(out[0] == CodeEntry{0, 0.5});
  CHECK(out[1] == CodeEntry{2, 3.0});
}

TEST_CASE("topk_select ties go to the lower index") {
  const std::vector<double> pre{7, 7, 7};
  const auto out = topk_select(pre, 1);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == CodeEntry{0, 7});
}

TEST_CASE("topk_select matches the full-sort oracle") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> small(-3, 3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(16);
    // Half the trials use small integers to force ties.
    for (auto& x : v) x = trial % 2 ? nd(rng) : small(rng);
    for (std::size_t k : {0, 1, 4, 16}) {
      const auto got = topk_select(v, k);
      const auto want = oracle::topk_by_sort(v, k);
      REQUIRE(got.size() == k);
      for (std::size_t j = 0; j < k; ++j) {
        CHECK(got[j].index == want[j]);
        CHECK(got[j].value == v[want[j]]);
      }
    }
  }
}

TEST_CASE("topk_select rejects k > length") { CHECK_THROWS_AS(topk_select(std::vector<double>{1.0}, 2), ArgumentError); }

TEST_CASE("sparse_decode_matmul hand case") {
  Matrix dict(2, 2, std::vector<float>{1, 0, 0, 3});
  const auto codes = codes_from(2, 1, {{{1, 2.0}}});
  const Matrix out = sparse_decode_matmul(codes, dict.view());
  CHECK(out(0, 0) == 0.0f);
  CHECK(out(0, 1) == 6.0f);
}

TEST_CASE("sparse_decode_matmul with k = 0 gives zero rows") {
  Matrix dict(3, 2, 1.0f);
  SparseCodeBatch codes(4, 3, 0);
  const Matrix out = sparse_decode_matmul(codes, dict.view());
  CHECK(out.rows() == 4);
  for (float v : out.data()) CHECK(v == 0.0f);
}

TEST_CASE("sparse_decode_matmul rejects an index past the dictionary") {
  Matrix dict(3, 2, 1.0f);
  auto codes = codes_from(3, 1, {{{3, 1.0}}});
  CHECK_THROWS_AS(sparse_decode_matmul(codes, dict.view()), CorruptionError);
}

TEST_CASE("sparse_decode_matmul equals the dense oracle") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 40, d = 7, k = 5, b = 9;
    const Matrix dict = oracle::random_matrix(n, d, rng);
    SparseCodeBatch codes(b, n, k);
    std::normal_distribution<double> nd;
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<double> v(n);
      for (auto& x : v) x = nd(rng);
      const auto idx = oracle::topk_by_sort(v, k);
      for (std::size_t j = 0; j < k; ++j) {
        codes.indices(i)[j] = idx[j];
        codes.values(i)[j] = static_cast<float>(v[idx[j]]);
      }
    }
    const Matrix got = sparse_decode_matmul(codes, dict.view());
    const Matrix want = oracle::dense_decode(codes, dict);
    for (std::size_t q = 0; q < got.size(); ++q) {
      CHECK(std::abs(got.data()[q] - want.data()[q]) <= 1e-6 * std::max(1.0f, std::abs(want.data()[q])));
    }
  }
}

TEST_CASE("sym_eigvals small fixtures") {
  const auto a = sym_eigvals(MatrixD(2, 2, std::vector<double>{2, 0, 0, 5}));
  CHECK(a[0] == doctest::Approx(5.0));
  CHECK(a[1] == doctest::Approx(2.0));
  const auto b = sym_eigvals(MatrixD(2, 2, std::vector<double>{1, 1, 1, 1}));
  CHECK(b[0] == doctest::Approx(2.0));
  CHECK(std::abs(b[1]) < 1e-12);
}

TEST_CASE("sym_eigvals trace and determinant identities") {
  const MatrixD m2(2, 2, std::vector<double>{3, 1.5, 1.5, -2});
  const auto e2 = sym_eigvals(m2);
  CHECK(e2[0] + e2[1] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(e2[0] * e2[1] == doctest::Approx(3 * -2 - 1.5 * 1.5).epsilon(1e-9));
  const MatrixD m3(3, 3, std::vector<double>{4, 1, 2, 1, 3, 0.5, 2, 0.5, 5});
  const auto e3 = sym_eigvals(m3);
  const double det = 4 * (3 * 5 - 0.25) - 1 * (1 * 5 - 0.5 * 2) + 2 * (1 * 0.5 - 3 * 2);
  CHECK(e3[0] + e3[1] + e3[2] == doctest::Approx(12.0).epsilon(1e-9));
  CHECK(e3[0] * e3[1] * e3[2] == doctest::Approx(det).epsilon(1e-9));
  CHECK(e3[0] >= e3[1]);
  CHECK(e3[1] >= e3[2]);
}

TEST_CASE("sym_eigvals matches an independent eigensolver on random 8x8") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 10; ++trial) {
    MatrixD m(8, 8);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = i; j < 8; ++j) m(i, j) = m(j, i) = nd(rng);
    const auto got = sym_eigvals(m);
    const auto want = oracle::eigvals(m);
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-6 * std::max(1.0, std::abs(want[i])));
  }
}

TEST_CASE("sym_eigvals rejects non-square and asymmetric input") {
  CHECK_THROWS_AS(sym_eigvals(MatrixD(2, 3)), ArgumentError);
  CHECK_THROWS_AS(sym_eigvals(MatrixD(2, 2, std::vector<double>{1, 2, 0, 1})), ArgumentError);
}

TEST_CASE("pearson fixtures") {
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0));
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(pearson(std::vector<double>{1, 4, 1}, std::vector<double>{4, 16, 4}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), UndefinedError);
}

TEST_CASE("pearson is invariant under positive affine maps") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  std::vector<double> x(50), y(50), x2(50);
  for (std::size_t i = 0; i < 50; ++i) {
    x[i] = nd(rng);
    y[i] = x[i] + nd(rng);
    x2[i] = 3.5 * x[i] - 7.0;
  }
  CHECK(pearson(x2, y) == doctest::Approx(pearson(x, y)).epsilon(1e-12));
}

TEST_CASE("ols_loglog fixtures") {
  const auto f = ols_loglog(std::vector<double>{1, 2, 4, 8}, std::vector<double>{1, 0.5, 0.25, 0.125});
  CHECK(f.slope == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(f.r2 == doctest::Approx(1.0));
  const auto flat = ols_loglog(std::vector<double>{1, 10}, std::vector<double>{3, 3});
  CHECK(std::abs(flat.slope) < 1e-12);
  CHECK(flat.intercept == doctest::Approx(std::log(3.0)));
  CHECK_THROWS_AS(ols_loglog(std::vector<double>{1, 0}, std::vector<double>{1, 1}), ArgumentError);
}

TEST_CASE("ols_loglog recovers an exact power law and a noisy one") {
  std::vector<double> x, y, yn;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 0.05);
  for (int i = 1; i <= 100; ++i) {
    x.push_back(i);
    y.push_back(2.5 * std::pow(i, -0.7));
    yn.push_back(2.5 * std::pow(i, -0.7) * std::exp(nd(rng)));
  }
  CHECK(std::abs(ols_loglog(x, y).slope + 0.7) <= 1e-9);
  CHECK(std::abs(ols_loglog(x, yn).slope + 0.7) <= 0.05);
}

TEST_CASE("SparseCodeBatch validate catches broken invariants") {
  auto ok = codes_from(5, 2, {{{1, 1.0}, {3, 2.0}}});
  CHECK_NOTHROW(ok.validate());
  auto unsorted = codes_from(5, 2, {{{3, 1.0}, {1, 2.0}}});
  CHECK_THROWS_AS(unsorted.validate(), CorruptionError);
  auto out_of_range = codes_from(5, 1, {{{5, 1.0}}});
  CHECK_THROWS_AS(out_of_range.validate(), CorruptionError);
}
