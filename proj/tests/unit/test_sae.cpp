// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "psae/data.hpp"
#include "psae/sae.hpp"

using namespace psae;

namespace {

SaeParams identity_params(std::size_t d) {
  SaeParams p;
  p.w_enc = Matrix(d, d);
  p.w_dec = Matrix(d, d);
  for (std::size_t i = 0; i < d; ++i) p.w_enc(i, i) = p.w_dec(i, i) = 1.0f;
  p.b_center.assign(d, 0.0f);
  p.b_enc.assign(d, 0.0f);
  return p;
}

std::vector<std::uint32_t> random_perm(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::uint32_t> p(n);
  std::iota(p.begin(), p.end(), 0u);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace

TEST_CASE("encode with identity params keeps the top coordinate") {
  const auto p = identity_params(2);
  const Matrix x(1, 2, std::vector<float>{3, 1});
  const auto codes = encode(p, x, 1, 2);
  CHECK(codes.dim() == 2);
  CHECK(codes.indices(0)[0] == 0);
  CHECK(codes.values(0)[0] == 3.0f);
}

TEST_CASE("encode prefix pre-activations equal the full ones exactly") {
  std::mt19937_64 rng(4);
  const auto p = oracle::random_params(6, 20, rng);
  const Matrix x = oracle::random_matrix(5, 6, rng);
  const MatrixD full = preactivations(p, x, 20);
  const MatrixD half = preactivations(p, x, 10);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 10; ++j) CHECK(half(i, j) == full(i, j));
}

TEST_CASE("encode rejects bad granularity and k") {
  std::mt19937_64 rng(4);
  const auto p = oracle::random_params(3, 8, rng);
  const Matrix x(1, 3);
  CHECK_THROWS_AS(encode(p, x, 2, 9), ArgumentError);
  CHECK_THROWS_AS(encode(p, x, 5, 4), ArgumentError);
}

TEST_CASE("decode of empty codes is b_center and one-hot picks a row") {
  std::mt19937_64 rng(2);
  const auto p = oracle::random_params(3, 5, rng);
  SparseCodeBatch empty(2, 5, 0);
  const Matrix out = decode(p, empty, 5);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 3; ++c) CHECK(out(i, c) == p.b_center[c]);

  SparseCodeBatch one(1, 5, 1);
  one.indices(0)[0] = 3;
  one.values(0)[0] = 1.0f;
  const Matrix o = decode(p, one, 5);
  for (std::size_t c = 0; c < 3; ++c) CHECK(o(0, c) == doctest::Approx(p.b_center[c] + p.w_dec(3, c)));
}

TEST_CASE("decode matches the dense oracle and only reads the prefix rows") {
  std::mt19937_64 rng(9);
  auto p = oracle::random_params(6, 16, rng);
  const Matrix x = oracle::random_matrix(8, 6, rng);
  const auto codes = encode(p, x, 4, 16);
  const Matrix got = decode(p, codes, 16);
  const Matrix dense = oracle::dense_decode(codes, p.w_dec);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t c = 0; c < 6; ++c)
      CHECK(std::abs(got(i, c) - (dense(i, c) + p.b_center[c])) <= 1e-6 * std::max(1.0f, std::abs(got(i, c))));

  const auto prefix_codes = encode(p, x, 2, 8);
  const Matrix before = decode(p, prefix_codes, 8);
  for (std::size_t j = 8; j < 16; ++j)
    for (std::size_t c = 0; c < 6; ++c) p.w_dec(j, c) = 1e6f;
  CHECK(bitwise_equal(before, decode(p, prefix_codes, 8)));
}

TEST_CASE("decode rejects code indices past the granularity") {
  std::mt19937_64 rng(9);
  const auto p = oracle::random_params(3, 6, rng);
  SparseCodeBatch c(1, 4, 1);
  c.indices(0)[0] = 5;
  c.values(0)[0] = 1.0f;
  CHECK_THROWS_AS(decode(p, c, 4), CorruptionError);
}

TEST_CASE("sae_loss fixtures") {
  std::mt19937_64 rng(1);
  const auto p = oracle::random_params(2, 4, rng);
  SaeConfig cfg{4, 2, 1};
  const DeadMask none(4, 0);
  const Matrix x(2, 2, std::vector<float>{2, 0, 0, 4});
  const auto codes = encode(p, x, 1, 4);

  const auto perfect = sae_loss(p, x, codes, x, none, cfg);
  CHECK(perfect.total == 0.0);
  CHECK(perfect.aux == 0.0);

  const auto zero = sae_loss(p, x, codes, Matrix(2, 2), none, cfg);
  CHECK(zero.recon == doctest::Approx(10.0));
  CHECK(zero.total == doctest::Approx(10.0));
}

TEST_CASE("aux term is exactly zero without dead features") {
  std::mt19937_64 rng(1);
  const auto p = oracle::random_params(3, 6, rng);
  SaeConfig cfg{6, 3, 2};
  const Matrix x = oracle::random_matrix(5, 3, rng);
  const auto codes = encode(p, x, 2, 6);
  const auto t = sae_loss(p, x, codes, Matrix(5, 3), DeadMask(6, 0), cfg);
  CHECK(t.aux == 0.0);
  CHECK(aux_k(6, DeadMask(6, 0)) == 0);
  CHECK(aux_k(6, DeadMask(6, 1)) == 3);
  CHECK(aux_k(6, DeadMask{1, 0, 0, 0, 0, 0}) == 1);
}

TEST_CASE("recon loss is zero iff x_hat equals x") {
  const Matrix x(1, 2, std::vector<float>{1, 2});
  CHECK(recon_mse(x, x) == 0.0);
  CHECK(recon_mse(x, Matrix(1, 2, std::vector<float>{1, 2.5f})) > 0.0);
}

TEST_CASE("apply_permutation identity is bit-exact and swap moves rows") {
  std::mt19937_64 rng(6);
  const auto p = oracle::random_params(4, 6, rng);
  std::vector<std::uint32_t> id(6);
  std::iota(id.begin(), id.end(), 0u);
  const auto same = apply_permutation(p, id);
  CHECK(bitwise_equal(same.w_enc, p.w_enc));
  CHECK(bitwise_equal(same.w_dec, p.w_dec));
  CHECK(same.b_enc == p.b_enc);

  std::vector<std::uint32_t> swap{1, 0, 2, 3, 4, 5};
  const auto s = apply_permutation(p, swap);
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(s.w_dec(0, c) == p.w_dec(1, c));
    CHECK(s.w_enc(c, 0) == p.w_enc(c, 1));
  }
  CHECK(s.b_enc[0] == p.b_enc[1]);
}

TEST_CASE("apply_permutation preserves full-width reconstructions") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = oracle::random_params(8, 32, rng);
    const Matrix x = oracle::random_matrix(6, 8, rng);
    const auto perm = random_perm(32, rng);
    const auto q = apply_permutation(p, perm);
    const Matrix a = decode(p, encode(p, x, 4, 32), 32);
    const Matrix b = decode(q, encode(q, x, 4, 32), 32);
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(std::abs(a.data()[i] - b.data()[i]) <= 1e-6 * std::max(1.0f, std::abs(a.data()[i])));
  }
}

TEST_CASE("apply_permutation rejects non-bijections") {
  std::mt19937_64 rng(6);
  const auto p = oracle::random_params(2, 3, rng);
  CHECK_THROWS_AS(apply_permutation(p, std::vector<std::uint32_t>{0, 0, 1}), ArgumentError);
  CHECK_THROWS_AS(apply_permutation(p, std::vector<std::uint32_t>{0, 1}), ArgumentError);
  CHECK_THROWS_AS(apply_permutation(p, std::vector<std::uint32_t>{0, 1, 3}), ArgumentError);
}

TEST_CASE("invert_permutation round trip") {
  std::mt19937_64 rng(6);
  const auto perm = random_perm(20, rng);
  const auto inv = invert_permutation(perm);
  const auto p = oracle::random_params(3, 20, rng);
  const auto back = apply_permutation(apply_permutation(p, perm), inv);
  CHECK(bitwise_equal(back.w_dec, p.w_dec));
  CHECK(bitwise_equal(back.w_enc, p.w_enc));
}

TEST_CASE("init_params has unit decoder rows and tied encoder") {
  SaeConfig cfg{32, 8, 4};
  const auto p = init_params(cfg, 3);
  for (std::size_t j = 0; j < 32; ++j) {
    double norm = 0.0;
    for (float v : p.w_dec.row(j)) norm += static_cast<double>(v) * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));
    for (std::size_t c = 0; c < 8; ++c) CHECK(p.w_enc(c, j) == p.w_dec(j, c));
  }
  for (float v : p.b_enc) CHECK(v == 0.0f);
  CHECK(bitwise_equal(init_params(cfg, 3).w_dec, p.w_dec));
}

TEST_CASE("init_params does not reproduce the generator dictionary of the same seed") {
  SuperpositionConfig dc;
  dc.n_true = 16;
  dc.d = 8;
  dc.seed = 0;
  const Matrix truth = superposition_dictionary(dc);
  const auto p = init_params(SaeConfig{16, 8, 4}, 0);
  double worst = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    double dot = 0.0;
    for (std::size_t c = 0; c < 8; ++c) dot += static_cast<double>(truth(i, c)) * p.w_dec(i, c);
    worst = std::max(worst, std::abs(dot));
  }
  CHECK(worst < 0.99);
}

TEST_CASE("SaeConfig validation") {
  CHECK_THROWS_AS((SaeConfig{4, 2, 5}.validate()), ArgumentError);
  SaeConfig neg{4, 2, 1};
  neg.aux_scale = -1.0;
  CHECK_THROWS_AS(neg.validate(), ArgumentError);
}
