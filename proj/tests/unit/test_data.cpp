// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "psae/data.hpp"

using namespace psae;

namespace {

std::filesystem::path tmp(const char* name) { return std::filesystem::temp_directory_path() / name; }

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const std::filesystem::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("generator is deterministic in the seed") {
  SuperpositionConfig cfg;
  cfg.n_true = 64;
  cfg.d = 8;
  cfg.seed = 3;
  const auto a = gen_superposition(cfg, 200);
  const auto b = gen_superposition(cfg, 200);
  CHECK(a.data == b.data);
  cfg.seed = 4;
  CHECK_FALSE(gen_superposition(cfg, 200).data == a.data);
  const auto withlat = gen_superposition_with_latents(cfg, 200);
  CHECK(withlat.shard.data == gen_superposition(cfg, 200).data);
}

TEST_CASE("samples with no active latent are zero and x = s M") {
  SuperpositionConfig cfg;
  cfg.n_true = 32;
  cfg.d = 4;
  cfg.p_active = 0.02;
  cfg.seed = 9;
  const auto s = gen_superposition_with_latents(cfg, 500);
  const Matrix dict = superposition_dictionary(cfg);
  std::size_t n_zero = 0;
  for (std::size_t i = 0; i < 500; ++i) {
    bool any = false;
    for (std::size_t r = 0; r < 32; ++r) any |= s.latents(i, r) != 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      double ref = 0.0;
      for (std::size_t r = 0; r < 32; ++r) ref += s.latents(i, r) * dict(r, c);
      CHECK(s.shard.data(i, c) == doctest::Approx(ref).epsilon(1e-5));
      if (!any) CHECK(s.shard.data(i, c) == 0.0f);
    }
    n_zero += !any;
  }
  CHECK(n_zero > 0);
  for (std::size_t r = 0; r < 32; ++r) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < 4; ++c) n2 += dict(r, c) * dict(r, c);
    CHECK(n2 == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("latent power decays with twice the importance exponent") {
  SuperpositionConfig cfg;
  cfg.n_true = 256;
  cfg.d = 16;
  cfg.p_active = 0.1;
  cfg.seed = 1;
  const std::size_t n = 40000;
  const auto s = gen_superposition_with_latents(cfg, n);
  std::vector<double> ranks, power;
  for (std::size_t r = 0; r < cfg.n_true; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += s.latents(i, r) * s.latents(i, r);
    ranks.push_back(static_cast<double>(r + 1));
    power.push_back(acc / n);
  }
  const auto fit = ols_loglog(ranks, power);
  CHECK(std::abs(fit.slope - 2.0 * cfg.importance_exponent) < 0.1);
}

TEST_CASE("generator config validation") {
  SuperpositionConfig cfg;
  cfg.d = cfg.n_true;
  CHECK_THROWS_AS(gen_superposition(cfg, 1), ArgumentError);
  cfg = {};
  cfg.p_active = 1.0;
  CHECK_THROWS_AS(gen_superposition(cfg, 1), ArgumentError);
}

TEST_CASE("shard round trip and exact file length") {
  const auto path = tmp("psae_unit_shard.saea");
  ActivationShard s;
  s.data = Matrix(3, 2, std::vector<float>{1, 2, 3, 4, 5, -6.5f});
  write_shard(path, s);
  CHECK(std::filesystem::file_size(path) == kShardHeaderBytes + 24);
  const auto back = read_shard(path);
  CHECK(back.data == s.data);
  std::filesystem::remove(path);
}

TEST_CASE("shard corruption is rejected with an offset") {
  const auto path = tmp("psae_unit_bad.saea");
  ActivationShard s;
  s.data = Matrix(3, 2, 1.0f);
  write_shard(path, s);
  const auto good = slurp(path);

  SUBCASE("bad magic") {
    auto b = good;
    b[0] = 'X';
    dump(path, b);
    try {
      read_shard(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("big-endian version field") {
    auto b = good;
    std::swap(b[4], b[7]);
    dump(path, b);
    try {
      read_shard(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 4);
    }
  }
  SUBCASE("payload length mismatch") {
    auto b = good;
    b.pop_back();
    dump(path, b);
    CHECK_THROWS_AS(read_shard(path), FormatError);
    b.push_back(0);
    b.push_back(0);
    b.push_back(0);
    b.push_back(0);
    b.push_back(0);
    dump(path, b);
    CHECK_THROWS_AS(read_shard(path), FormatError);
  }
  SUBCASE("header truncation") {
    for (std::size_t len = 0; len < kShardHeaderBytes; ++len) {
      dump(path, std::vector<char>(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(len)));
      CHECK_THROWS_AS(read_shard(path), FormatError);
    }
  }
  SUBCASE("non-finite payload") {
    auto b = good;
    const float nan = std::nanf("");
    std::memcpy(b.data() + kShardHeaderBytes, &nan, 4);
    dump(path, b);
    CHECK_THROWS_AS(read_shard(path), FormatError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("raw f32 reader") {
  const auto path = tmp("psae_unit_raw.f32");
  const std::vector<float> v{1, 2, 3, 4, 5, 6};
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(v.data()), 24);
  }
  const auto s = read_raw_f32(path, 3);
  CHECK(s.n_samples() == 2);
  CHECK(s.data(1, 0) == 4.0f);
  CHECK_THROWS_AS(read_raw_f32(path, 4), FormatError);
  CHECK_THROWS_AS(read_raw_f32(path, 0), ArgumentError);
  std::filesystem::remove(path);
}

TEST_CASE("BatchIterator covers every row exactly once") {
  Matrix m(10, 2);
  for (std::size_t i = 0; i < 10; ++i) m(i, 0) = static_cast<float>(i);

  SUBCASE("batch size 3 with short final batch") {
    BatchIterator it(m, 3, 5);
    std::multiset<float> seen;
    std::vector<std::size_t> sizes;
    while (auto b = it.next()) {
      sizes.push_back(b->rows());
      for (std::size_t i = 0; i < b->rows(); ++i) seen.insert((*b)(i, 0));
    }
    CHECK(sizes == std::vector<std::size_t>{3, 3, 3, 1});
    CHECK(seen.size() == 10);
    CHECK(std::set<float>(seen.begin(), seen.end()).size() == 10);
  }
  SUBCASE("batch larger than the shard") {
    BatchIterator it(m, 64, 5);
    auto b = it.next();
    REQUIRE(b);
    CHECK(b->rows() == 10);
    CHECK_FALSE(it.next());
  }
  SUBCASE("same seed, same order") {
    BatchIterator a(m, 4, 11), b(m, 4, 11), c(m, 4, 12);
    CHECK(a.order() == b.order());
    CHECK(a.order() != c.order());
  }
  CHECK_THROWS_AS(BatchIterator(m, 0, 1), ArgumentError);
}

TEST_CASE("EpochStream reshuffles and never ends") {
  Matrix m(5, 1);
  for (std::size_t i = 0; i < 5; ++i) m(i, 0) = static_cast<float>(i);
  EpochStream s(m, 2, 0);
  std::size_t rows = 0;
  for (int i = 0; i < 9; ++i) {
    auto b = s.next();
    REQUIRE(b);
    rows += b->rows();
  }
  CHECK(rows == 15);
  CHECK(s.epoch() == 2);
  const Matrix empty(0, 1);
  EpochStream e(empty, 2, 0);
  CHECK_FALSE(e.next());
}
