// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "psae/analysis.hpp"

using namespace psae;

namespace {

ScalingLawParams reference_params() {
  ScalingLawParams p;
  p.alpha = -3.60;
  p.beta_k = 0.69;
  p.beta_n = 0.19;
  p.beta_g = 0.08;
  p.gamma_n = 0.02;
  p.gamma_g = -0.10;
  p.zeta = -2.13;
  p.eta = -0.13;
  return p;
}

std::vector<ScalingObservation> grid(const ScalingLawParams& p, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, noise);
  std::vector<ScalingObservation> obs;
  for (double n : {16384.0, 32768.0, 65536.0})
    for (double k : {64.0, 128.0, 256.0, 512.0})
      for (double g : {5000.0, 10000.0, 20000.0, 40000.0, 65536.0}) {
        if (g > n) continue;
        obs.push_back({n, k, g, predict_loss(p, n, k, g) * (1.0 + (noise > 0 ? nd(rng) : 0.0))});
      }
  return obs;
}

}  // namespace

TEST_CASE("eigen_spectrum of identical rows is zero") {
  const Matrix w(10, 4, 0.5f);
  for (double e : eigen_spectrum(w)) CHECK(std::abs(e) <= 1e-12);
}

TEST_CASE("eigen_spectrum of +-e1 rows is (1, 0, ...)") {
  Matrix w(6, 3);
  for (std::size_t i = 0; i < 6; ++i) w(i, 0) = i % 2 ? 1.0f : -1.0f;
  const auto e = eigen_spectrum(w);
  CHECK(e[0] == doctest::Approx(1.0));
  CHECK(std::abs(e[1]) < 1e-12);
  CHECK(std::abs(e[2]) < 1e-12);
}

TEST_CASE("eigen_spectrum trace identity and row-permutation invariance") {
  std::mt19937_64 rng(2);
  const Matrix w = oracle::random_matrix(50, 6, rng);
  const auto e = eigen_spectrum(w);
  double trace = 0.0;
  for (std::size_t c = 0; c < 6; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 50; ++i) mean += w(i, c) / 50.0;
    for (std::size_t i = 0; i < 50; ++i) trace += (w(i, c) - mean) * (w(i, c) - mean) / 50.0;
  }
  double sum = 0.0;
  for (double v : e) sum += v;
  CHECK(sum == doctest::Approx(trace).epsilon(1e-6));
  Matrix r(50, 6);
  for (std::size_t i = 0; i < 50; ++i)
    for (std::size_t c = 0; c < 6; ++c) r(i, c) = w(49 - i, c);
  const auto er = eigen_spectrum(r);
  for (std::size_t i = 0; i < 6; ++i) CHECK(er[i] == doctest::Approx(e[i]).epsilon(1e-9));
  CHECK_THROWS_AS(eigen_spectrum(Matrix(1, 3)), ArgumentError);
}

TEST_CASE("fit_power_law on an exact power law") {
  std::vector<double> v;
  for (int r = 1; r <= 100; ++r) v.push_back(1.0 / r);
  const auto f = fit_power_law(v);
  CHECK(f.exponent == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(f.r2 == doctest::Approx(1.0));
  CHECK(f.n_fitted == 100);
}

TEST_CASE("fit_power_law trims exactly the requested ranks and drops zeros") {
  std::vector<double> v;
  for (int r = 1; r <= 100; ++r) v.push_back(std::pow(r, -0.5) * (r % 3 == 0 ? 1.1 : 1.0));
  v.push_back(0.0);
  v.push_back(0.0);
  const auto f = fit_power_law(v, 0.05, 0.8);
  CHECK(f.n_excluded_zeros == 2);
  CHECK(f.n_fitted == 75);

  std::vector<double> sorted(v.begin(), v.end() - 2);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  std::vector<double> ranks, vals;
  for (std::size_t i = 5; i < 80; ++i) {
    ranks.push_back(static_cast<double>(i + 1));
    vals.push_back(sorted[i]);
  }
  const auto ref = ols_loglog(ranks, vals);
  CHECK(f.exponent == ref.slope);
  CHECK(f.r2 == ref.r2);
}

TEST_CASE("fit_power_law needs ten positive values") {
  std::vector<double> v(9, 1.0);
  v.push_back(0.0);
  CHECK_THROWS_AS(fit_power_law(v), ArgumentError);
  CHECK_THROWS_AS(fit_power_law(std::vector<double>(20, 1.0), 0.5, 0.4), ArgumentError);
}

TEST_CASE("predict_loss fixtures") {
  ScalingLawParams flat;
  flat.alpha = -1.0;
  flat.zeta = -2.0;
  flat.eta = 0.3;
  CHECK(predict_loss(flat, 100, 8, 50) == doctest::Approx(std::exp(-1.0) + std::exp(-2.0 + 0.3 * std::log(8.0))));

  const auto p = reference_params();
  const double lk = std::log(256.0), ln = std::log(65536.0), lg = std::log(65536.0);
  const double direct = std::exp(-3.60 + 0.69 * lk + 0.19 * ln + 0.08 * lg + 0.02 * lk * ln - 0.10 * lk * lg) +
                        std::exp(-2.13 - 0.13 * lk);
  CHECK(predict_loss(p, 65536, 256, 65536) == doctest::Approx(direct).epsilon(1e-14));
  CHECK_THROWS_AS(predict_loss(p, 0.5, 1, 1), ArgumentError);
}

TEST_CASE("predict_loss decreases in g when beta_g + gamma_g log k < 0") {
  const auto p = reference_params();
  for (double k : {64.0, 256.0, 512.0}) {
    REQUIRE(p.beta_g + p.gamma_g * std::log(k) < 0);
    double prev = predict_loss(p, 65536, k, 1000);
    for (double g = 2000; g <= 65536; g *= 2) {
      const double cur = predict_loss(p, 65536, k, g);
      CHECK(cur < prev);
      CHECK(cur > 0.0);
      prev = cur;
    }
  }
}

TEST_CASE("scaling-law fit recovers noiseless predictions") {
  const auto obs = grid(reference_params(), 0.0, 0);
  const auto r = fit_scaling_law(obs);
  CHECK(r.r2 >= 0.999);
  CHECK(r.converged);
  CHECK_FALSE(r.degenerate);
}

TEST_CASE("scaling-law fit with 1% noise loses less than 0.01 r2") {
  const auto obs = grid(reference_params(), 0.01, 4);
  const auto r = fit_scaling_law(obs);
  CHECK(r.r2 >= 0.99);
  CHECK(scaling_r2_loglog(r.params, obs) == doctest::Approx(r.r2));
}

TEST_CASE("scaling-law fit flags degenerate data") {
  auto obs = grid(reference_params(), 0.0, 0);
  std::vector<ScalingObservation> single_k;
  for (const auto& o : obs)
    if (o.k == 128.0) single_k.push_back(o);
  const auto r = fit_scaling_law(single_k);
  CHECK(r.degenerate);
  CHECK_FALSE(r.warnings.empty());
}

TEST_CASE("scaling-law fit input validation") {
  auto obs = grid(reference_params(), 0.0, 0);
  obs.resize(8);
  CHECK_THROWS_AS(fit_scaling_law(obs), ArgumentError);
  auto bad = grid(reference_params(), 0.0, 0);
  bad[3].loss = 0.0;
  CHECK_THROWS_AS(fit_scaling_law(bad), ArgumentError);
}

TEST_CASE("scaling-law fit reports failure with the best attempt") {
  const auto obs = grid(reference_params(), 0.0, 0);
  ScalingFitOptions opts;
  opts.max_iters = 1;
  try {
    fit_scaling_law(obs, opts);
    FAIL("one iteration should not converge");
  } catch (const FitFailure& e) {
    CHECK(std::isfinite(e.best().objective));
    CHECK(e.best().iterations == 1);
  }
}

TEST_CASE("scaling CSV reader") {
  const auto path = std::filesystem::temp_directory_path() / "psae_unit_scaling.csv";
  {
    std::ofstream out(path);
    out << "n,k,g,loss\n16384,64,5000,0.5\n";
  }
  const auto obs = read_scaling_csv(path);
  REQUIRE(obs.size() == 1);
  CHECK(obs[0].g == 5000.0);
  {
    std::ofstream out(path);
    out << "n,k,g,loss\n1,2,x,4\n";
  }
  CHECK_THROWS_AS(read_scaling_csv(path), FormatError);
  std::filesystem::remove(path);
}
