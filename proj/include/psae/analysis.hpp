// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Power-law diagnostics of trained dictionaries and the progressive-coding
// scaling law
//
//   L(n, k, g) = exp(alpha + beta_k log k + beta_n log n + beta_g log g
//                    + gamma_n log k log n + gamma_g log k log g)
//              + exp(zeta + eta log k)

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "psae/core_math.hpp"

namespace psae {

struct PowerLawFit {
  double exponent = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double fit_lo = 0.0;  // quantile range of ranks used
  double fit_hi = 1.0;
  std::size_t n_excluded_zeros = 0;
  std::size_t n_fitted = 0;
};

/// Eigenvalues (descending, >= 0) of the D x D covariance of the
/// column-centered dictionary, normalized by N.
std::vector<double> eigen_spectrum(const Matrix& w_dec);

/// Log-log least squares of value against 1-based rank over the ranks in
/// [floor(lo * n), floor(hi * n)), where n counts the positive values.
PowerLawFit fit_power_law(std::span<const double> values, double lo = 0.0, double hi = 1.0);

struct ScalingLawParams {
  double alpha = 0.0;
  double beta_k = 0.0;
  double beta_n = 0.0;
  double beta_g = 0.0;
  double gamma_n = 0.0;
  double gamma_g = 0.0;
  double zeta = 0.0;
  double eta = 0.0;
};

struct ScalingObservation {
  double n = 0.0;
  double k = 0.0;
  double g = 0.0;
  double loss = 0.0;
};

double predict_loss(const ScalingLawParams& p, double n, double k, double g);

/// R^2 of log(prediction) against log(observed loss).
double scaling_r2_loglog(const ScalingLawParams& p, std::span<const ScalingObservation> obs);

struct ScalingFitOptions {
  std::size_t starts = 8;
  std::uint64_t seed = 0;
  std::size_t max_iters = 500;
  double tol = 1e-10;
};

struct ScalingFitResult {
  ScalingLawParams params;
  double r2 = 0.0;
  double objective = 0.0;  // mean squared log residual
  std::size_t iterations = 0;
  std::size_t best_start = 0;
  bool converged = false;
  bool degenerate = false;  // some of n, k, g take a single value
  std::vector<std::string> warnings;
};

class FitFailure : public std::runtime_error {
 public:
  FitFailure(const std::string& what, ScalingFitResult best) : std::runtime_error(what), best_(std::move(best)) {}
  const ScalingFitResult& best() const noexcept { return best_; }

 private:
  ScalingFitResult best_;
};

/// Minimizes the mean squared log residual by Levenberg-Marquardt from
/// `starts` seeded initializations; returns the best.
/// Throws FitFailure (carrying the best attempt) if no start converges.
ScalingFitResult fit_scaling_law(std::span<const ScalingObservation> obs, const ScalingFitOptions& opts = {});

/// CSV with header n,k,g,loss.
std::vector<ScalingObservation> read_scaling_csv(const std::filesystem::path& path);

}  // namespace psae
