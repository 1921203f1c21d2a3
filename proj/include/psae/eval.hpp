// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reconstruction fidelity (FVU), representational similarity (RSA), frontier
// sweeps over granularity and sparsity, and the nearest-feature index analysis
// used to look for feature splitting.

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "psae/sae.hpp"

namespace psae {

struct FrontierPoint {
  std::string model_id;
  std::size_t granularity = 0;
  std::size_t k = 0;
  double fvu = 0.0;
  double rsa = 0.0;
  double mean_l0 = 0.0;  // measured E[||z||_0]; equals k for TopK codes
};

/// E||x - x_hat||^2 / E||x - mean||^2 where mean is the scalar mean over all
/// entries of x. Throws UndefinedError for constant x.
double fvu(const Matrix& x, const Matrix& x_hat);

/// Upper triangle (i < j, row-major pair order) of squared Euclidean distances.
struct Rdm {
  std::size_t n = 0;
  std::vector<double> values;
};

Rdm rdm(const Matrix& a);

/// Pearson correlation of the two RDM upper triangles.
double rsa_score(const Matrix& a, const Matrix& a_hat);

struct FrontierOptions {
  std::size_t rsa_samples = 2000;  // RSA uses the first rsa_samples rows (RDM is O(n^2))
};

/// For each g: k = per_granularity_k(K, N, g); FVU and RSA of the g-prefix
/// model on `x`. Pass an already permuted model to evaluate a pruned coder.
std::vector<FrontierPoint> progressive_frontier(const SaeParams& params, const Matrix& x,
                                                const std::vector<std::size_t>& granularities, std::size_t full_k,
                                                const std::string& model_id, const FrontierOptions& opts = {});

struct FrontierModel {
  std::string model_id;
  const SaeParams* params = nullptr;
  std::size_t k = 0;
};

/// Full-width (g = N) FVU/RSA for each model.
std::vector<FrontierPoint> sparsity_frontier(const std::vector<FrontierModel>& models, const Matrix& x,
                                             const FrontierOptions& opts = {});

/// 2x2 Pearson matrix over {fvu, rsa}; unit diagonal.
std::array<std::array<double, 2>, 2> metric_correlation(const std::vector<FrontierPoint>& points);

struct SplitBlock {
  std::size_t begin = 0;
  std::size_t end = 0;
  double mean_index = 0.0;  // mean over non-excluded features in [begin, end)
};

struct SplitAnalysis {
  std::vector<double> mean_neighbor_index;  // NaN for excluded (zero-norm) features
  std::vector<std::size_t> excluded;
  std::vector<SplitBlock> blocks;
  double max_block_jump = 0.0;  // max |mean(block b+1) - mean(block b)|
};

/// For each decoder row, the mean index of its top_m most cosine-similar other
/// rows (ties -> lower index). `block_edges` are ascending block ends; the last
/// must equal N. Zero-norm rows are excluded from both sides.
SplitAnalysis feature_split_analysis(const Matrix& w_dec, std::size_t top_m,
                                     const std::vector<std::size_t>& block_edges);

/// CSV: model_id,granularity,k,fvu,rsa
void write_frontier_csv(const std::filesystem::path& path, const std::vector<FrontierPoint>& points);
std::vector<FrontierPoint> read_frontier_csv(const std::filesystem::path& path);

}  // namespace psae
