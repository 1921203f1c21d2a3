// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include "psae/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include <fmt/format.h>

#include "psae/matryoshka.hpp"

namespace psae {

StatsAccumulator::StatsAccumulator(std::size_t n) : sum_sq_(n, 0.0), fired_(n, 0) {}

void StatsAccumulator::add(const SparseCodeBatch& codes) {
  if (codes.dim() != sum_sq_.size()) throw ArgumentError("StatsAccumulator: code dim != N");
  for (std::size_t i = 0; i < codes.n_samples(); ++i) {
    auto idx = codes.indices(i);
    auto val = codes.values(i);
    for (std::size_t j = 0; j < codes.k(); ++j) {
      const double v = val[j];
      if (v == 0.0) continue;
      sum_sq_[idx[j]] += v * v;
      fired_[idx[j]] += 1;
    }
  }
  n_samples_ += codes.n_samples();
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
  if (other.sum_sq_.size() != sum_sq_.size()) throw ArgumentError("StatsAccumulator: size mismatch in merge");
  for (std::size_t j = 0; j < sum_sq_.size(); ++j) {
    sum_sq_[j] += other.sum_sq_[j];
    fired_[j] += other.fired_[j];
  }
  n_samples_ += other.n_samples_;
}

FeatureStats StatsAccumulator::finalize() const {
  if (n_samples_ == 0) throw ArgumentError("feature statistics need at least one sample");
  FeatureStats s;
  s.n_samples = n_samples_;
  const double inv = 1.0 / static_cast<double>(n_samples_);
  s.mean_sq_act.resize(sum_sq_.size());
  s.fire_freq.resize(sum_sq_.size());
  for (std::size_t j = 0; j < sum_sq_.size(); ++j) {
    s.mean_sq_act[j] = sum_sq_[j] * inv;
    s.fire_freq[j] = static_cast<double>(fired_[j]) * inv;
  }
  return s;
}

FeatureStats collect_stats(const SaeParams& params, BatchStream& stream, std::size_t k) {
  StatsAccumulator acc(params.n());
  while (auto batch = stream.next()) {
    acc.add(encode(params, *batch, k, params.n()));
  }
  if (acc.n_samples() == 0) throw ArgumentError("collect_stats: empty stream");
  return acc.finalize();
}

RankCriterion parse_criterion(std::string_view name) {
  if (name == "mean-sq" || name == "mean_sq" || name == "act2") return RankCriterion::kMeanSq;
  if (name == "freq") return RankCriterion::kFreq;
  throw ArgumentError(fmt::format("unknown ranking criterion '{}' (expected mean-sq or freq)", name));
}

std::string_view criterion_name(RankCriterion c) { return c == RankCriterion::kMeanSq ? "mean-sq" : "freq"; }

std::vector<std::uint32_t> rank_features(const FeatureStats& stats, RankCriterion criterion) {
  const auto& key = criterion == RankCriterion::kMeanSq ? stats.mean_sq_act : stats.fire_freq;
  std::vector<std::uint32_t> perm(key.size());
  std::iota(perm.begin(), perm.end(), 0u);
  std::stable_sort(perm.begin(), perm.end(), [&key](std::uint32_t a, std::uint32_t b) { return key[a] > key[b]; });
  return perm;
}

PrunedSae prune_to_granularity(const SaeParams& params, std::span<const std::uint32_t> perm, std::size_t g,
                               std::size_t full_k) {
  const std::size_t n = params.n();
  const std::size_t d = params.d();
  if (g == 0) throw ArgumentError("prune_to_granularity: granularity must be >= 1");
  if (g > n) throw ArgumentError(fmt::format("prune_to_granularity: granularity {} exceeds N={}", g, n));
  check_permutation(perm, n);
  PrunedSae out;
  out.k = per_granularity_k(full_k, n, g);
  auto& p = out.params;
  p.b_center = params.b_center;
  p.w_enc = Matrix(d, g);
  p.w_dec = Matrix(g, d);
  p.b_enc.resize(g);
  for (std::size_t i = 0; i < g; ++i) {
    const std::size_t src = perm[i];
    p.b_enc[i] = params.b_enc[src];
    std::copy_n(params.w_dec.row(src).begin(), d, p.w_dec.row(i).begin());
    for (std::size_t c = 0; c < d; ++c) p.w_enc(c, i) = params.w_enc(c, src);
  }
  return out;
}

void write_permutation(const std::filesystem::path& path, std::span<const std::uint32_t> perm) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  for (auto p : perm) out << p << '\n';
  if (!out) throw std::runtime_error(fmt::format("write failed for {}", path.string()));
}

std::vector<std::uint32_t> read_permutation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  std::vector<std::uint32_t> perm;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(line, &used);
    } catch (const std::exception&) {
      throw FormatError(fmt::format("permutation line {} is not an integer", line_no), line_no);
    }
    if (used != line.size() || v > UINT32_MAX) {
      throw FormatError(fmt::format("permutation line {} is not an integer", line_no), line_no);
    }
    perm.push_back(static_cast<std::uint32_t>(v));
  }
  check_permutation(perm, perm.size());
  return perm;
}

}  // namespace psae
