// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include "psae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "psae/data.hpp"
#include "psae/matryoshka.hpp"
#include "psae/parallel.hpp"

namespace psae {

double fvu(const Matrix& x, const Matrix& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) throw ArgumentError("fvu: shape mismatch");
  if (x.size() == 0) throw UndefinedError("fvu: empty input");
  double mean = 0.0;
  for (float v : x.data()) mean += v;
  mean /= static_cast<double>(x.size());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xv = x.data()[i];
    const double diff = xv - static_cast<double>(x_hat.data()[i]);
    num += diff * diff;
    den += (xv - mean) * (xv - mean);
  }
  if (den <= 0.0) throw UndefinedError("fvu: input has zero variance");
  return num / den;
}

Rdm rdm(const Matrix& a) {
  const std::size_t n = a.rows();
  if (n < 2) throw ArgumentError("rdm: need at least two rows");
  Rdm out;
  out.n = n;
  out.values.resize(n * (n - 1) / 2);
  parallel_for(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      // Offset of pair (i, i+1) in row-major upper-triangle order.
      std::size_t pos = i * n - i * (i + 1) / 2;
      auto ri = a.row(i);
      for (std::size_t j = i + 1; j < n; ++j, ++pos) {
        auto rj = a.row(j);
        double s = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c) {
          const double diff = static_cast<double>(ri[c]) - static_cast<double>(rj[c]);
          s += diff * diff;
        }
        out.values[pos] = s;
      }
    }
  });
  return out;
}

double rsa_score(const Matrix& a, const Matrix& a_hat) {
  if (a.rows() != a_hat.rows()) throw ArgumentError("rsa_score: row count mismatch");
  if (a.rows() < 3) throw ArgumentError("rsa_score: need at least three samples");
  const Rdm ra = rdm(a);
  const Rdm rb = rdm(a_hat);
  return pearson(ra.values, rb.values);
}

namespace {

double mean_l0(const SparseCodeBatch& codes) {
  if (codes.n_samples() == 0) return 0.0;
  std::size_t nz = 0;
  for (std::size_t i = 0; i < codes.n_samples(); ++i)
    for (float v : codes.values(i)) nz += v != 0.0f;
  return static_cast<double>(nz) / static_cast<double>(codes.n_samples());
}

FrontierPoint evaluate_level(const SaeParams& params, const Matrix& x, const MatrixD& pre, std::size_t g,
                             std::size_t k, const std::string& id, const FrontierOptions& opts) {
  const SparseCodeBatch codes = topk_codes(pre, g, k);
  const Matrix x_hat = decode(params, codes, g);
  FrontierPoint pt;
  pt.model_id = id;
  pt.granularity = g;
  pt.k = k;
  pt.fvu = fvu(x, x_hat);
  pt.mean_l0 = mean_l0(codes);
  const std::size_t rs = std::min(opts.rsa_samples, x.rows());
  if (rs >= 3) {
    pt.rsa = rsa_score(slice_rows(x, 0, rs), slice_rows(x_hat, 0, rs));
  } else {
    pt.rsa = std::numeric_limits<double>::quiet_NaN();
  }
  return pt;
}

}  // namespace

std::vector<FrontierPoint> progressive_frontier(const SaeParams& params, const Matrix& x,
                                                const std::vector<std::size_t>& granularities, std::size_t full_k,
                                                const std::string& model_id, const FrontierOptions& opts) {
  const std::size_t n = params.n();
  for (auto g : granularities) {
    if (g == 0 || g > n) throw ArgumentError(fmt::format("frontier: granularity {} outside [1, {}]", g, n));
  }
  const MatrixD pre = preactivations(params, x, n);
  std::vector<FrontierPoint> points;
  for (auto g : granularities) {
    const std::size_t k = g == n ? full_k : per_granularity_k(full_k, n, g);
    points.push_back(evaluate_level(params, x, pre, g, k, model_id, opts));
  }
  return points;
}

std::vector<FrontierPoint> sparsity_frontier(const std::vector<FrontierModel>& models, const Matrix& x,
                                             const FrontierOptions& opts) {
  std::vector<FrontierPoint> points;
  for (const auto& m : models) {
    if (m.params == nullptr) throw ArgumentError("sparsity_frontier: null model");
    const std::size_t n = m.params->n();
    if (m.k > n) throw ArgumentError(fmt::format("sparsity_frontier: k={} exceeds N={}", m.k, n));
    const MatrixD pre = preactivations(*m.params, x, n);
    points.push_back(evaluate_level(*m.params, x, pre, n, m.k, m.model_id, opts));
  }
  return points;
}

std::array<std::array<double, 2>, 2> metric_correlation(const std::vector<FrontierPoint>& points) {
  if (points.size() < 3) throw ArgumentError("metric_correlation: need at least three points");
  std::vector<double> f, r;
  for (const auto& p : points) {
    f.push_back(p.fvu);
    r.push_back(p.rsa);
  }
  const double c = pearson(f, r);
  return {{{1.0, c}, {c, 1.0}}};
}

SplitAnalysis feature_split_analysis(const Matrix& w_dec, std::size_t top_m,
                                     const std::vector<std::size_t>& block_edges) {
  const std::size_t n = w_dec.rows();
  const std::size_t d = w_dec.cols();
  if (top_m == 0) throw ArgumentError("feature_split_analysis: top_m must be >= 1");
  if (n < top_m + 1) throw ArgumentError("feature_split_analysis: need N >= top_m + 1");
  if (block_edges.empty() || block_edges.back() != n) {
    throw ArgumentError("feature_split_analysis: block edges must end at N");
  }
  for (std::size_t b = 0; b < block_edges.size(); ++b) {
    if (block_edges[b] == 0 || (b > 0 && block_edges[b] <= block_edges[b - 1])) {
      throw ArgumentError("feature_split_analysis: block edges must be strictly ascending");
    }
  }

  SplitAnalysis out;
  MatrixD unit(n, d);
  std::vector<std::uint8_t> valid(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (float v : w_dec.row(i)) norm2 += static_cast<double>(v) * v;
    if (norm2 <= 0.0) {
      valid[i] = 0;
      out.excluded.push_back(i);
      continue;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t c = 0; c < d; ++c) unit(i, c) = w_dec(i, c) * inv;
  }
  if (!out.excluded.empty()) {
    std::cerr << fmt::format("warning: feature_split_analysis excluded {} zero-norm decoder rows\n",
                             out.excluded.size());
  }
  const std::size_t n_valid = n - out.excluded.size();
  if (n_valid < top_m + 1) throw ArgumentError("feature_split_analysis: too few nonzero decoder rows");

  out.mean_neighbor_index.assign(n, std::numeric_limits<double>::quiet_NaN());
  constexpr double kNever = -std::numeric_limits<double>::infinity();
  parallel_for(n, [&](std::size_t i0, std::size_t i1) {
    std::vector<double> sim(n);
    std::vector<std::uint32_t> scratch, nearest(top_m);
    for (std::size_t i = i0; i < i1; ++i) {
      if (!valid[i]) continue;
      auto ui = unit.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i || !valid[j]) {
          sim[j] = kNever;
          continue;
        }
        auto uj = unit.row(j);
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += ui[c] * uj[c];
        sim[j] = s;
      }
      topk_indices(sim, top_m, scratch, nearest);
      double sum = 0.0;
      for (auto j : nearest) sum += static_cast<double>(j);
      out.mean_neighbor_index[i] = sum / static_cast<double>(top_m);
    }
  });

  std::size_t begin = 0;
  for (auto end : block_edges) {
    SplitBlock blk{begin, end, 0.0};
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (!valid[i]) continue;
      sum += out.mean_neighbor_index[i];
      ++count;
    }
    blk.mean_index = count > 0 ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
    out.blocks.push_back(blk);
    begin = end;
  }
  for (std::size_t b = 1; b < out.blocks.size(); ++b) {
    const double jump = std::abs(out.blocks[b].mean_index - out.blocks[b - 1].mean_index);
    if (std::isfinite(jump)) out.max_block_jump = std::max(out.max_block_jump, jump);
  }
  return out;
}

void write_frontier_csv(const std::filesystem::path& path, const std::vector<FrontierPoint>& points) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << "model_id,granularity,k,fvu,rsa\n";
  for (const auto& p : points) {
    out << fmt::format("{},{},{},{:.17g},{:.17g}\n", p.model_id, p.granularity, p.k, p.fvu, p.rsa);
  }
  if (!out) throw std::runtime_error(fmt::format("write failed for {}", path.string()));
}

std::vector<FrontierPoint> read_frontier_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != "model_id,granularity,k,fvu,rsa") {
    throw FormatError("frontier CSV: unexpected header", 0);
  }
  std::vector<FrontierPoint> points;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, g, k, f, r;
    if (!std::getline(ss, id, ',') || !std::getline(ss, g, ',') || !std::getline(ss, k, ',') ||
        !std::getline(ss, f, ',') || !std::getline(ss, r)) {
      throw FormatError(fmt::format("frontier CSV: malformed line {}", line_no), line_no);
    }
    FrontierPoint p;
    p.model_id = id;
    try {
      p.granularity = std::stoul(g);
      p.k = std::stoul(k);
      p.fvu = std::stod(f);
      p.rsa = std::stod(r);
    } catch (const std::exception&) {
      throw FormatError(fmt::format("frontier CSV: bad number on line {}", line_no), line_no);
    }
    points.push_back(std::move(p));
  }
  return points;
}

}  // namespace psae
