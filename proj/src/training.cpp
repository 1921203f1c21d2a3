// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include "psae/training.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace psae {
namespace {

constexpr std::uint64_t kGranularityStreamSalt = 0xD1B54A32D192ED03ull;

// Gradient accumulators with the encoder stored transposed (N x D) so that
// per-latent updates touch contiguous memory.
struct Accum {
  MatrixD w_enc_t;
  MatrixD w_dec;
  std::vector<double> b_enc;
  std::vector<double> b_center;

  Accum(std::size_t n, std::size_t d) : w_enc_t(n, d), w_dec(n, d), b_enc(n, 0.0), b_center(d, 0.0) {}
};

// Sparse per-sample gradient w.r.t. pre-activations.
struct SparseGrad {
  std::vector<double> dense;
  std::vector<std::uint32_t> touched;

  explicit SparseGrad(std::size_t n) : dense(n, 0.0) {}

  void add(std::uint32_t j, double g) {
    if (dense[j] == 0.0) touched.push_back(j);
    dense[j] += g;
    // A contribution that cancels to exactly 0 would be re-added to `touched`;
    // flush() deduplicates.
  }

  template <typename Fn>
  void flush(Fn&& fn) {
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (auto j : touched) {
      fn(j, dense[j]);
      dense[j] = 0.0;
    }
    touched.clear();
  }
};

// Pushes pre-activation gradients back through pre = xc . W_enc + b_enc.
void backprop_encoder(SparseGrad& dp, std::span<const double> xc, Accum& acc) {
  const std::size_t d = xc.size();
  dp.flush([&](std::uint32_t j, double g) {
    if (g == 0.0) return;
    acc.b_enc[j] += g;
    double* row = acc.w_enc_t.row(j).data();
    for (std::size_t c = 0; c < d; ++c) row[c] += g * xc[c];
  });
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ArgumentError("train: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ArgumentError("train: betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ArgumentError("train: eps must be > 0");
  if (!(weight_decay >= 0.0)) throw ArgumentError("train: weight_decay must be >= 0");
  if (batch_size == 0) throw ArgumentError("train: batch_size must be >= 1");
}

Gradients Gradients::zeros_like(const SaeParams& params) {
  Gradients g;
  g.w_enc = MatrixD(params.d(), params.n());
  g.w_dec = MatrixD(params.n(), params.d());
  g.b_center.assign(params.d(), 0.0);
  g.b_enc.assign(params.n(), 0.0);
  return g;
}

GradResult compute_grads(const SaeParams& params, const Matrix& batch, const GranularitySchedule& schedule,
                         std::span<const std::uint8_t> dead_mask, const SaeConfig& cfg) {
  const std::size_t n = params.n();
  const std::size_t d = params.d();
  const std::size_t bsz = batch.rows();
  if (bsz == 0) throw ArgumentError("compute_grads: empty batch");
  if (batch.cols() != d) throw ArgumentError(fmt::format("compute_grads: batch dim {} != D={}", batch.cols(), d));
  if (dead_mask.size() != n) throw ArgumentError("compute_grads: dead mask length != N");
  schedule.validate(n);

  const std::size_t levels = schedule.sizes.size();
  std::vector<std::size_t> ks(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    ks[l] = schedule.sizes[l] == n ? schedule.full_k : per_granularity_k(schedule.full_k, n, schedule.sizes[l]);
  }

  const MatrixD pre = preactivations(params, batch, n);
  const std::size_t kaux = aux_k(n, dead_mask);
  std::vector<std::uint32_t> dead;
  if (kaux > 0) {
    for (std::size_t j = 0; j < n; ++j)
      if (dead_mask[j]) dead.push_back(static_cast<std::uint32_t>(j));
  }

  Accum main(n, d);
  Accum aux(kaux > 0 ? n : 0, kaux > 0 ? d : 0);
  SparseGrad dp_main(n);
  SparseGrad dp_aux(kaux > 0 ? n : 0);

  std::vector<double> recon_sum(levels, 0.0);
  double l1_sum = 0.0;
  double aux_num = 0.0;
  double e_sq_sum = 0.0;
  std::vector<double> e_sum(d, 0.0);

  std::vector<double> xc(d), xhat(d), r(d), e(d), ehat(d);
  std::vector<std::uint32_t> scratch, sel, sel_aux(kaux);
  std::vector<double> dead_pre(dead.size());
  SparseCodeBatch full_codes(bsz, n, ks.back());
  const double inv_b = 1.0 / static_cast<double>(bsz);

  for (std::size_t i = 0; i < bsz; ++i) {
    auto x = batch.row(i);
    auto p = pre.row(i);
    for (std::size_t c = 0; c < d; ++c) {
      xc[c] = static_cast<double>(x[c]) - static_cast<double>(params.b_center[c]);
    }

    for (std::size_t l = 0; l < levels; ++l) {
      const std::size_t m = schedule.sizes[l];
      const double weight = schedule.weights[l];
      const bool full = l + 1 == levels;
      if (weight == 0.0 && !full) continue;
      sel.resize(ks[l]);
      topk_indices(p.first(m), ks[l], scratch, sel);

      for (std::size_t c = 0; c < d; ++c) xhat[c] = params.b_center[c];
      for (auto j : sel) {
        const double v = p[j];
        const float* w = params.w_dec.row(j).data();
        for (std::size_t c = 0; c < d; ++c) xhat[c] += v * static_cast<double>(w[c]);
      }
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        r[c] = xhat[c] - static_cast<double>(x[c]);
        sq += r[c] * r[c];
      }
      recon_sum[l] += sq;

      if (weight != 0.0) {
        const double coef = 2.0 * weight * inv_b;
        for (auto j : sel) {
          const double v = p[j];
          double* gw = main.w_dec.row(j).data();
          const float* w = params.w_dec.row(j).data();
          double dot = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            gw[c] += coef * v * r[c];
            dot += r[c] * static_cast<double>(w[c]);
          }
          dp_main.add(j, coef * dot);
        }
        for (std::size_t c = 0; c < d; ++c) main.b_center[c] += coef * r[c];
      }

      if (full) {
        std::copy(sel.begin(), sel.end(), full_codes.indices(i).begin());
        auto vals = full_codes.values(i);
        for (std::size_t q = 0; q < sel.size(); ++q) vals[q] = static_cast<float>(p[sel[q]]);
        if (cfg.sparsity_coeff != 0.0) {
          for (auto j : sel) {
            const double v = p[j];
            l1_sum += std::abs(v);
            if (v != 0.0) dp_main.add(j, cfg.sparsity_coeff * inv_b * (v > 0.0 ? 1.0 : -1.0));
          }
        }
        if (kaux > 0) {
          for (std::size_t c = 0; c < d; ++c) {
            e[c] = -r[c];
            e_sum[c] += e[c];
            e_sq_sum += e[c] * e[c];
          }
          for (std::size_t q = 0; q < dead.size(); ++q) dead_pre[q] = p[dead[q]];
          topk_indices(dead_pre, kaux, scratch, sel_aux);
          std::fill(ehat.begin(), ehat.end(), 0.0);
          for (auto q : sel_aux) {
            const double v = dead_pre[q];
            const float* w = params.w_dec.row(dead[q]).data();
            for (std::size_t c = 0; c < d; ++c) ehat[c] += v * static_cast<double>(w[c]);
          }
          for (std::size_t c = 0; c < d; ++c) {
            const double diff = ehat[c] - e[c];
            aux_num += diff * diff;
            ehat[c] = diff;  // reuse as the residual of the aux reconstruction
          }
          for (auto q : sel_aux) {
            const std::uint32_t j = dead[q];
            const double v = dead_pre[q];
            double* gw = aux.w_dec.row(j).data();
            const float* w = params.w_dec.row(j).data();
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              gw[c] += 2.0 * v * ehat[c];
              dot += ehat[c] * static_cast<double>(w[c]);
            }
            dp_aux.add(j, 2.0 * dot);
          }
        }
      }
    }
    backprop_encoder(dp_main, xc, main);
    if (kaux > 0) backprop_encoder(dp_aux, xc, aux);
  }

  GradResult out;
  out.full_codes = std::move(full_codes);
  auto& loss = out.loss;
  loss.recon.resize(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    loss.recon[l] = recon_sum[l] * inv_b;
    loss.total += schedule.weights[l] * loss.recon[l];
  }
  loss.total += cfg.sparsity_coeff * l1_sum * inv_b;

  double aux_factor = 0.0;
  if (kaux > 0) {
    double mean_sq = 0.0;
    for (double s : e_sum) mean_sq += s * s;
    const double den = e_sq_sum - mean_sq * inv_b;
    if (den > 0.0) {
      loss.aux = aux_num / den;
      loss.total += cfg.aux_scale * loss.aux;
      aux_factor = cfg.aux_scale / den;
    }
  }
  if (!std::isfinite(loss.total)) {
    throw DivergenceError(fmt::format("non-finite loss (recon={}, aux={})", loss.recon.back(), loss.aux));
  }

  // Fold the aux accumulators in with their now-known normalizer.
  if (aux_factor != 0.0) {
    for (std::size_t q = 0; q < main.w_dec.size(); ++q) {
      main.w_dec.data()[q] += aux_factor * aux.w_dec.data()[q];
      main.w_enc_t.data()[q] += aux_factor * aux.w_enc_t.data()[q];
    }
    for (std::size_t j = 0; j < n; ++j) main.b_enc[j] += aux_factor * aux.b_enc[j];
  }

  Gradients& g = out.grads;
  g.w_dec = std::move(main.w_dec);
  g.b_enc = std::move(main.b_enc);
  g.w_enc = MatrixD(d, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) g.w_enc(c, j) = main.w_enc_t(j, c);
  // Encoder path into b_center: d pre / d b_center = -W_enc, summed over the batch.
  g.b_center = std::move(main.b_center);
  for (std::size_t c = 0; c < d; ++c) {
    const float* w = params.w_enc.row(c).data();
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(w[j]) * g.b_enc[j];
    g.b_center[c] -= s;
  }
  return out;
}

AdamWState AdamWState::for_params(const SaeParams& params) {
  AdamWState s;
  s.m_w_enc.assign(params.w_enc.size(), 0.0);
  s.v_w_enc.assign(params.w_enc.size(), 0.0);
  s.m_w_dec.assign(params.w_dec.size(), 0.0);
  s.v_w_dec.assign(params.w_dec.size(), 0.0);
  s.m_b_center.assign(params.b_center.size(), 0.0);
  s.v_b_center.assign(params.b_center.size(), 0.0);
  s.m_b_enc.assign(params.b_enc.size(), 0.0);
  s.v_b_enc.assign(params.b_enc.size(), 0.0);
  return s;
}

void adamw_update(std::span<float> theta, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::uint64_t t, const TrainConfig& cfg) {
  if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
    throw ArgumentError("adamw_update: buffer shape mismatch");
  }
  if (t == 0) throw ArgumentError("adamw_update: step counter starts at 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    const double th = theta[i];
    theta[i] = static_cast<float>(th - cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * th));
  }
}

void adamw_step(AdamWState& state, SaeParams& params, const Gradients& grads, const TrainConfig& cfg,
                bool unit_norm_decoder) {
  state.t += 1;
  adamw_update(params.w_enc.data(), grads.w_enc.data(), state.m_w_enc, state.v_w_enc, state.t, cfg);
  adamw_update(params.w_dec.data(), grads.w_dec.data(), state.m_w_dec, state.v_w_dec, state.t, cfg);
  adamw_update(params.b_center, grads.b_center, state.m_b_center, state.v_b_center, state.t, cfg);
  adamw_update(params.b_enc, grads.b_enc, state.m_b_enc, state.v_b_enc, state.t, cfg);
  if (unit_norm_decoder) normalize_decoder_rows(params);
}

DeadFeatureTracker::DeadFeatureTracker(std::size_t n, std::uint64_t window)
    : counts_(n, 0), window_(window), mask_(n, 0) {
  if (window == 0) throw ArgumentError("dead window must be >= 1");
}

const DeadMask& DeadFeatureTracker::update(const SparseCodeBatch& codes) {
  if (codes.dim() != counts_.size()) throw ArgumentError("DeadFeatureTracker: code dim != N");
  std::vector<std::uint8_t> active(counts_.size(), 0);
  for (std::size_t i = 0; i < codes.n_samples(); ++i) {
    auto idx = codes.indices(i);
    auto val = codes.values(i);
    for (std::size_t j = 0; j < codes.k(); ++j)
      if (val[j] != 0.0f) active[idx[j]] = 1;
  }
  for (std::size_t j = 0; j < counts_.size(); ++j) {
    counts_[j] = active[j] ? 0 : counts_[j] + codes.n_samples();
    mask_[j] = counts_[j] >= window_ ? 1 : 0;
  }
  return mask_;
}

std::size_t DeadFeatureTracker::n_dead() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

TrainResult train(SaeParams params, BatchStream& stream, const GranularitySchedule& schedule,
                  const SaeConfig& sae_cfg, const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  sae_cfg.validate();
  params.validate();
  if (params.n() != sae_cfg.n || params.d() != sae_cfg.d) throw ArgumentError("train: params do not match config");
  schedule.validate(params.n());

  TrainResult result;
  result.optimizer = AdamWState::for_params(params);
  DeadFeatureTracker tracker(params.n(), cfg.dead_window);
  std::mt19937_64 granularity_rng(cfg.seed ^ kGranularityStreamSalt);

  std::uint64_t seen = 0;
  while (seen < cfg.n_tokens) {
    auto next = stream.next();
    if (!next) break;
    Matrix batch = std::move(*next);
    if (batch.cols() != params.d()) {
      throw ArgumentError(fmt::format("train: data dim {} != D={}", batch.cols(), params.d()));
    }
    if (batch.rows() == 0) continue;
    const std::uint64_t room = cfg.n_tokens - seen;
    if (batch.rows() > room) batch = slice_rows(batch, 0, static_cast<std::size_t>(room));

    if (cfg.init_center && result.optimizer.t == 0) {
      std::vector<double> mean(params.d(), 0.0);
      for (std::size_t i = 0; i < batch.rows(); ++i)
        for (std::size_t c = 0; c < params.d(); ++c) mean[c] += batch(i, c);
      for (std::size_t c = 0; c < params.d(); ++c) {
        params.b_center[c] = static_cast<float>(mean[c] / static_cast<double>(batch.rows()));
      }
    }

    const GranularitySchedule step = step_schedule(schedule, granularity_rng);
    // Dead-latent bookkeeping uses the full-width codes of the current params.
    const DeadMask mask = tracker.mask();
    GradResult gr;
    try {
      gr = compute_grads(params, batch, step, mask, sae_cfg);
    } catch (const DivergenceError& e) {
      throw DivergenceError(fmt::format("step {} (after {} samples): {}", result.optimizer.t + 1, seen, e.what()));
    }
    tracker.update(gr.full_codes);
    adamw_step(result.optimizer, params, gr.grads, cfg, sae_cfg.unit_norm_decoder);
    seen += batch.rows();

    StepLog entry;
    entry.step = result.optimizer.t;
    entry.samples = seen;
    entry.sampled_m = schedule.mode == ScheduleMode::kSampled ? step.sizes.front() : 0;
    entry.total = gr.loss.total;
    entry.recon = gr.loss.recon.back();
    entry.aux = gr.loss.aux;
    entry.n_dead = tracker.n_dead();
    result.log.push_back(entry);
    if (on_step) on_step(entry);
  }
  result.params = std::move(params);
  return result;
}

Arch parse_arch(std::string_view name) {
  if (name == "topk") return Arch::kTopK;
  if (name == "matryoshka") return Arch::kMatryoshka;
  if (name == "matryoshka-sampled") return Arch::kMatryoshkaSampled;
  throw ArgumentError(fmt::format("unknown architecture '{}' (expected topk, matryoshka, matryoshka-sampled)", name));
}

std::string_view arch_name(Arch arch) {
  switch (arch) {
    case Arch::kTopK:
      return "topk";
    case Arch::kMatryoshka:
      return "matryoshka";
    case Arch::kMatryoshkaSampled:
      return "matryoshka-sampled";
  }
  return "unknown";
}

GranularitySchedule make_schedule(Arch arch, std::span<const std::size_t> sizes, std::size_t full_k) {
  if (sizes.empty()) throw ArgumentError("make_schedule: no sizes given");
  const std::size_t n = sizes.back();
  switch (arch) {
    case Arch::kTopK:
      return GranularitySchedule::single(n, full_k);
    case Arch::kMatryoshka:
      return GranularitySchedule::fixed({sizes.begin(), sizes.end()}, full_k);
    case Arch::kMatryoshkaSampled:
      return GranularitySchedule::sampled(n, full_k);
  }
  throw ArgumentError("make_schedule: unknown architecture");
}

Arch arch_of(const GranularitySchedule& schedule) {
  if (schedule.mode == ScheduleMode::kSampled) return Arch::kMatryoshkaSampled;
  return schedule.sizes.size() > 1 ? Arch::kMatryoshka : Arch::kTopK;
}

}  // namespace psae
