// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include "psae/analysis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "psae/parallel.hpp"

namespace psae {

std::vector<double> eigen_spectrum(const Matrix& w_dec) {
  const std::size_t n = w_dec.rows();
  const std::size_t d = w_dec.cols();
  if (n < 2) throw ArgumentError("eigen_spectrum: need at least two dictionary rows");
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) mean[c] += w_dec(i, c);
  for (auto& m : mean) m /= static_cast<double>(n);

  MatrixD cov(d, d);
  std::vector<double> centered(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) centered[c] = w_dec(i, c) - mean[c];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) cov(a, b) += centered[a] * centered[b];
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) /= static_cast<double>(n);
      cov(b, a) = cov(a, b);
    }
  }
  double trace = 0.0;
  for (std::size_t a = 0; a < d; ++a) trace += cov(a, a);

  auto eig = sym_eigvals(cov);
  // Rounding can push zero eigenvalues slightly negative.
  const double floor = -1e-9 * std::max(1.0, trace);
  for (auto& e : eig) {
    if (e < 0.0 && e >= floor) e = 0.0;
    if (e < floor) throw CorruptionError(fmt::format("eigen_spectrum: covariance eigenvalue {} is negative", e));
  }
  return eig;
}

PowerLawFit fit_power_law(std::span<const double> values, double lo, double hi) {
  if (!(lo >= 0.0 && hi <= 1.0 && lo < hi)) {
    throw ArgumentError(fmt::format("fit_power_law: bad quantile range [{}, {}]", lo, hi));
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  PowerLawFit fit;
  fit.fit_lo = lo;
  fit.fit_hi = hi;
  std::vector<double> positive;
  for (double v : sorted) {
    if (v > 0.0) {
      positive.push_back(v);
    } else {
      ++fit.n_excluded_zeros;
    }
  }
  const std::size_t n = positive.size();
  const auto begin = static_cast<std::size_t>(std::floor(lo * static_cast<double>(n)));
  const auto end = std::min(n, static_cast<std::size_t>(std::floor(hi * static_cast<double>(n))));
  if (end <= begin || end - begin < 10) {
    throw ArgumentError(fmt::format("fit_power_law: {} positive values in range, need >= 10",
                                    end > begin ? end - begin : 0));
  }
  std::vector<double> ranks, vals;
  for (std::size_t i = begin; i < end; ++i) {
    ranks.push_back(static_cast<double>(i + 1));
    vals.push_back(positive[i]);
  }
  const auto reg = ols_loglog(ranks, vals);
  fit.exponent = reg.slope;
  fit.intercept = reg.intercept;
  fit.r2 = reg.r2;
  fit.n_fitted = ranks.size();
  return fit;
}

double predict_loss(const ScalingLawParams& p, double n, double k, double g) {
  if (!(n >= 1.0 && k >= 1.0 && g >= 1.0)) throw ArgumentError("predict_loss: n, k, g must be >= 1");
  const double lk = std::log(k);
  const double ln = std::log(n);
  const double lg = std::log(g);
  const double main = p.alpha + p.beta_k * lk + p.beta_n * ln + p.beta_g * lg + p.gamma_n * lk * ln +
                      p.gamma_g * lk * lg;
  return std::exp(main) + std::exp(p.zeta + p.eta * lk);
}

double scaling_r2_loglog(const ScalingLawParams& p, std::span<const ScalingObservation> obs) {
  if (obs.size() < 2) throw ArgumentError("scaling_r2_loglog: need at least two observations");
  double mean = 0.0;
  for (const auto& o : obs) mean += std::log(o.loss);
  mean /= static_cast<double>(obs.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& o : obs) {
    const double y = std::log(o.loss);
    const double r = std::log(predict_loss(p, o.n, o.k, o.g)) - y;
    ss_res += r * r;
    ss_tot += (y - mean) * (y - mean);
  }
  if (ss_tot <= 0.0) return ss_res <= 1e-24 ? 1.0 : 0.0;
  return std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
}

namespace {

// The fit runs on standardized log-variables (zero mean, unit spread) so the
// gradient is well scaled; the coefficients map back to the original
// parameterization exactly.
struct Standardization {
  double mu_k = 0, s_k = 1, mu_n = 0, s_n = 1, mu_g = 0, s_g = 1;
};

constexpr std::size_t kMainTerms = 6;  // 1, k, n, g, k*n, k*g
constexpr std::size_t kParams = 8;     // main terms + irreducible (1, k)
using Coeffs = std::array<double, kParams>;

struct Design {
  std::vector<std::array<double, kMainTerms>> main;
  std::vector<std::array<double, 2>> irr;
  std::vector<double> y;
};

Design build_design(std::span<const ScalingObservation> obs, const Standardization& st) {
  Design ds;
  for (const auto& o : obs) {
    const double u = (std::log(o.k) - st.mu_k) / st.s_k;
    const double a = (std::log(o.n) - st.mu_n) / st.s_n;
    const double b = (std::log(o.g) - st.mu_g) / st.s_g;
    ds.main.push_back({1.0, u, a, b, u * a, u * b});
    ds.irr.push_back({1.0, u});
    ds.y.push_back(std::log(o.loss));
  }
  return ds;
}

// Log residuals r_i = log L(x_i) - y_i and their Jacobian rows.
double residuals(const Design& ds, const Coeffs& c, std::vector<double>& r, std::vector<Coeffs>* jac) {
  const std::size_t m = ds.y.size();
  r.resize(m);
  if (jac) jac->resize(m);
  double f = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double lm = 0.0;
    for (std::size_t t = 0; t < kMainTerms; ++t) lm += c[t] * ds.main[i][t];
    const double li = c[6] * ds.irr[i][0] + c[7] * ds.irr[i][1];
    // log(exp(lm) + exp(li)) computed stably.
    const double hi = std::max(lm, li);
    const double em = std::exp(lm - hi);
    const double ei = std::exp(li - hi);
    r[i] = hi + std::log(em + ei) - ds.y[i];
    f += r[i] * r[i];
    if (jac) {
      const double wm = em / (em + ei);
      const double wi = ei / (em + ei);
      auto& row = (*jac)[i];
      for (std::size_t t = 0; t < kMainTerms; ++t) row[t] = wm * ds.main[i][t];
      row[6] = wi * ds.irr[i][0];
      row[7] = wi * ds.irr[i][1];
    }
  }
  return f / static_cast<double>(m);
}

// Solves A x = b in place for symmetric positive definite A; false if A is not.
bool cholesky_solve(std::array<Coeffs, kParams> a, Coeffs& b) {
  for (std::size_t j = 0; j < kParams; ++j) {
    double d = a[j][j];
    for (std::size_t q = 0; q < j; ++q) d -= a[j][q] * a[j][q];
    if (!(d > 0.0)) return false;
    a[j][j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < kParams; ++i) {
      double v = a[i][j];
      for (std::size_t q = 0; q < j; ++q) v -= a[i][q] * a[j][q];
      a[i][j] = v / a[j][j];
    }
  }
  for (std::size_t i = 0; i < kParams; ++i) {
    for (std::size_t q = 0; q < i; ++q) b[i] -= a[i][q] * b[q];
    b[i] /= a[i][i];
  }
  for (std::size_t i = kParams; i-- > 0;) {
    for (std::size_t q = i + 1; q < kParams; ++q) b[i] -= a[q][i] * b[q];
    b[i] /= a[i][i];
  }
  return true;
}

ScalingLawParams to_params(const Coeffs& c, const Standardization& st) {
  ScalingLawParams p;
  p.gamma_n = c[4] / (st.s_k * st.s_n);
  p.gamma_g = c[5] / (st.s_k * st.s_g);
  p.beta_n = c[2] / st.s_n - p.gamma_n * st.mu_k;
  p.beta_g = c[3] / st.s_g - p.gamma_g * st.mu_k;
  p.beta_k = c[1] / st.s_k - p.gamma_n * st.mu_n - p.gamma_g * st.mu_g;
  p.alpha = c[0] - p.beta_k * st.mu_k - p.beta_n * st.mu_n - p.beta_g * st.mu_g - p.gamma_n * st.mu_k * st.mu_n -
            p.gamma_g * st.mu_k * st.mu_g;
  p.eta = c[7] / st.s_k;
  p.zeta = c[6] - p.eta * st.mu_k;
  return p;
}

struct StartResult {
  Coeffs coeffs{};
  double f = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  bool converged = false;
};

// Levenberg-Marquardt on the log residuals.
StartResult descend(const Design& ds, Coeffs c, const ScalingFitOptions& opts) {
  StartResult res;
  std::vector<double> r, rt;
  std::vector<Coeffs> jac;
  double f = residuals(ds, c, r, &jac);
  double lambda = 1e-3;
  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    res.iterations = it + 1;
    std::array<Coeffs, kParams> jtj{};
    Coeffs jtr{};
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t p = 0; p < kParams; ++p) {
        jtr[p] += jac[i][p] * r[i];
        for (std::size_t q = 0; q <= p; ++q) jtj[p][q] += jac[i][p] * jac[i][q];
      }
    double diag_max = 0.0;
    for (std::size_t p = 0; p < kParams; ++p) {
      for (std::size_t q = 0; q < p; ++q) jtj[q][p] = jtj[p][q];
      diag_max = std::max(diag_max, jtj[p][p]);
    }
    if (diag_max == 0.0) {
      res.converged = true;
      break;
    }
    bool accepted = false;
    while (lambda < 1e16) {
      auto a = jtj;
      for (std::size_t p = 0; p < kParams; ++p) a[p][p] += lambda * (jtj[p][p] + 1e-9 * diag_max);
      Coeffs delta = jtr;
      if (cholesky_solve(a, delta)) {
        Coeffs trial = c;
        for (std::size_t p = 0; p < kParams; ++p) trial[p] -= delta[p];
        const double ft = residuals(ds, trial, rt, nullptr);
        if (std::isfinite(ft) && ft < f) {
          const double decrease = f - ft;
          c = trial;
          f = residuals(ds, c, r, &jac);
          lambda = std::max(lambda / 3.0, 1e-12);
          accepted = true;
          if (decrease <= opts.tol * std::max(f, 1e-12)) res.converged = true;
          break;
        }
      }
      lambda *= 4.0;
    }
    if (!accepted || res.converged) {
      // Exhausted damping means no descent direction is left at this precision.
      res.converged = true;
      break;
    }
  }
  res.coeffs = c;
  res.f = f;
  return res;
}

}  // namespace

ScalingFitResult fit_scaling_law(std::span<const ScalingObservation> obs, const ScalingFitOptions& opts) {
  if (obs.size() < 9) throw ArgumentError(fmt::format("fit_scaling_law: {} observations, need >= 9", obs.size()));
  if (opts.starts == 0) throw ArgumentError("fit_scaling_law: need at least one start");
  std::set<double> ns, ks, gs;
  for (const auto& o : obs) {
    if (!(o.loss > 0.0) || !std::isfinite(o.loss)) throw ArgumentError("fit_scaling_law: losses must be > 0");
    if (!(o.n >= 1.0 && o.k >= 1.0 && o.g >= 1.0)) throw ArgumentError("fit_scaling_law: n, k, g must be >= 1");
    ns.insert(o.n);
    ks.insert(o.k);
    gs.insert(o.g);
  }

  ScalingFitResult result;
  auto spread = [&](auto proj, double& mu, double& s, const char* name, std::size_t distinct) {
    double sum = 0.0, sq = 0.0;
    for (const auto& o : obs) sum += std::log(proj(o));
    mu = sum / static_cast<double>(obs.size());
    for (const auto& o : obs) sq += (std::log(proj(o)) - mu) * (std::log(proj(o)) - mu);
    s = std::sqrt(sq / static_cast<double>(obs.size()));
    if (distinct < 2 || s == 0.0) {
      s = 1.0;
      result.degenerate = true;
      result.warnings.push_back(fmt::format(
          "only one distinct value of {}: its coefficients are not identifiable from this data", name));
    }
  };
  Standardization st;
  spread([](const ScalingObservation& o) { return o.k; }, st.mu_k, st.s_k, "k", ks.size());
  spread([](const ScalingObservation& o) { return o.n; }, st.mu_n, st.s_n, "n", ns.size());
  spread([](const ScalingObservation& o) { return o.g; }, st.mu_g, st.s_g, "g", gs.size());

  const Design ds = build_design(obs, st);
  double ybar = 0.0;
  for (double y : ds.y) ybar += y;
  ybar /= static_cast<double>(ds.y.size());

  std::vector<StartResult> runs(opts.starts);
  parallel_for(opts.starts, [&](std::size_t s0, std::size_t s1) {
    for (std::size_t s = s0; s < s1; ++s) {
      std::mt19937_64 rng(opts.seed + 0x9E3779B97F4A7C15ull * (s + 1));
      std::normal_distribution<double> noise(0.0, 0.5);
      Coeffs c{};
      c[0] = ybar + std::log(0.5) + noise(rng);
      for (std::size_t t = 1; t < kMainTerms; ++t) c[t] = 0.3 * noise(rng);
      c[6] = ybar + std::log(0.5) + noise(rng);
      c[7] = 0.3 * noise(rng);
      runs[s] = descend(ds, c, opts);
    }
  });

  std::size_t best = 0;
  for (std::size_t s = 1; s < runs.size(); ++s)
    if (runs[s].f < runs[best].f) best = s;
  const auto& b = runs[best];
  result.params = to_params(b.coeffs, st);
  result.objective = b.f;
  result.iterations = b.iterations;
  result.best_start = best;
  result.converged = b.converged;
  result.r2 = scaling_r2_loglog(result.params, obs);
  const bool any_converged = std::any_of(runs.begin(), runs.end(), [](const StartResult& r) { return r.converged; });
  if (!any_converged) {
    throw FitFailure(fmt::format("scaling-law fit did not converge in {} iterations (best objective {:.3e}, r2 {:.4f})",
                                 opts.max_iters, result.objective, result.r2),
                     result);
  }
  return result;
}

std::vector<ScalingObservation> read_scaling_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw FormatError("scaling CSV: empty file", 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "n,k,g,loss") throw FormatError("scaling CSV: expected header n,k,g,loss", 0);
  std::vector<ScalingObservation> obs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
      if (!std::getline(ss, cell, ',')) throw FormatError(fmt::format("scaling CSV: short line {}", line_no), line_no);
      try {
        std::size_t used = 0;
        v[i] = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw FormatError(fmt::format("scaling CSV: bad number '{}' on line {}", cell, line_no), line_no);
      }
    }
    obs.push_back({v[0], v[1], v[2], v[3]});
  }
  return obs;
}

}  // namespace psae
