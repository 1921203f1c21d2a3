// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "psae/analysis.hpp"
#include "psae/checkpoint.hpp"
#include "psae/data.hpp"
#include "psae/eval.hpp"
#include "psae/ranking.hpp"
#include "psae/training.hpp"

namespace py = pybind11;
using namespace psae;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

std::size_t resolve_k(const Checkpoint& c, std::size_t k, std::size_t width) {
  if (k != 0) return k;
  if (width > c.config.n) throw ArgumentError("granularity exceeds the model width");
  return per_granularity_k(c.config.k, c.config.n, width);
}

Matrix to_matrix(const F32Array& a) {
  if (a.ndim() != 2) throw ArgumentError("expected a 2-D array");
  Matrix m(a.shape(0), a.shape(1));
  std::memcpy(m.data().data(), a.data(), m.size() * sizeof(float));
  return m;
}

py::array_t<float> to_numpy(const Matrix& m) {
  py::array_t<float> out({m.rows(), m.cols()});
  std::memcpy(out.mutable_data(), m.data().data(), m.size() * sizeof(float));
  return out;
}

py::array_t<float> vec_to_numpy(const std::vector<float>& v) {
  const std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(v.size())};
  const std::vector<py::ssize_t> strides{static_cast<py::ssize_t>(sizeof(float))};
  return py::array_t<float>(shape, strides, v.data());
}

py::dict point_dict(const FrontierPoint& p) {
  py::dict d;
  d["model_id"] = p.model_id;
  d["granularity"] = p.granularity;
  d["k"] = p.k;
  d["fvu"] = p.fvu;
  d["rsa"] = p.rsa;
  return d;
}

}  // namespace

PYBIND11_MODULE(_psae, m) {
  m.doc() = "TopK and Matryoshka sparse autoencoders";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<UndefinedError>(m, "UndefinedError", PyExc_ArithmeticError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);
  py::register_exception<CorruptionError>(m, "CorruptionError", PyExc_RuntimeError);

  m.def(
      "gen_superposition",
      [](std::size_t n_samples, std::size_t n_true, std::size_t dim, double p_active, double exponent,
         double noise_std, std::uint64_t seed) {
        SuperpositionConfig cfg;
        cfg.n_true = n_true;
        cfg.d = dim;
        cfg.p_active = p_active;
        cfg.importance_exponent = exponent;
        cfg.noise_std = noise_std;
        cfg.seed = seed;
        return to_numpy(gen_superposition(cfg, n_samples).data);
      },
      py::arg("n_samples"), py::arg("n_true") = 512, py::arg("dim") = 64, py::arg("p_active") = 0.05,
      py::arg("exponent") = -0.6, py::arg("noise_std") = 0.0, py::arg("seed") = 0);

  py::class_<Checkpoint>(m, "Sae")
      .def_static(
          "init",
          [](std::size_t n, std::size_t d, std::size_t k, std::uint64_t seed) {
            SaeConfig cfg{n, d, k};
            cfg.validate();
            return Checkpoint{cfg, GranularitySchedule::single(n, k), init_params(cfg, seed), std::nullopt};
          },
          py::arg("n"), py::arg("d"), py::arg("k"), py::arg("seed") = 0)
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(p, c); })
      .def_property_readonly("n", [](const Checkpoint& c) { return c.config.n; })
      .def_property_readonly("d", [](const Checkpoint& c) { return c.config.d; })
      .def_property_readonly("k", [](const Checkpoint& c) { return c.config.k; })
      .def_property_readonly("sizes", [](const Checkpoint& c) { return c.schedule.sizes; })
      .def_property_readonly("w_enc", [](const Checkpoint& c) { return to_numpy(c.params.w_enc); })
      .def_property_readonly("w_dec", [](const Checkpoint& c) { return to_numpy(c.params.w_dec); })
      .def_property_readonly("b_center", [](const Checkpoint& c) { return vec_to_numpy(c.params.b_center); })
      .def_property_readonly("b_enc", [](const Checkpoint& c) { return vec_to_numpy(c.params.b_enc); })
      .def(
          "encode",
          [](const Checkpoint& c, const F32Array& x, std::size_t k, std::size_t g) {
            const std::size_t width = g == 0 ? c.config.n : g;
            const auto codes = encode(c.params, to_matrix(x), resolve_k(c, k, width), width);
            py::array_t<std::uint32_t> idx({codes.n_samples(), codes.k()});
            py::array_t<float> val({codes.n_samples(), codes.k()});
            auto* ip = idx.mutable_data();
            auto* vp = val.mutable_data();
            for (std::size_t i = 0; i < codes.n_samples(); ++i) {
              std::memcpy(ip + i * codes.k(), codes.indices(i).data(), codes.k() * sizeof(std::uint32_t));
              std::memcpy(vp + i * codes.k(), codes.values(i).data(), codes.k() * sizeof(float));
            }
            return py::make_tuple(idx, val);
          },
          py::arg("x"), py::arg("k") = 0, py::arg("g") = 0,
          "TopK codes as (indices, values); k = 0 scales the model's k to the granularity")
      .def(
          "reconstruct",
          [](const Checkpoint& c, const F32Array& x, std::size_t k, std::size_t g) {
            const std::size_t width = g == 0 ? c.config.n : g;
            const Matrix xm = to_matrix(x);
            return to_numpy(decode(c.params, encode(c.params, xm, resolve_k(c, k, width), width), width));
          },
          py::arg("x"), py::arg("k") = 0, py::arg("g") = 0)
      .def(
          "permuted",
          [](const Checkpoint& c, const std::vector<std::uint32_t>& perm) {
            return Checkpoint{c.config, c.schedule, apply_permutation(c.params, perm), std::nullopt};
          },
          py::arg("perm"))
      .def(
          "feature_stats",
          [](const Checkpoint& c, const F32Array& x) {
            const Matrix xm = to_matrix(x);
            SequentialStream stream(xm, 4096);
            const auto s = collect_stats(c.params, stream, c.config.k);
            py::dict d;
            d["mean_sq_act"] = s.mean_sq_act;
            d["fire_freq"] = s.fire_freq;
            return d;
          },
          py::arg("x"))
      .def(
          "rank",
          [](const Checkpoint& c, const F32Array& x, const std::string& criterion) {
            const Matrix xm = to_matrix(x);
            SequentialStream stream(xm, 4096);
            return rank_features(collect_stats(c.params, stream, c.config.k), parse_criterion(criterion));
          },
          py::arg("x"), py::arg("criterion") = "mean-sq")
      .def(
          "frontier",
          [](const Checkpoint& c, const F32Array& x, const std::vector<std::size_t>& granularities,
             std::size_t rsa_samples) {
            FrontierOptions opts;
            opts.rsa_samples = rsa_samples;
            py::list out;
            for (const auto& p : progressive_frontier(c.params, to_matrix(x), granularities, c.config.k, "model", opts))
              out.append(point_dict(p));
            return out;
          },
          py::arg("x"), py::arg("granularities"), py::arg("rsa_samples") = 2000);

  m.def(
      "train",
      [](const F32Array& x, const std::string& arch, std::vector<std::size_t> sizes, std::size_t k, double lr,
         std::size_t batch_size, std::uint64_t n_tokens, std::uint64_t seed) {
        const Matrix data = to_matrix(x);
        const Arch a = parse_arch(arch);
        SaeConfig sc{sizes.back(), data.cols(), k};
        sc.validate();
        TrainConfig tc;
        tc.lr = lr;
        tc.batch_size = batch_size;
        tc.n_tokens = n_tokens;
        tc.seed = seed;
        const auto schedule = make_schedule(a, sizes, k);
        EpochStream stream(data, batch_size, seed + 1);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(init_params(sc, seed), stream, schedule, sc, tc);
        }
        return Checkpoint{sc, schedule, std::move(r.params), std::nullopt};
      },
      py::arg("x"), py::arg("arch") = "topk", py::arg("sizes") = std::vector<std::size_t>{1024}, py::arg("k") = 32,
      py::arg("lr") = 1e-4, py::arg("batch_size") = 256, py::arg("n_tokens") = 2'000'000, py::arg("seed") = 0);

  m.def(
      "fvu", [](const F32Array& x, const F32Array& x_hat) { return fvu(to_matrix(x), to_matrix(x_hat)); },
      py::arg("x"), py::arg("x_hat"));
  m.def(
      "rsa", [](const F32Array& a, const F32Array& b) { return rsa_score(to_matrix(a), to_matrix(b)); },
      py::arg("a"), py::arg("a_hat"));
  m.def(
      "eigen_spectrum", [](const F32Array& w_dec) { return eigen_spectrum(to_matrix(w_dec)); }, py::arg("w_dec"));
  m.def(
      "fit_power_law",
      [](const std::vector<double>& values, double lo, double hi) {
        const auto f = fit_power_law(values, lo, hi);
        py::dict d;
        d["exponent"] = f.exponent;
        d["intercept"] = f.intercept;
        d["r2"] = f.r2;
        d["n_fitted"] = f.n_fitted;
        d["n_excluded_zeros"] = f.n_excluded_zeros;
        return d;
      },
      py::arg("values"), py::arg("lo") = 0.0, py::arg("hi") = 1.0);

  py::class_<ScalingLawParams>(m, "ScalingLawParams")
      .def(py::init<>())
      .def_readwrite("alpha", &ScalingLawParams::alpha)
      .def_readwrite("beta_k", &ScalingLawParams::beta_k)
      .def_readwrite("beta_n", &ScalingLawParams::beta_n)
      .def_readwrite("beta_g", &ScalingLawParams::beta_g)
      .def_readwrite("gamma_n", &ScalingLawParams::gamma_n)
      .def_readwrite("gamma_g", &ScalingLawParams::gamma_g)
      .def_readwrite("zeta", &ScalingLawParams::zeta)
      .def_readwrite("eta", &ScalingLawParams::eta);

  m.def("predict_loss", &predict_loss, py::arg("params"), py::arg("n"), py::arg("k"), py::arg("g"));
  m.def(
      "fit_scaling_law",
      [](const std::vector<double>& n, const std::vector<double>& k, const std::vector<double>& g,
         const std::vector<double>& loss, std::size_t starts, std::uint64_t seed) {
        if (n.size() != k.size() || n.size() != g.size() || n.size() != loss.size())
          throw ArgumentError("n, k, g and loss must have equal length");
        std::vector<ScalingObservation> obs;
        for (std::size_t i = 0; i < n.size(); ++i) obs.push_back({n[i], k[i], g[i], loss[i]});
        ScalingFitOptions opts;
        opts.starts = starts;
        opts.seed = seed;
        ScalingFitResult r;
        {
          py::gil_scoped_release release;
          r = fit_scaling_law(obs, opts);
        }
        return py::make_tuple(r.params, r.r2);
      },
      py::arg("n"), py::arg("k"), py::arg("g"), py::arg("loss"), py::arg("starts") = 8, py::arg("seed") = 0);
}
