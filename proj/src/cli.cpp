// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include "psae/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "psae/analysis.hpp"
#include "psae/checkpoint.hpp"
#include "psae/data.hpp"
#include "psae/eval.hpp"
#include "psae/ranking.hpp"
#include "psae/training.hpp"

namespace psae::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr const char* kSchemaHelp = R"(Output files:
  gen-data    train.saea, test.saea (SAEA shards)
  train       model.psae, train_log.csv: step,samples,sampled_m,total,recon,aux,n_dead
  frontier    progressive.csv and sparsity.csv: model_id,granularity,k,fvu,rsa
  permute     permutation.txt (one old latent index per line), model.psae
  fit-powerlaw  fit.json: criterion,exponent,intercept,r2,fit_range,n_fitted,n_excluded_zeros
  fit-scaling   params.json: params{alpha,beta_k,beta_n,beta_g,gamma_n,gamma_g,zeta,eta},r2,...
                (input CSV: n,k,g,loss)
  splitting   splitting.csv: feature,mean_neighbor_index; blocks.csv: begin,end,mean_index
Every command writes manifest.json into --out.)";

struct Manifest {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

void write_manifest(const fs::path& dir, const Manifest& m, double seconds) {
  json j;
  j["command"] = m.command;
  j["config"] = m.config;
  j["seed"] = m.seed;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["tool_version"] = std::string(kToolVersion);
  j["wall_clock_seconds"] = seconds;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write manifest.json");
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
}

ActivationShard load_input(const std::string& path, std::size_t raw_dim) {
  return raw_dim > 0 ? read_raw_f32(path, raw_dim) : read_shard(path);
}

json stats_config(const SuperpositionConfig& c) {
  return {{"n_true", c.n_true},          {"dim", c.d},
          {"p_active", c.p_active},      {"importance_exponent", c.importance_exponent},
          {"noise_std", c.noise_std},    {"seed", c.seed}};
}

// ---- gen-data ----

struct GenArgs {
  SuperpositionConfig cfg;
  std::size_t n_samples = 2'000'000;
  std::size_t n_test = 20'000;
  std::string out;
};

void cmd_gen(const GenArgs& a, Manifest& m) {
  a.cfg.validate();
  const fs::path dir(a.out);
  const auto all = gen_superposition(a.cfg, a.n_samples + a.n_test);
  ActivationShard train{slice_rows(all.data, 0, a.n_samples), all.provenance};
  ActivationShard test{slice_rows(all.data, a.n_samples, a.n_samples + a.n_test), all.provenance};
  write_shard(dir / "train.saea", train);
  m.outputs.push_back((dir / "train.saea").string());
  if (a.n_test > 0) {
    write_shard(dir / "test.saea", test);
    m.outputs.push_back((dir / "test.saea").string());
  }
  m.seed = a.cfg.seed;
  m.config = stats_config(a.cfg);
  m.config["n_samples"] = a.n_samples;
  m.config["n_test"] = a.n_test;
}

// ---- train ----

struct TrainArgs {
  std::string data;
  std::size_t raw_dim = 0;
  std::string out;
  std::string arch = "topk";
  std::vector<std::size_t> sizes{256, 512, 1024};
  std::size_t k = 32;
  TrainConfig tc;
  double aux_scale = 1.0 / 32.0;
  double sparsity = 0.0;
  bool no_unit_norm = false;
};

void cmd_train(const TrainArgs& a, Manifest& m) {
  const Arch arch = parse_arch(a.arch);
  std::vector<std::size_t> sizes = a.sizes;
  if (sizes.empty()) throw UsageError("--sizes must not be empty");
  if (!std::is_sorted(sizes.begin(), sizes.end()) ||
      std::adjacent_find(sizes.begin(), sizes.end()) != sizes.end()) {
    throw UsageError("--sizes must be strictly ascending");
  }
  const std::size_t n = sizes.back();
  if (a.k == 0 || a.k > n) throw UsageError(fmt::format("--k {} exceeds the largest size {}", a.k, n));
  if (arch == Arch::kMatryoshka) {
    for (auto s : sizes) {
      if (per_granularity_k(a.k, n, s) > s) throw UsageError(fmt::format("k exceeds granularity {}", s));
    }
  }
  const auto shard = load_input(a.data, a.raw_dim);
  SaeConfig sc;
  sc.n = n;
  sc.d = shard.dim();
  sc.k = a.k;
  sc.aux_scale = a.aux_scale;
  sc.sparsity_coeff = a.sparsity;
  sc.unit_norm_decoder = !a.no_unit_norm;
  sc.validate();
  a.tc.validate();
  const auto schedule = make_schedule(arch, sizes, a.k);

  SaeParams params = init_params(sc, a.tc.seed);
  EpochStream stream(shard.data, a.tc.batch_size, a.tc.seed + 1);
  const fs::path dir(a.out);
  std::ofstream log(dir / "train_log.csv", std::ios::trunc);
  log << "step,samples,sampled_m,total,recon,aux,n_dead\n";
  auto result = train(params, stream, schedule, sc, a.tc, [&](const StepLog& s) {
    log << fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{}\n", s.step, s.samples, s.sampled_m, s.total, s.recon,
                       s.aux, s.n_dead);
  });
  log.close();
  if (!log) throw std::runtime_error("cannot write train_log.csv");
  Checkpoint ckpt{sc, schedule, std::move(result.params), std::nullopt};
  save_checkpoint(dir / "model.psae", ckpt);

  m.seed = a.tc.seed;
  m.inputs.push_back(a.data);
  m.outputs = {(dir / "model.psae").string(), (dir / "train_log.csv").string()};
  m.config = {{"arch", std::string(arch_name(arch))},
              {"sizes", sizes},
              {"n", n},
              {"d", sc.d},
              {"k", a.k},
              {"raw_dim", a.raw_dim},
              {"lr", a.tc.lr},
              {"weight_decay", a.tc.weight_decay},
              {"beta1", a.tc.beta1},
              {"beta2", a.tc.beta2},
              {"eps", a.tc.eps},
              {"batch_size", a.tc.batch_size},
              {"n_tokens", a.tc.n_tokens},
              {"dead_window", a.tc.dead_window},
              {"aux_scale", sc.aux_scale},
              {"sparsity_coeff", sc.sparsity_coeff},
              {"unit_norm_decoder", sc.unit_norm_decoder},
              {"init_center", a.tc.init_center}};
}

// ---- frontier ----

struct FrontierArgs {
  std::vector<std::string> models;
  std::string data;
  std::size_t raw_dim = 0;
  std::string out;
  std::vector<std::size_t> granularities;
  std::size_t rsa_samples = 2000;
};

void cmd_frontier(const FrontierArgs& a, Manifest& m) {
  const auto shard = load_input(a.data, a.raw_dim);
  FrontierOptions opts;
  opts.rsa_samples = a.rsa_samples;
  std::vector<Checkpoint> ckpts;
  for (const auto& path : a.models) ckpts.push_back(load_checkpoint(path));
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    if (ckpts[i].config.d != shard.dim()) {
      throw UsageError(fmt::format("model {} has D={} but data has dim {}", a.models[i], ckpts[i].config.d,
                                   shard.dim()));
    }
    for (auto g : a.granularities) {
      if (g == 0 || g > ckpts[i].config.n) {
        throw UsageError(fmt::format("granularity {} outside [1, {}] for {}", g, ckpts[i].config.n, a.models[i]));
      }
    }
  }
  std::vector<FrontierPoint> progressive;
  std::vector<FrontierModel> sparse_models;
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    const std::string id = fs::path(a.models[i]).parent_path().filename().string() + "/" +
                           fs::path(a.models[i]).filename().string();
    auto pts = progressive_frontier(ckpts[i].params, shard.data, a.granularities, ckpts[i].config.k, id, opts);
    progressive.insert(progressive.end(), pts.begin(), pts.end());
    sparse_models.push_back({id, &ckpts[i].params, ckpts[i].config.k});
  }
  const fs::path dir(a.out);
  write_frontier_csv(dir / "progressive.csv", progressive);
  write_frontier_csv(dir / "sparsity.csv", sparsity_frontier(sparse_models, shard.data, opts));
  m.inputs = a.models;
  m.inputs.push_back(a.data);
  m.outputs = {(dir / "progressive.csv").string(), (dir / "sparsity.csv").string()};
  m.config = {{"granularities", a.granularities}, {"rsa_samples", a.rsa_samples}, {"raw_dim", a.raw_dim}};
}

// ---- permute ----

struct PermuteArgs {
  std::string model;
  std::string data;
  std::size_t raw_dim = 0;
  std::string out;
  std::string criterion = "mean-sq";
  std::size_t batch_size = 4096;
};

void cmd_permute(const PermuteArgs& a, Manifest& m) {
  const RankCriterion crit = parse_criterion(a.criterion);
  auto ckpt = load_checkpoint(a.model);
  const auto shard = load_input(a.data, a.raw_dim);
  if (shard.dim() != ckpt.config.d) throw UsageError("data dimension does not match the model");
  SequentialStream stream(shard.data, a.batch_size);
  const FeatureStats stats = collect_stats(ckpt.params, stream, ckpt.config.k);
  const auto perm = rank_features(stats, crit);
  const fs::path dir(a.out);
  write_permutation(dir / "permutation.txt", perm);

  FeatureStats permuted_stats = stats;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    permuted_stats.mean_sq_act[i] = stats.mean_sq_act[perm[i]];
    permuted_stats.fire_freq[i] = stats.fire_freq[perm[i]];
  }
  Checkpoint out{ckpt.config, ckpt.schedule, apply_permutation(ckpt.params, perm), permuted_stats};
  save_checkpoint(dir / "model.psae", out);
  m.inputs = {a.model, a.data};
  m.outputs = {(dir / "permutation.txt").string(), (dir / "model.psae").string()};
  m.config = {{"criterion", std::string(criterion_name(crit))}, {"batch_size", a.batch_size}, {"raw_dim", a.raw_dim}};
}

// ---- fit-powerlaw ----

struct PowerArgs {
  std::string model;
  std::string data;
  std::size_t raw_dim = 0;
  std::string out;
  std::string stat = "eigvals";
  double lo = 0.05;
  double hi = 0.8;
};

void cmd_powerlaw(const PowerArgs& a, Manifest& m) {
  if (a.stat != "eigvals" && a.stat != "act2" && a.stat != "freq") {
    throw UsageError(fmt::format("unknown --stat '{}' (expected eigvals, act2 or freq)", a.stat));
  }
  const auto ckpt = load_checkpoint(a.model);
  m.inputs.push_back(a.model);
  std::vector<double> values;
  if (a.stat == "eigvals") {
    values = eigen_spectrum(ckpt.params.w_dec);
  } else {
    FeatureStats stats;
    if (!a.data.empty()) {
      const auto shard = load_input(a.data, a.raw_dim);
      if (shard.dim() != ckpt.config.d) throw UsageError("data dimension does not match the model");
      SequentialStream stream(shard.data, 4096);
      stats = collect_stats(ckpt.params, stream, ckpt.config.k);
      m.inputs.push_back(a.data);
    } else if (ckpt.stats) {
      stats = *ckpt.stats;
    } else {
      throw UsageError("--stat act2/freq needs --data or a checkpoint with stored statistics");
    }
    values = a.stat == "act2" ? stats.mean_sq_act : stats.fire_freq;
  }
  const auto fit = fit_power_law(values, a.lo, a.hi);
  const fs::path dir(a.out);
  write_json(dir / "fit.json", {{"criterion", a.stat},
                                {"exponent", fit.exponent},
                                {"intercept", fit.intercept},
                                {"r2", fit.r2},
                                {"fit_range", {fit.fit_lo, fit.fit_hi}},
                                {"n_fitted", fit.n_fitted},
                                {"n_excluded_zeros", fit.n_excluded_zeros}});
  if (fit.n_excluded_zeros > 0) {
    std::cerr << fmt::format("note: {} zero values (dead features) excluded from the fit\n", fit.n_excluded_zeros);
  }
  m.outputs.push_back((dir / "fit.json").string());
  m.config = {{"stat", a.stat}, {"lo", a.lo}, {"hi", a.hi}, {"raw_dim", a.raw_dim}};
}

// ---- fit-scaling ----

struct ScalingArgs {
  std::string obs;
  std::string out;
  ScalingFitOptions opts;
};

json scaling_json(const ScalingFitResult& r) {
  const auto& p = r.params;
  const json params = {{"alpha", p.alpha},     {"beta_k", p.beta_k},   {"beta_n", p.beta_n},
                       {"beta_g", p.beta_g},   {"gamma_n", p.gamma_n}, {"gamma_g", p.gamma_g},
                       {"zeta", p.zeta},       {"eta", p.eta}};
  return {{"params", params},         {"r2", r.r2},
          {"objective", r.objective}, {"iterations", r.iterations},
          {"converged", r.converged}, {"degenerate", r.degenerate},
          {"warnings", r.warnings}};
}

void cmd_scaling(const ScalingArgs& a, Manifest& m) {
  const auto obs = read_scaling_csv(a.obs);
  const fs::path dir(a.out);
  m.inputs.push_back(a.obs);
  m.seed = a.opts.seed;
  m.config = {{"starts", a.opts.starts}, {"max_iters", a.opts.max_iters}, {"tol", a.opts.tol}};
  try {
    const auto r = fit_scaling_law(obs, a.opts);
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    write_json(dir / "params.json", scaling_json(r));
  } catch (const FitFailure& e) {
    write_json(dir / "params.json", scaling_json(e.best()));
    m.outputs.push_back((dir / "params.json").string());
    throw;
  }
  m.outputs.push_back((dir / "params.json").string());
}

// ---- splitting ----

struct SplitArgs {
  std::string model;
  std::string out;
  std::size_t top_m = 5;
  std::vector<std::size_t> block_edges;
};

void cmd_splitting(const SplitArgs& a, Manifest& m) {
  const auto ckpt = load_checkpoint(a.model);
  std::vector<std::size_t> edges = a.block_edges;
  if (edges.empty()) edges = ckpt.schedule.mode == ScheduleMode::kFixed ? ckpt.schedule.sizes
                                                                         : std::vector<std::size_t>{ckpt.config.n};
  const auto sa = feature_split_analysis(ckpt.params.w_dec, a.top_m, edges);
  const fs::path dir(a.out);
  {
    std::ofstream out(dir / "splitting.csv", std::ios::trunc);
    out << "feature,mean_neighbor_index\n";
    for (std::size_t i = 0; i < sa.mean_neighbor_index.size(); ++i) {
      out << fmt::format("{},{:.17g}\n", i, sa.mean_neighbor_index[i]);
    }
    std::ofstream blocks(dir / "blocks.csv", std::ios::trunc);
    blocks << "begin,end,mean_index\n";
    for (const auto& b : sa.blocks) blocks << fmt::format("{},{},{:.17g}\n", b.begin, b.end, b.mean_index);
    if (!out || !blocks) throw std::runtime_error("cannot write splitting output");
  }
  std::cout << fmt::format("max block jump: {:.4f}\n", sa.max_block_jump);
  m.inputs.push_back(a.model);
  m.outputs = {(dir / "splitting.csv").string(), (dir / "blocks.csv").string()};
  m.config = {{"top_m", a.top_m}, {"block_edges", edges}, {"max_block_jump", sa.max_block_jump}};
}

void add_input_flags(CLI::App* sub, std::string& data, std::size_t& raw_dim, bool required) {
  auto* opt = sub->add_option("--data", data, "SAEA shard (or raw f32 file with --raw-dim)")
                  ->check(CLI::ExistingFile);
  if (required) opt->required();
  sub->add_option("--raw-dim", raw_dim, "treat --data as headerless f32 rows of this length");
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"psae: TopK and Matryoshka sparse autoencoders on synthetic superposition data", "psae"};
  app.footer(kSchemaHelp);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "generate power-law superposition activations");
  g->add_option("--n-samples", gen.n_samples, "training samples")->capture_default_str();
  g->add_option("--n-test", gen.n_test, "held-out samples (same generator, disjoint tail)")->capture_default_str();
  g->add_option("--n-true", gen.cfg.n_true, "ground-truth features")->capture_default_str();
  g->add_option("--dim", gen.cfg.d, "observed dimension")->capture_default_str();
  g->add_option("--p-active", gen.cfg.p_active, "per-feature firing probability")->capture_default_str();
  g->add_option("--exponent", gen.cfg.importance_exponent, "importance exponent")->capture_default_str();
  g->add_option("--noise", gen.cfg.noise_std, "Gaussian noise std")->capture_default_str();
  g->add_option("--seed", gen.cfg.seed)->capture_default_str();
  g->add_option("--out", gen.out, "output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a TopK or Matryoshka SAE");
  add_input_flags(t, tr.data, tr.raw_dim, true);
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--arch", tr.arch, "topk | matryoshka | matryoshka-sampled")->capture_default_str();
  t->add_option("--sizes", tr.sizes, "nested sizes; the last is N")->delimiter(',')->capture_default_str();
  t->add_option("--k", tr.k, "active latents at full width")->capture_default_str();
  t->add_option("--lr", tr.tc.lr)->capture_default_str();
  t->add_option("--weight-decay", tr.tc.weight_decay)->capture_default_str();
  t->add_option("--beta1", tr.tc.beta1)->capture_default_str();
  t->add_option("--beta2", tr.tc.beta2)->capture_default_str();
  t->add_option("--eps", tr.tc.eps)->capture_default_str();
  t->add_option("--batch-size", tr.tc.batch_size)->capture_default_str();
  t->add_option("--n-tokens", tr.tc.n_tokens, "training samples consumed")->capture_default_str();
  t->add_option("--dead-window", tr.tc.dead_window)->capture_default_str();
  t->add_option("--aux-scale", tr.aux_scale)->capture_default_str();
  t->add_option("--sparsity", tr.sparsity, "L1 coefficient")->capture_default_str();
  t->add_flag("--no-unit-norm", tr.no_unit_norm, "do not renormalize decoder rows");
  t->add_option("--seed", tr.tc.seed)->capture_default_str();

  FrontierArgs fr;
  auto* f = app.add_subcommand("frontier", "progressive and sparsity frontiers");
  f->add_option("--model", fr.models, "checkpoint(s)")->required()->check(CLI::ExistingFile);
  add_input_flags(f, fr.data, fr.raw_dim, true);
  f->add_option("--granularities", fr.granularities)->delimiter(',')->required();
  f->add_option("--rsa-samples", fr.rsa_samples)->capture_default_str();
  f->add_option("--out", fr.out, "output directory")->required();

  PermuteArgs pe;
  auto* p = app.add_subcommand("permute", "rank latents and write a permuted checkpoint");
  p->add_option("--model", pe.model)->required()->check(CLI::ExistingFile);
  add_input_flags(p, pe.data, pe.raw_dim, true);
  p->add_option("--criterion", pe.criterion, "mean-sq | freq")->capture_default_str();
  p->add_option("--out", pe.out, "output directory")->required();

  PowerArgs pw;
  auto* w = app.add_subcommand("fit-powerlaw", "power-law fit of a dictionary statistic");
  w->add_option("--model", pw.model)->required()->check(CLI::ExistingFile);
  add_input_flags(w, pw.data, pw.raw_dim, false);
  w->add_option("--stat", pw.stat, "eigvals | act2 | freq")->capture_default_str();
  w->add_option("--lo", pw.lo, "lower rank quantile")->capture_default_str();
  w->add_option("--hi", pw.hi, "upper rank quantile")->capture_default_str();
  w->add_option("--out", pw.out, "output directory")->required();

  ScalingArgs sc;
  auto* s = app.add_subcommand("fit-scaling", "fit the progressive-coding scaling law");
  s->add_option("--obs", sc.obs, "CSV with header n,k,g,loss")->required()->check(CLI::ExistingFile);
  s->add_option("--starts", sc.opts.starts)->capture_default_str();
  s->add_option("--seed", sc.opts.seed)->capture_default_str();
  s->add_option("--max-iters", sc.opts.max_iters)->capture_default_str();
  s->add_option("--out", sc.out, "output directory")->required();

  SplitArgs sp;
  auto* x = app.add_subcommand("splitting", "nearest-feature index analysis");
  x->add_option("--model", sp.model)->required()->check(CLI::ExistingFile);
  x->add_option("--top-m", sp.top_m)->capture_default_str();
  x->add_option("--block-edges", sp.block_edges, "defaults to the training schedule")->delimiter(',');
  x->add_option("--out", sp.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  Manifest manifest;
  std::string out_dir;
  const auto start = std::chrono::steady_clock::now();
  try {
    auto prepare = [&](const std::string& name, const std::string& out) {
      manifest.command = name;
      out_dir = out;
      fs::create_directories(out);
    };
    if (*g) {
      prepare("gen-data", gen.out);
      cmd_gen(gen, manifest);
    } else if (*t) {
      prepare("train", tr.out);
      cmd_train(tr, manifest);
    } else if (*f) {
      prepare("frontier", fr.out);
      cmd_frontier(fr, manifest);
    } else if (*p) {
      prepare("permute", pe.out);
      cmd_permute(pe, manifest);
    } else if (*w) {
      prepare("fit-powerlaw", pw.out);
      cmd_powerlaw(pw, manifest);
    } else if (*s) {
      prepare("fit-scaling", sc.out);
      cmd_scaling(sc, manifest);
    } else if (*x) {
      prepare("splitting", sp.out);
      cmd_splitting(sp, manifest);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_manifest(out_dir, manifest, secs);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const FitFailure& e) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    try {
      write_manifest(out_dir, manifest, secs);
    } catch (const std::exception&) {
    }
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ArgumentError& e) {
    // Inconsistent flag combinations surface as argument errors from the modules.
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace psae::cli
