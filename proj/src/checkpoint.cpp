// Copyright 2026 The psae Authors
// SPDX-License-Identifier: Apache-2.0

#include "psae/checkpoint.hpp"

#include <algorithm>
#include <array>

#include <fmt/format.h>

#include "psae/binary_io.hpp"

namespace psae {
namespace {

constexpr std::uint32_t kFlagUnitNorm = 1u;

void write_tensor(binio::Writer& w, std::string_view name, std::span<const std::uint64_t> dims,
                  std::span<const float> data) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.bytes(name);
  w.u32(static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) w.u64(d);
  w.f32s(data);
}

struct Tensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;
};

Tensor read_tensor(binio::Reader& r) {
  Tensor t;
  const auto name_len = r.u32("tensor name length");
  t.name = r.bytes(name_len, "tensor name");
  const auto rank = r.u32("tensor rank");
  if (rank > 8) throw FormatError(fmt::format("tensor '{}' has implausible rank {}", t.name, rank), r.offset());
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = r.u64("tensor dims");
    if (d != 0 && count > UINT64_MAX / d) throw FormatError("tensor size overflows", r.offset());
    count *= d;
    t.dims.push_back(d);
  }
  if (count > r.remaining() / 4) {
    throw FormatError(fmt::format("truncated data block for tensor '{}'", t.name), r.offset());
  }
  t.data.resize(count);
  r.f32s(t.data, "tensor data");
  return t;
}

void expect_dims(const Tensor& t, std::initializer_list<std::uint64_t> dims, std::uint64_t offset) {
  if (!std::equal(t.dims.begin(), t.dims.end(), dims.begin(), dims.end())) {
    throw FormatError(fmt::format("tensor '{}' has unexpected shape", t.name), offset);
  }
}

}  // namespace

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  const auto& c = ckpt.config;
  p.validate();
  if (p.n() != c.n || p.d() != c.d) throw ArgumentError("checkpoint: params do not match config");
  ckpt.schedule.validate(c.n);

  binio::Writer w;
  w.bytes("PSAE");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.d));
  w.u32(static_cast<std::uint32_t>(c.n));
  w.u32(static_cast<std::uint32_t>(c.k));
  w.u8(static_cast<std::uint8_t>(ckpt.schedule.mode));
  w.u32(c.unit_norm_decoder ? kFlagUnitNorm : 0u);
  w.f64(c.aux_scale);
  w.f64(c.sparsity_coeff);
  w.u32(static_cast<std::uint32_t>(ckpt.schedule.sizes.size()));
  for (auto s : ckpt.schedule.sizes) w.u32(static_cast<std::uint32_t>(s));
  for (auto cw : ckpt.schedule.weights) w.f64(cw);

  w.u32(4);
  const std::uint64_t d = p.d();
  const std::uint64_t n = p.n();
  write_tensor(w, "w_enc", std::array{d, n}, p.w_enc.data());
  write_tensor(w, "w_dec", std::array{n, d}, p.w_dec.data());
  write_tensor(w, "b_center", std::array{d}, p.b_center);
  write_tensor(w, "b_enc", std::array{n}, p.b_enc);

  if (ckpt.stats) {
    const auto& s = *ckpt.stats;
    if (s.n() != c.n || s.fire_freq.size() != c.n) throw ArgumentError("checkpoint: stats length != N");
    w.u8(1);
    w.u64(s.n_samples);
    w.u32(static_cast<std::uint32_t>(s.n()));
    for (double v : s.mean_sq_act) w.f64(v);
    for (double v : s.fire_freq) w.f64(v);
  } else {
    w.u8(0);
  }
  return w.buffer();
}

Checkpoint deserialize_checkpoint(std::span<const char> bytes) {
  binio::Reader r(bytes);
  if (r.remaining() < 4 || r.bytes(4, "magic") != "PSAE") throw FormatError("bad checkpoint magic (expected PSAE)", 0);
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(fmt::format("unsupported checkpoint version {} (expected {})", version, kCheckpointVersion), 4);
  }

  Checkpoint ckpt;
  auto& c = ckpt.config;
  c.d = r.u32("D");
  c.n = r.u32("N");
  c.k = r.u32("K");
  const auto mode = r.u8("schedule mode");
  if (mode > 1) throw FormatError(fmt::format("unknown schedule mode {}", mode), r.offset() - 1);
  ckpt.schedule.mode = static_cast<ScheduleMode>(mode);
  const auto flags = r.u32("flags");
  c.unit_norm_decoder = (flags & kFlagUnitNorm) != 0;
  c.aux_scale = r.f64("aux_scale");
  c.sparsity_coeff = r.f64("sparsity_coeff");
  const auto n_sizes = r.u32("schedule length");
  if (n_sizes > r.remaining() / 12) throw FormatError("truncated schedule block", r.offset());
  for (std::uint32_t i = 0; i < n_sizes; ++i) ckpt.schedule.sizes.push_back(r.u32("schedule sizes"));
  for (std::uint32_t i = 0; i < n_sizes; ++i) ckpt.schedule.weights.push_back(r.f64("schedule weights"));
  ckpt.schedule.full_k = c.k;
  const auto config_end = r.offset();
  try {
    c.validate();
    ckpt.schedule.validate(c.n);
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("invalid config block: ") + e.what(), config_end);
  }

  const auto n_tensors = r.u32("tensor count");
  bool have[4] = {false, false, false, false};
  auto& p = ckpt.params;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const auto start = r.offset();
    Tensor t = read_tensor(r);
    if (t.name == "w_enc") {
      expect_dims(t, {c.d, c.n}, start);
      p.w_enc = Matrix(c.d, c.n, std::move(t.data));
      have[0] = true;
    } else if (t.name == "w_dec") {
      expect_dims(t, {c.n, c.d}, start);
      p.w_dec = Matrix(c.n, c.d, std::move(t.data));
      have[1] = true;
    } else if (t.name == "b_center") {
      expect_dims(t, {c.d}, start);
      p.b_center = std::move(t.data);
      have[2] = true;
    } else if (t.name == "b_enc") {
      expect_dims(t, {c.n}, start);
      p.b_enc = std::move(t.data);
      have[3] = true;
    } else {
      throw FormatError(fmt::format("unknown tensor '{}'", t.name), start);
    }
  }
  if (!(have[0] && have[1] && have[2] && have[3])) throw FormatError("checkpoint is missing a tensor", r.offset());

  const auto has_stats = r.u8("stats flag");
  if (has_stats > 1) throw FormatError("bad stats flag", r.offset() - 1);
  if (has_stats == 1) {
    FeatureStats s;
    s.n_samples = r.u64("stats sample count");
    const auto n = r.u32("stats length");
    if (n != c.n) throw FormatError("stats length != N", r.offset() - 4);
    r.need(16ull * n, "stats");
    s.mean_sq_act.resize(n);
    s.fire_freq.resize(n);
    for (auto& v : s.mean_sq_act) v = r.f64("stats");
    for (auto& v : s.fire_freq) v = r.f64("stats");
    ckpt.stats = std::move(s);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
  try {
    p.validate();
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("invalid parameters: ") + e.what(), r.offset());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  binio::write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  return deserialize_checkpoint(bytes);
}

}  // namespace psae
