#pragma once

// Training checkpoint: the model parameter block followed by a "MALT"
// section with optimizer moments, epoch, shuffle RNG, active snapshots, the
// best-epoch state and the training log.

#include <filesystem>
#include <sstream>
#include <string>

#include "malkit/binary_io.hpp"
#include "malkit/model/checkpoint.hpp"
#include "malkit/training/schedule.hpp"

namespace malkit::training {

inline constexpr char kStateMagic[4] = {'M', 'A', 'L', 'T'};
inline constexpr std::uint32_t kStateVersion = 1;

namespace state_detail {

inline void write_i32(ByteWriter& w, int v) { w.u32(static_cast<std::uint32_t>(v)); }
inline int read_i32(ByteReader& r) { return static_cast<int>(r.u32()); }

inline void write_adam(ByteWriter& w, const ad::AdamState& a) {
  w.u64(a.step);
  w.u32(static_cast<std::uint32_t>(a.m.size()));
  for (std::size_t i = 0; i < a.m.size(); ++i) {
    w.f64s(a.m[i]);
    w.f64s(a.v[i]);
  }
}

inline ad::AdamState read_adam(ByteReader& r, const model::ModelParams& shape_of) {
  ad::AdamState a;
  a.step = r.u64();
  const auto flat = shape_of.flatten();
  const auto count = r.u32();
  require(count == flat.size(), ErrorKind::shape,
          r.name() + ": optimizer state has " + std::to_string(count) + " tensors, expected " +
              std::to_string(flat.size()));
  for (const auto& t : flat) {
    a.m.push_back(r.f64s(t.size()));
    a.v.push_back(r.f64s(t.size()));
  }
  return a;
}

inline void write_snapshot(ByteWriter& w, const model::EncoderSnapshot* s) {
  w.u32(s ? 1u : 0u);
  if (!s) return;
  write_i32(w, s->epoch());
  for (const auto& l : s->encoder().layers) {
    w.f64s(l.weight.vec());
    w.f64s(l.bias.vec());
  }
}

inline std::shared_ptr<const model::EncoderSnapshot> read_snapshot(
    ByteReader& r, const model::ModelConfig& config) {
  if (r.u32() == 0) return nullptr;
  const int epoch = read_i32(r);
  const auto chans = config.layer_channels();
  model::EncoderStack enc;
  for (std::size_t l = 0; l < model::kEncoderLayers; ++l) {
    const std::size_t in = chans[l][0], out = chans[l][1];
    ad::Tensor w({out, in, config.kernel}, r.f64s(out * in * config.kernel));
    ad::Tensor b({out}, r.f64s(out));
    enc.layers.push_back({std::move(w), std::move(b)});
  }
  return std::make_shared<const model::EncoderSnapshot>(config, enc, epoch);
}

}  // namespace state_detail

inline std::string encode_state(const TrainState& s) {
  using namespace state_detail;
  ByteWriter w;
  model::write_params(w, s.params);
  w.raw({kStateMagic, 4});
  w.u32(kStateVersion);
  w.u32(static_cast<std::uint32_t>(s.phase));
  w.u32(static_cast<std::uint32_t>(s.variant));
  write_i32(w, s.epoch);
  write_adam(w, s.adam);
  std::ostringstream rng;
  rng << s.rng;
  w.str(rng.str());
  write_snapshot(w, s.mal_encoder.get());
  write_snapshot(w, s.aux_encoder.get());
  w.u32(s.best ? 1u : 0u);
  if (s.best) {
    model::write_params(w, s.best->params);
    write_adam(w, s.best->adam);
    write_i32(w, s.best->epoch);
    w.f64(s.best->val_loss);
  }
  w.u64(s.log.size());
  for (const auto& row : s.log) {
    write_i32(w, row.epoch);
    write_i32(w, row.batch);
    w.str(row.split);
    w.str(row.term);
    w.f64(row.value);
  }
  return w.bytes();
}

inline TrainState decode_state(const std::string& bytes, const model::ModelConfig& config,
                               const std::string& name) {
  using namespace state_detail;
  ByteReader r(bytes, name);
  TrainState s;
  s.params = model::read_params(r, config);
  require(r.raw(4) == std::string_view(kStateMagic, 4), ErrorKind::bad_magic,
          name + ": missing training-state section");
  const auto version = r.u32();
  require(version == kStateVersion, ErrorKind::version,
          name + ": unsupported training-state version " + std::to_string(version));
  const auto phase = r.u32();
  const auto variant = r.u32();
  require(phase <= 1 && variant < std::size(kAllVariants), ErrorKind::format,
          name + ": invalid phase or variant tag");
  s.phase = static_cast<Phase>(phase);
  s.variant = static_cast<Variant>(variant);
  s.epoch = read_i32(r);
  s.adam = read_adam(r, s.params);
  std::istringstream rng(r.str());
  rng >> s.rng;
  require(!rng.fail(), ErrorKind::format, name + ": corrupt RNG state");
  s.mal_encoder = read_snapshot(r, config);
  s.aux_encoder = read_snapshot(r, config);
  if (r.u32() != 0) {
    BestState b;
    b.params = model::read_params(r, config);
    b.adam = read_adam(r, b.params);
    b.epoch = read_i32(r);
    b.val_loss = r.f64();
    s.best = std::move(b);
  }
  const auto rows = r.u64();
  for (std::uint64_t i = 0; i < rows; ++i) {
    LogRow row;
    row.epoch = read_i32(r);
    row.batch = read_i32(r);
    row.split = r.str();
    row.term = r.str();
    row.value = r.f64();
    s.log.push_back(std::move(row));
  }
  require(r.at_end(), ErrorKind::format, name + ": trailing bytes after training state");
  return s;
}

inline void save_state(const TrainState& s, const std::filesystem::path& path) {
  write_file(path, encode_state(s));
}

inline TrainState load_state(const std::filesystem::path& path, const model::ModelConfig& config) {
  return decode_state(read_file(path), config, path.string());
}

/// Bitwise equality of everything a checkpoint records.
inline bool same_state(const TrainState& a, const TrainState& b) {
  return encode_state(a) == encode_state(b);
}

}  // namespace malkit::training
