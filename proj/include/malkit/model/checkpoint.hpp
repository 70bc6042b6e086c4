#pragma once

// Parameter file: "MALK", u32 version, u32 layer count, then per layer
// u32 out_ch, u32 in_ch, u32 width, f64 weights[out*in*width], f64 bias[out].
// Little-endian throughout. Encoder layers come first.

#include <filesystem>
#include <string>
#include <vector>

#include "malkit/binary_io.hpp"
#include "malkit/model/model.hpp"

namespace malkit::model {

inline constexpr char kParamsMagic[4] = {'M', 'A', 'L', 'K'};
inline constexpr std::uint32_t kParamsVersion = 1;

inline void write_params(ByteWriter& w, const ModelParams& p) {
  w.raw({kParamsMagic, 4});
  w.u32(kParamsVersion);
  const auto flat = p.flatten();
  w.u32(static_cast<std::uint32_t>(flat.size() / 2));
  for (std::size_t l = 0; l < flat.size() / 2; ++l) {
    const auto& wt = flat[2 * l];
    for (std::size_t d = 0; d < 3; ++d) w.u32(static_cast<std::uint32_t>(wt.dim(d)));
    w.f64s(wt.vec());
    w.f64s(flat[2 * l + 1].vec());
  }
}

/// Parses a parameter block and checks it against config (bins, channel
/// counts, kernel width). Distinct errors for bad magic, version, truncation
/// and layer shape.
inline ModelParams read_params(ByteReader& r, const ModelConfig& config) {
  const auto magic = r.raw(4);
  require(magic == std::string_view(kParamsMagic, 4), ErrorKind::bad_magic,
          r.name() + ": bad magic");
  const auto version = r.u32();
  require(version == kParamsVersion, ErrorKind::version,
          r.name() + ": unsupported format version " + std::to_string(version));
  const auto layers = r.u32();
  require(layers == kEncoderLayers + kDecoderLayers, ErrorKind::shape,
          r.name() + ": expected " + std::to_string(kEncoderLayers + kDecoderLayers) +
              " layers, found " + std::to_string(layers));
  const auto expected = config.layer_channels();
  std::vector<ad::Tensor> flat;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t out = r.u32(), in = r.u32(), width = r.u32();
    if (out != expected[l][1] || in != expected[l][0] || width != config.kernel) {
      fail(ErrorKind::shape, r.name() + ": layer " + layer_name(l) + " has shape [" +
                                 std::to_string(out) + "," + std::to_string(in) + "," +
                                 std::to_string(width) + "], expected [" +
                                 std::to_string(expected[l][1]) + "," +
                                 std::to_string(expected[l][0]) + "," +
                                 std::to_string(config.kernel) + "]");
    }
    flat.emplace_back(ad::Shape{out, in, width}, r.f64s(out * in * width));
    flat.emplace_back(ad::Shape{out}, r.f64s(out));
  }
  auto p = ModelParams::unflatten(config, flat);
  p.validate();
  return p;
}

inline std::string encode_params(const ModelParams& p) {
  ByteWriter w;
  write_params(w, p);
  return w.bytes();
}

inline void save_params(const ModelParams& p, const std::filesystem::path& path) {
  write_file(path, encode_params(p));
}

inline ModelParams load_params(const std::filesystem::path& path, const ModelConfig& config) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes, path.string());
  auto p = read_params(r, config);
  require(r.at_end(), ErrorKind::format, path.string() + ": trailing bytes after parameters");
  return p;
}

/// Byte range of the encoder layers inside an encoded parameter file.
inline std::pair<std::size_t, std::size_t> encoder_section(const ModelConfig& config) {
  std::size_t begin = 4 + 4 + 4;
  std::size_t end = begin;
  const auto chans = config.layer_channels();
  for (std::size_t l = 0; l < kEncoderLayers; ++l) {
    const std::size_t out = chans[l][1], in = chans[l][0];
    end += 3 * 4 + (out * in * config.kernel + out) * sizeof(double);
  }
  return {begin, end};
}

}  // namespace malkit::model
