#pragma once

// 16-bit PCM mono RIFF/WAVE reader and writer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "malkit/dsp/signal.hpp"
#include "malkit/error.hpp"

namespace malkit::dsp {

inline constexpr double kPcmScale = 32767.0;

inline std::int16_t quantize_sample(double x) {
  const double c = std::clamp(x, -1.0, 1.0);
  return static_cast<std::int16_t>(std::lround(c * kPcmScale));
}

/// Rounds every sample onto the 16-bit grid, so that a write/read cycle is
/// lossless for the returned waveform.
inline Waveform quantize_pcm16(Waveform w) {
  for (auto& s : w.samples) s = quantize_sample(s) / kPcmScale;
  return w;
}

namespace wav_detail {

inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace wav_detail

inline std::string encode_wav(const Waveform& w) {
  using namespace wav_detail;
  const auto data_bytes = static_cast<std::uint32_t>(w.size() * 2);
  std::string b;
  b.reserve(44 + data_bytes);
  b += "RIFF";
  put_u32(b, 36 + data_bytes);
  b += "WAVE";
  b += "fmt ";
  put_u32(b, 16);
  put_u16(b, 1);  // PCM
  put_u16(b, 1);  // mono
  put_u32(b, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(b, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put_u16(b, 2);
  put_u16(b, 16);
  b += "data";
  put_u32(b, data_bytes);
  for (double s : w.samples) put_u16(b, static_cast<std::uint16_t>(quantize_sample(s)));
  return b;
}

inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
  w.validate();
  const std::string bytes = encode_wav(w);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "write failed for '" + path.string() + "'");
}

inline Waveform decode_wav(const std::string& bytes, const std::string& name = "<memory>") {
  using namespace wav_detail;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  require(n >= 12 && std::memcmp(p, "RIFF", 4) == 0 && std::memcmp(p + 8, "WAVE", 4) == 0,
          ErrorKind::format, name + ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  int sample_rate = 0;
  while (pos + 8 <= n) {
    const unsigned char* ck = p + pos;
    const std::uint32_t size = get_u32(ck + 4);
    const std::size_t body = pos + 8;
    require(body + size <= n, ErrorKind::truncated,
            name + ": chunk '" + std::string(reinterpret_cast<const char*>(ck), 4) +
                "' runs past end of file");
    if (std::memcmp(ck, "fmt ", 4) == 0) {
      require(size >= 16, ErrorKind::format, name + ": fmt chunk too small");
      const std::uint16_t format = get_u16(p + body);
      const std::uint16_t channels = get_u16(p + body + 2);
      sample_rate = static_cast<int>(get_u32(p + body + 4));
      const std::uint16_t bits = get_u16(p + body + 14);
      require(format == 1, ErrorKind::format,
              name + ": compressed or non-PCM format " + std::to_string(format));
      require(channels == 1, ErrorKind::format,
              name + ": expected mono, got " + std::to_string(channels) + " channels");
      require(bits == 16, ErrorKind::format,
              name + ": expected 16-bit samples, got " + std::to_string(bits));
      require(sample_rate > 0, ErrorKind::format, name + ": zero sample rate");
      have_fmt = true;
    } else if (std::memcmp(ck, "data", 4) == 0) {
      require(have_fmt, ErrorKind::format, name + ": data chunk before fmt chunk");
      Waveform w;
      w.sample_rate = sample_rate;
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(get_u16(p + body + 2 * i));
        w.samples[i] = raw / kPcmScale;
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  fail(ErrorKind::format, name + ": no data chunk");
}

inline Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::not_found,
          "cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path.string());
}

}  // namespace malkit::dsp
