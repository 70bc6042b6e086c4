#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>

#include "malkit/dsp/signal.hpp"
#include "malkit/model/model.hpp"

namespace malkit::testing {

/// bins = 9, channels 4/3/2: small enough for exhaustive finite differences.
inline model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.stft = {16, 8, dsp::WindowKind::vorbis, 0};
  c.channels = {4, 3, 2};
  return c;
}

/// Harmonic tone plus noise; deterministic in seed.
inline dsp::Waveform test_signal(std::size_t n, std::uint64_t seed, double noise = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double f0 = 0.01 + 0.02 * (u(rng) + 1.0);
  dsp::Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i);
    w.samples[i] = 0.4 * std::sin(2 * std::numbers::pi * f0 * t) +
                   0.2 * std::sin(2 * std::numbers::pi * 3 * f0 * t + 0.3) + noise * u(rng);
  }
  return w;
}

inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("malkit_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace malkit::testing
