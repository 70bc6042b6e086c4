#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "malkit/error.hpp"

namespace malkit::dsp {

enum class WindowKind { hann, vorbis };

inline std::string_view to_string(WindowKind kind) {
  return kind == WindowKind::hann ? "hann" : "vorbis";
}

inline WindowKind parse_window_kind(std::string_view s) {
  if (s == "hann") return WindowKind::hann;
  if (s == "vorbis") return WindowKind::vorbis;
  fail(ErrorKind::config, "unknown window kind '" + std::string(s) + "'");
}

/// hann:   0.5 * (1 - cos(2 pi i / (n - 1)))
/// vorbis: sin(pi/2 * sin^2(pi (i + 0.5) / n)), power-complementary at 50% overlap
inline std::vector<double> make_window(WindowKind kind, std::size_t n) {
  require(n >= 2, ErrorKind::precondition,
          "make_window: n must be >= 2, got " + std::to_string(n));
  std::vector<double> w(n);
  const double pi = std::numbers::pi;
  // Computed on the first half and mirrored so w[i] == w[n - 1 - i] exactly.
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    const double x = static_cast<double>(i);
    if (kind == WindowKind::hann) {
      w[i] = 0.5 * (1.0 - std::cos(2.0 * pi * x / static_cast<double>(n - 1)));
    } else {
      const double s = std::sin(pi * (x + 0.5) / static_cast<double>(n));
      w[i] = std::sin(0.5 * pi * s * s);
    }
    w[n - 1 - i] = w[i];
  }
  return w;
}

}  // namespace malkit::dsp
