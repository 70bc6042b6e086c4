#pragma once

// Raw-array STFT/ISTFT kernels and their adjoints. The autodiff layer wraps
// these as differentiable ops; dsp::stft / dsp::istft wrap them for plain use.
//
// Spectra are laid out row-major as frames x bins x {re, im}.

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "malkit/dsp/fft.hpp"
#include "malkit/dsp/window.hpp"
#include "malkit/error.hpp"

namespace malkit::dsp {

struct StftConfig {
  std::size_t fft_size = 512;
  std::size_t hop = 256;
  WindowKind window = WindowKind::vorbis;
  std::size_t lookahead_frames = 0;

  std::size_t bins() const { return fft_size / 2 + 1; }

  void validate() const {
    require(fft_size >= 2 && fft_size % 2 == 0, ErrorKind::precondition,
            "stft config: fft_size must be even and >= 2, got " +
                std::to_string(fft_size));
    require(hop > 0 && hop <= fft_size, ErrorKind::precondition,
            "stft config: hop must satisfy 0 < hop <= fft_size");
  }

  /// 16 kHz desk default.
  static StftConfig desk() { return {}; }
  /// 48 kHz configuration: 960-point FFT, 480 hop, vorbis, 2 lookahead frames.
  static StftConfig fullband() { return {960, 480, WindowKind::vorbis, 2}; }

  bool operator==(const StftConfig&) const = default;
};

inline std::size_t frame_count(std::size_t length, const StftConfig& cfg) {
  require(length >= cfg.fft_size, ErrorKind::precondition,
          "stft: signal of " + std::to_string(length) +
              " samples is shorter than one frame (" +
              std::to_string(cfg.fft_size) + ")");
  return 1 + (length - cfg.fft_size) / cfg.hop;
}

/// Samples whose summed squared synthesis window falls below this floor are
/// tapered rather than divided (signal edges only).
inline constexpr double kWolaFloor = 1e-2;

inline std::vector<double> stft_forward(std::span<const double> x,
                                        const StftConfig& cfg,
                                        std::span<const double> window) {
  const std::size_t n = cfg.fft_size;
  const std::size_t bins = cfg.bins();
  const std::size_t frames = frame_count(x.size(), cfg);
  std::vector<double> out(frames * bins * 2);
  std::vector<cplx> buf(n);
  const FftPlan& plan = fft_plan(n);
  for (std::size_t f = 0; f < frames; ++f) {
    const double* seg = x.data() + f * cfg.hop;
    for (std::size_t i = 0; i < n; ++i) buf[i] = cplx(seg[i] * window[i], 0.0);
    plan.forward(buf);
    double* row = out.data() + f * bins * 2;
    for (std::size_t k = 0; k < bins; ++k) {
      row[2 * k] = buf[k].real();
      row[2 * k + 1] = buf[k].imag();
    }
  }
  return out;
}

/// Adjoint of stft_forward: maps a spectrum-shaped gradient back to samples.
inline std::vector<double> stft_adjoint(std::span<const double> grad,
                                        std::size_t length,
                                        const StftConfig& cfg,
                                        std::span<const double> window) {
  const std::size_t n = cfg.fft_size;
  const std::size_t bins = cfg.bins();
  const std::size_t frames = frame_count(length, cfg);
  std::vector<double> out(length, 0.0);
  std::vector<cplx> buf(n);
  const FftPlan& plan = fft_plan(n);
  for (std::size_t f = 0; f < frames; ++f) {
    const double* row = grad.data() + f * bins * 2;
    std::fill(buf.begin(), buf.end(), cplx(0.0, 0.0));
    // sum_k G_k e^{+i theta} = conj(fft(conj(G)))
    for (std::size_t k = 0; k < bins; ++k) buf[k] = cplx(row[2 * k], -row[2 * k + 1]);
    plan.forward(buf);
    double* seg = out.data() + f * cfg.hop;
    for (std::size_t i = 0; i < n; ++i) seg[i] += window[i] * buf[i].real();
  }
  return out;
}

/// Summed squared window per output sample, floored at kWolaFloor.
inline std::vector<double> wola_norm(std::size_t frames, std::size_t length,
                                     const StftConfig& cfg,
                                     std::span<const double> window) {
  std::vector<double> norm(length, 0.0);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < cfg.fft_size; ++i) {
      const std::size_t t = f * cfg.hop + i;
      if (t < length) norm[t] += window[i] * window[i];
    }
  }
  for (auto& v : norm) v = std::max(v, kWolaFloor);
  return norm;
}

inline void check_istft_config(const StftConfig& cfg) {
  cfg.validate();
  require(cfg.fft_size % cfg.hop == 0 && 2 * cfg.hop <= cfg.fft_size,
          ErrorKind::precondition,
          "istft: hop " + std::to_string(cfg.hop) + " with fft_size " +
              std::to_string(cfg.fft_size) +
              " lacks full overlap-add coverage (need hop dividing fft_size, "
              "hop <= fft_size/2)");
}

/// Weighted overlap-add with the analysis window reused for synthesis.
/// Imaginary parts of the DC and Nyquist bins are ignored.
inline std::vector<double> istft_forward(std::span<const double> spec,
                                         std::size_t frames, std::size_t length,
                                         const StftConfig& cfg,
                                         std::span<const double> window) {
  check_istft_config(cfg);
  const std::size_t n = cfg.fft_size;
  const std::size_t bins = cfg.bins();
  std::vector<double> out(length, 0.0);
  std::vector<cplx> buf(n);
  const FftPlan& plan = fft_plan(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t f = 0; f < frames; ++f) {
    const double* row = spec.data() + f * bins * 2;
    // y_n = (1/N) sum_k X_k e^{+i theta} over the Hermitian-extended spectrum,
    // computed as conj(fft(conj(X_ext))) / N.
    buf[0] = cplx(row[0], 0.0);
    buf[n / 2] = cplx(row[2 * (n / 2)], 0.0);
    for (std::size_t k = 1; k < n / 2; ++k) {
      const cplx v(row[2 * k], row[2 * k + 1]);
      buf[k] = std::conj(v);
      buf[n - k] = v;
    }
    plan.forward(buf);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = f * cfg.hop + i;
      if (t < length) out[t] += window[i] * buf[i].real() * inv_n;
    }
  }
  const auto norm = wola_norm(frames, length, cfg, window);
  for (std::size_t t = 0; t < length; ++t) out[t] /= norm[t];
  return out;
}

/// Adjoint of istft_forward.
inline std::vector<double> istft_adjoint(std::span<const double> grad,
                                         std::size_t frames,
                                         const StftConfig& cfg,
                                         std::span<const double> window) {
  check_istft_config(cfg);
  const std::size_t n = cfg.fft_size;
  const std::size_t bins = cfg.bins();
  const std::size_t length = grad.size();
  const auto norm = wola_norm(frames, length, cfg, window);
  std::vector<double> out(frames * bins * 2, 0.0);
  std::vector<cplx> buf(n);
  const FftPlan& plan = fft_plan(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = f * cfg.hop + i;
      const double g = t < length ? grad[t] / norm[t] : 0.0;
      buf[i] = cplx(window[i] * g, 0.0);
    }
    plan.forward(buf);
    double* row = out.data() + f * bins * 2;
    for (std::size_t k = 0; k < bins; ++k) {
      const double c = (k == 0 || k == n / 2) ? inv_n : 2.0 * inv_n;
      row[2 * k] = c * buf[k].real();
      row[2 * k + 1] = (k == 0 || k == n / 2) ? 0.0 : c * buf[k].imag();
    }
  }
  return out;
}

}  // namespace malkit::dsp
