#pragma once

// Intrusive quality metrics on waveforms. All take (reference, estimate) of
// equal length; LSD and MCD are symmetric and zero at identity.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "malkit/dsp/signal.hpp"
#include "malkit/losses/losses.hpp"
#include "malkit/model/model.hpp"

namespace malkit::eval {

struct MetricConfig {
  dsp::StftConfig stft = dsp::StftConfig::desk();
  std::size_t n_mels = 40;
  std::size_t n_ceps = 13;
};

inline constexpr double kLsdEps = 1e-8;
/// |SI-SDR| is capped here; identity and pure scaling land on the upper cap.
inline constexpr double kSiSdrCap = 100.0;
inline const double kMcdConstant = 10.0 * std::numbers::sqrt2 / std::numbers::ln10;

namespace metric_detail {

inline void check_lengths(const char* op, const dsp::Waveform& a, const dsp::Waveform& b) {
  require(a.size() == b.size(), ErrorKind::precondition,
          std::string(op) + ": length mismatch " + std::to_string(a.size()) + " vs " +
              std::to_string(b.size()));
}

inline double power_db(const dsp::ComplexSpectrogram& s, std::size_t f, std::size_t k) {
  const double re = s.re(f, k), im = s.im(f, k);
  return 10.0 * std::log10(re * re + im * im + kLsdEps);
}

}  // namespace metric_detail

/// Mean over frames of the RMS (over bins) log-power difference, in dB.
inline double lsd(const dsp::Waveform& reference, const dsp::Waveform& estimate,
                  const MetricConfig& cfg = {}) {
  metric_detail::check_lengths("lsd", reference, estimate);
  const auto r = dsp::stft(reference, cfg.stft);
  const auto e = dsp::stft(estimate, cfg.stft);
  double total = 0.0;
  for (std::size_t f = 0; f < r.frames; ++f) {
    double acc = 0.0;
    for (std::size_t k = 0; k < r.bins; ++k) {
      const double d = metric_detail::power_db(r, f, k) - metric_detail::power_db(e, f, k);
      acc += d * d;
    }
    total += std::sqrt(acc / static_cast<double>(r.bins));
  }
  return total / static_cast<double>(r.frames);
}

/// Orthonormal DCT-II of each row of a (frames x n) table, first n_out coefficients.
inline dsp::Matrix dct2_rows(const dsp::Matrix& x, std::size_t n_out) {
  const std::size_t n = x.cols;
  dsp::Matrix basis(n_out, n);
  for (std::size_t c = 0; c < n_out; ++c) {
    const double scale = std::sqrt((c == 0 ? 1.0 : 2.0) / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      basis(c, i) = scale * std::cos(std::numbers::pi * static_cast<double>(c) *
                                     (static_cast<double>(i) + 0.5) / static_cast<double>(n));
    }
  }
  dsp::Matrix out(x.rows, n_out);
  for (std::size_t f = 0; f < x.rows; ++f) {
    for (std::size_t c = 0; c < n_out; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += basis(c, i) * x(f, i);
      out(f, c) = acc;
    }
  }
  return out;
}

/// Mel-cepstra (frames x n_ceps) of a waveform; c0 carries the overall level.
inline dsp::Matrix mel_cepstra(const dsp::Waveform& w, const MetricConfig& cfg) {
  const auto bank = dsp::mel_filterbank(w.sample_rate, cfg.stft.fft_size, cfg.n_mels);
  return dct2_rows(dsp::log_mel(dsp::stft(w, cfg.stft), bank), cfg.n_ceps);
}

/// Mel-cepstral distance in dB, c0 excluded.
inline double mcd(const dsp::Waveform& reference, const dsp::Waveform& estimate,
                  const MetricConfig& cfg = {}) {
  metric_detail::check_lengths("mcd", reference, estimate);
  require(cfg.n_ceps >= 2 && cfg.n_ceps <= cfg.n_mels, ErrorKind::precondition,
          "mcd: need 2 <= n_ceps <= n_mels");
  const auto r = mel_cepstra(reference, cfg);
  const auto e = mel_cepstra(estimate, cfg);
  double total = 0.0;
  for (std::size_t f = 0; f < r.rows; ++f) {
    double acc = 0.0;
    for (std::size_t c = 1; c < cfg.n_ceps; ++c) {
      const double d = r(f, c) - e(f, c);
      acc += d * d;
    }
    total += std::sqrt(acc);
  }
  return kMcdConstant * total / static_cast<double>(r.rows);
}

inline double si_sdr(const dsp::Waveform& reference, const dsp::Waveform& estimate) {
  metric_detail::check_lengths("si_sdr", reference, estimate);
  double dot = 0.0, ref_energy = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    dot += estimate.samples[i] * reference.samples[i];
    ref_energy += reference.samples[i] * reference.samples[i];
  }
  require(ref_energy > 0.0, ErrorKind::precondition, "si_sdr: reference is all zeros");
  const double alpha = dot / ref_energy;
  double target = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = alpha * reference.samples[i];
    const double e = estimate.samples[i] - t;
    target += t * t;
    residual += e * e;
  }
  if (residual == 0.0) return target > 0.0 ? kSiSdrCap : -kSiSdrCap;
  if (target == 0.0) return -kSiSdrCap;
  return std::clamp(10.0 * std::log10(target / residual), -kSiSdrCap, kSiSdrCap);
}

/// The spectral_l1 loss value as a metric.
inline double spectral_l1(const dsp::Waveform& reference, const dsp::Waveform& estimate,
                          const MetricConfig& cfg = {}) {
  metric_detail::check_lengths("spectral_l1", reference, estimate);
  return losses::spectral_l1(model::as_tensor(reference), model::as_tensor(estimate), cfg.stft)
      .item();
}

}  // namespace malkit::eval
