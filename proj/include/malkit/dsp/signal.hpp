#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "malkit/dsp/stft_kernels.hpp"
#include "malkit/dsp/window.hpp"
#include "malkit/error.hpp"

namespace malkit::dsp {

struct Waveform {
  int sample_rate = 16000;
  std::vector<double> samples;

  std::size_t size() const { return samples.size(); }

  void validate() const {
    require(sample_rate > 0, ErrorKind::precondition,
            "waveform: sample rate must be positive");
    for (double s : samples) {
      require(std::isfinite(s), ErrorKind::numeric, "waveform: non-finite sample");
    }
  }

  bool operator==(const Waveform&) const = default;
};

/// Row-major dense matrix used for filterbanks and feature tables.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct ComplexSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> values;  // frames x bins x {re, im}
  StftConfig config;
  int sample_rate = 16000;

  double re(std::size_t f, std::size_t k) const { return values[(f * bins + k) * 2]; }
  double im(std::size_t f, std::size_t k) const { return values[(f * bins + k) * 2 + 1]; }
  double magnitude(std::size_t f, std::size_t k) const {
    return std::hypot(re(f, k), im(f, k));
  }
};

/// Shared, per-thread cached analysis window.
inline std::shared_ptr<const std::vector<double>> shared_window(WindowKind kind,
                                                                std::size_t n) {
  thread_local std::map<std::pair<int, std::size_t>,
                        std::shared_ptr<const std::vector<double>>>
      cache;
  const auto key = std::make_pair(static_cast<int>(kind), n);
  auto it = cache.find(key);
  if (it == cache.end()) {
    it = cache
             .emplace(key, std::make_shared<const std::vector<double>>(
                               make_window(kind, n)))
             .first;
  }
  return it->second;
}

inline ComplexSpectrogram stft(const Waveform& x, const StftConfig& cfg) {
  cfg.validate();
  const auto window = shared_window(cfg.window, cfg.fft_size);
  ComplexSpectrogram spec;
  spec.frames = frame_count(x.size(), cfg);
  spec.bins = cfg.bins();
  spec.values = stft_forward(x.samples, cfg, *window);
  spec.config = cfg;
  spec.sample_rate = x.sample_rate;
  return spec;
}

/// Output length defaults to the span covered by the frames.
inline Waveform istft(const ComplexSpectrogram& spec, std::size_t length = 0) {
  const StftConfig& cfg = spec.config;
  require(spec.bins == cfg.bins() && spec.values.size() == spec.frames * spec.bins * 2,
          ErrorKind::shape, "istft: spectrogram dimensions inconsistent with config");
  if (length == 0) length = (spec.frames - 1) * cfg.hop + cfg.fft_size;
  const auto window = shared_window(cfg.window, cfg.fft_size);
  Waveform out;
  out.sample_rate = spec.sample_rate;
  out.samples = istft_forward(spec.values, spec.frames, length, cfg, *window);
  return out;
}

inline double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

inline double rms(std::span<const double> x) { return std::sqrt(mean_power(x)); }

inline double peak(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::fabs(v));
  return p;
}

/// Noise gain alpha such that 10 log10(P_clean / (alpha^2 P_noise)) == snr_db.
inline double snr_gain(double clean_power, double noise_power, double snr_db) {
  return std::sqrt(clean_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
}

/// clean + alpha * noise at the requested SNR over the full clip.
/// snr_db == +infinity returns clean unchanged.
inline Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db) {
  require(clean.size() == noise.size(), ErrorKind::precondition,
          "mix_at_snr: length mismatch " + std::to_string(clean.size()) + " vs " +
              std::to_string(noise.size()));
  require(clean.sample_rate == noise.sample_rate, ErrorKind::precondition,
          "mix_at_snr: sample rate mismatch");
  if (std::isinf(snr_db) && snr_db > 0) return clean;
  const double pc = mean_power(clean.samples);
  const double pn = mean_power(noise.samples);
  require(pc > 0.0, ErrorKind::precondition, "mix_at_snr: clean has zero power");
  require(pn > 0.0, ErrorKind::precondition,
          "mix_at_snr: zero-power noise cannot reach a finite SNR");
  const double alpha = snr_gain(pc, pn, snr_db);
  Waveform out = clean;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += alpha * noise.samples[i];
  return out;
}

inline double measured_snr_db(std::span<const double> clean, std::span<const double> noisy) {
  require(clean.size() == noisy.size(), ErrorKind::precondition,
          "measured_snr_db: length mismatch");
  double pc = 0.0, pn = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    pc += clean[i] * clean[i];
    const double d = noisy[i] - clean[i];
    pn += d * d;
  }
  return 10.0 * std::log10(pc / pn);
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular mel filters (n_mels x bins), centers evenly spaced on the mel
/// scale between 0 Hz and Nyquist. The lowest filter is flat below its
/// center so the DC bin is covered. Rows are normalized to unit sum, which
/// makes a white spectrum map to a flat mel profile.
inline Matrix mel_filterbank(int sample_rate, std::size_t fft_size, std::size_t n_mels) {
  const std::size_t bins = fft_size / 2 + 1;
  require(n_mels >= 2, ErrorKind::precondition, "mel_filterbank: n_mels must be >= 2");
  require(n_mels <= bins, ErrorKind::precondition,
          "mel_filterbank: n_mels " + std::to_string(n_mels) + " exceeds " +
              std::to_string(bins) + " bins");
  const double nyquist = sample_rate / 2.0;
  const double mel_max = hz_to_mel(nyquist);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  Matrix bank(n_mels, bins);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
      double w = 0.0;
      if (f <= center) {
        w = (m == 0) ? 1.0 : (f > lo ? (f - lo) / (center - lo) : 0.0);
      } else if (f < hi) {
        w = (hi - f) / (hi - center);
      }
      bank(m, k) = w;
    }
  }
  for (std::size_t m = 0; m < n_mels; ++m) {
    double s = 0.0;
    for (std::size_t k = 0; k < bins; ++k) s += bank(m, k);
    require(s > 0.0, ErrorKind::precondition,
            "mel_filterbank: filter " + std::to_string(m) +
                " covers no bins; reduce n_mels or raise fft_size");
    for (std::size_t k = 0; k < bins; ++k) bank(m, k) /= s;
  }
  return bank;
}

inline constexpr double kFeatureEps = 1e-8;

/// frames x n_mels table of log(max(bank . |X|, eps)).
inline Matrix log_mel(const ComplexSpectrogram& spec, const Matrix& bank) {
  require(bank.cols == spec.bins, ErrorKind::shape,
          "log_mel: filterbank has " + std::to_string(bank.cols) +
              " bins, spectrogram has " + std::to_string(spec.bins));
  Matrix out(spec.frames, bank.rows);
  std::vector<double> mag(spec.bins);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    for (std::size_t k = 0; k < spec.bins; ++k) mag[k] = spec.magnitude(f, k);
    for (std::size_t m = 0; m < bank.rows; ++m) {
      double acc = 0.0;
      for (std::size_t k = 0; k < spec.bins; ++k) acc += bank(m, k) * mag[k];
      out(f, m) = std::log(std::max(acc, kFeatureEps));
    }
  }
  return out;
}

}  // namespace malkit::dsp
