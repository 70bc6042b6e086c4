#pragma once

// Deterministic speech-like and noise signal synthesis.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "malkit/dsp/fft.hpp"
#include "malkit/dsp/signal.hpp"
#include "malkit/error.hpp"

namespace malkit::datagen {

enum class NoiseKind { white, pink, hum, babble };

inline std::string_view to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::white: return "white";
    case NoiseKind::pink: return "pink";
    case NoiseKind::hum: return "hum";
    case NoiseKind::babble: return "babble";
  }
  return "unknown";
}

inline NoiseKind parse_noise_kind(std::string_view s) {
  if (s == "white") return NoiseKind::white;
  if (s == "pink") return NoiseKind::pink;
  if (s == "hum") return NoiseKind::hum;
  if (s == "babble") return NoiseKind::babble;
  fail(ErrorKind::precondition, "unknown noise kind '" + std::string(s) + "'");
}

struct ClipSpec {
  std::uint64_t seed = 0;
  double duration_s = 2.0;
  double f0_lo = 80.0;
  double f0_hi = 300.0;
  int n_formants = 3;
  double voiced_fraction = 0.7;
  NoiseKind noise_kind = NoiseKind::white;
  std::optional<double> snr_db;  // drawn from U[-5, 20] when absent
  int sample_rate = 16000;

  std::size_t length() const {
    return static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  }

  void validate() const {
    require(sample_rate > 0, ErrorKind::precondition, "clip spec: sample rate must be positive");
    require(duration_s > 0.0 && length() > 0, ErrorKind::precondition,
            "clip spec: duration must be positive");
    require(f0_lo > 0.0 && f0_lo <= f0_hi && f0_hi < sample_rate / 8.0,
            ErrorKind::precondition, "clip spec: f0 range must lie in (0, nyquist/4)");
    require(n_formants >= 0, ErrorKind::precondition, "clip spec: negative formant count");
    require(voiced_fraction >= 0.0 && voiced_fraction <= 1.0, ErrorKind::precondition,
            "clip spec: voiced_fraction outside [0, 1]");
  }
};

/// Independent random stream for one purpose of one clip.
inline std::mt19937_64 clip_rng(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), purpose, 0x6d616c6bu};
  return std::mt19937_64(seq);
}

enum : std::uint32_t {
  kStreamEnvelope = 1,
  kStreamPitch = 2,
  kStreamFormant = 3,
  kStreamNoise = 4,
  kStreamSnr = 5,
  kStreamBabble = 6,
};

namespace synth_detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Voiced/pause gate with raised-cosine edges. Duty cycle ~ voiced_fraction.
inline std::vector<double> envelope(const ClipSpec& spec, std::size_t n) {
  std::vector<double> env(n, 0.0);
  if (spec.voiced_fraction <= 0.0) return env;
  auto rng = clip_rng(spec.seed, kStreamEnvelope);
  const double sr = spec.sample_rate;
  const auto ramp = static_cast<std::size_t>(0.015 * sr);
  std::size_t t = 0;
  if (spec.voiced_fraction < 1.0) t = static_cast<std::size_t>(uniform(rng, 0.02, 0.12) * sr);
  while (t < n) {
    const double voiced_s = uniform(rng, 0.15, 0.45);
    const auto len = static_cast<std::size_t>(voiced_s * sr);
    for (std::size_t i = 0; i < len && t + i < n; ++i) {
      double g = 1.0;
      if (i < ramp) g = 0.5 - 0.5 * std::cos(std::numbers::pi * (i + 0.5) / ramp);
      if (len - i <= ramp) {
        g = std::min(g, 0.5 - 0.5 * std::cos(std::numbers::pi * (len - i - 0.5) / ramp));
      }
      env[t + i] = g;
    }
    t += len;
    if (spec.voiced_fraction < 1.0) {
      const double pause_s =
          voiced_s * (1.0 - spec.voiced_fraction) / spec.voiced_fraction * uniform(rng, 0.7, 1.3);
      t += static_cast<std::size_t>(pause_s * sr);
    }
  }
  return env;
}

// Random-walk fundamental, reflected inside [lo, hi], knots every 10 ms.
inline std::vector<double> pitch_track(const ClipSpec& spec, std::size_t n) {
  auto rng = clip_rng(spec.seed, kStreamPitch);
  const auto step = static_cast<std::size_t>(std::max(1.0, 0.01 * spec.sample_rate));
  const double lo = std::log(spec.f0_lo), hi = std::log(spec.f0_hi);
  std::normal_distribution<double> walk(0.0, 0.03);
  double cur = uniform(rng, lo, std::max(lo, hi - 1e-12));
  std::vector<double> knots;
  for (std::size_t t = 0; t <= n + step; t += step) {
    knots.push_back(cur);
    cur += walk(rng);
    if (hi > lo) {
      while (cur < lo || cur > hi) cur = cur < lo ? 2 * lo - cur : 2 * hi - cur;
    } else {
      cur = lo;
    }
  }
  std::vector<double> f0(n);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t k = t / step;
    const double frac = static_cast<double>(t % step) / static_cast<double>(step);
    f0[t] = std::exp(knots[k] * (1.0 - frac) + knots[k + 1] * frac);
  }
  return f0;
}

}  // namespace synth_detail

/// Harmonic source (1/h rolloff) with a random-walk pitch, passed through a
/// cascade of slowly drifting formant resonators, gated by a voiced/pause
/// envelope and peak-normalized to 0.5.
inline dsp::Waveform synth_speech(const ClipSpec& spec) {
  spec.validate();
  using synth_detail::uniform;
  const std::size_t n = spec.length();
  const double sr = spec.sample_rate;
  const double two_pi = 2.0 * std::numbers::pi;
  dsp::Waveform out;
  out.sample_rate = spec.sample_rate;
  out.samples.assign(n, 0.0);

  const auto env = synth_detail::envelope(spec, n);
  if (std::all_of(env.begin(), env.end(), [](double v) { return v == 0.0; })) return out;
  const auto f0 = synth_detail::pitch_track(spec, n);

  std::vector<double> src(n);
  double phase = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    phase += two_pi * f0[t] / sr;
    if (phase > two_pi) phase -= two_pi;
    const int harmonics = std::max(1, static_cast<int>(0.45 * sr / f0[t]));
    // sin(h*phase) by Chebyshev recurrence
    const double c2 = 2.0 * std::cos(phase);
    double s_prev = 0.0, s_cur = std::sin(phase), acc = 0.0;
    for (int h = 1; h <= harmonics; ++h) {
      acc += s_cur / h;
      const double s_next = c2 * s_cur - s_prev;
      s_prev = s_cur;
      s_cur = s_next;
    }
    src[t] = acc;
  }

  struct Formant {
    double base, depth, rate, phase, bandwidth;
  };
  auto rng = clip_rng(spec.seed, kStreamFormant);
  const double bands[][2] = {{300, 800}, {900, 2200}, {2200, 3200}, {3200, 4200}, {4200, 5200}};
  std::vector<Formant> formants;
  for (int i = 0; i < spec.n_formants; ++i) {
    const auto& b = bands[std::min<std::size_t>(i, 4)];
    const double hi = std::min(b[1], 0.45 * sr);
    const double lo = std::min(b[0], 0.8 * hi);
    formants.push_back({uniform(rng, lo, hi), uniform(rng, 0.05, 0.15), uniform(rng, 1.0, 4.0),
                        uniform(rng, 0.0, two_pi), uniform(rng, 60.0, 120.0)});
  }
  std::vector<double> y = src;
  for (const auto& fm : formants) {
    const double r = std::exp(-std::numbers::pi * fm.bandwidth / sr);
    double y1 = 0.0, y2 = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double fc = fm.base * (1.0 + fm.depth * std::sin(two_pi * fm.rate * t / sr + fm.phase));
      const double theta = two_pi * fc / sr;
      const double a1 = -2.0 * r * std::cos(theta);
      const double a2 = r * r;
      const double gain = (1.0 - r) * std::sqrt(1.0 - 2.0 * r * std::cos(2.0 * theta) + r * r);
      const double v = gain * y[t] - a1 * y1 - a2 * y2;
      y2 = y1;
      y1 = v;
      y[t] = v;
    }
  }
  for (std::size_t t = 0; t < n; ++t) y[t] *= env[t];
  const double pk = dsp::peak(y);
  if (pk > 0.0) {
    for (std::size_t t = 0; t < n; ++t) out.samples[t] = 0.5 * y[t] / pk;
  }
  return out;
}

/// white: i.i.d. uniform; pink: white shaped by 1/sqrt(f); hum: 50 Hz and its
/// odd harmonics up to 450 Hz with slow frequency jitter; babble: six
/// independent synthetic talkers summed and scaled to unit RMS.
inline dsp::Waveform synth_noise(NoiseKind kind, std::uint64_t seed, double duration_s,
                                 int sample_rate = 16000) {
  require(duration_s > 0.0 && sample_rate > 0, ErrorKind::precondition,
          "synth_noise: duration and sample rate must be positive");
  using synth_detail::uniform;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  const double sr = sample_rate;
  const double two_pi = 2.0 * std::numbers::pi;
  auto rng = clip_rng(seed, kStreamNoise);
  dsp::Waveform out;
  out.sample_rate = sample_rate;
  out.samples.assign(n, 0.0);

  switch (kind) {
    case NoiseKind::white:
      for (auto& s : out.samples) s = uniform(rng, -1.0, 1.0);
      break;
    case NoiseKind::pink: {
      std::vector<dsp::cplx> buf(n);
      for (auto& v : buf) v = dsp::cplx(uniform(rng, -1.0, 1.0), 0.0);
      dsp::fft(buf);
      buf[0] = 0.0;
      for (std::size_t k = 1; k < n; ++k) {
        const std::size_t kk = std::min(k, n - k);
        buf[k] /= std::sqrt(static_cast<double>(kk) * sr / static_cast<double>(n));
      }
      dsp::ifft(buf);
      for (std::size_t t = 0; t < n; ++t) out.samples[t] = buf[t].real();
      const double r = dsp::rms(out.samples);
      if (r > 0.0) {
        for (auto& s : out.samples) s *= 0.577 / r;
      }
      break;
    }
    case NoiseKind::hum: {
      const double amps[] = {1.0, 0.6, 0.4, 0.3, 0.2};
      for (int h = 0; h < 5; ++h) {
        const double f = 50.0 * (2 * h + 1);
        const double a = amps[h] * uniform(rng, 0.7, 1.3);
        double phase = uniform(rng, 0.0, two_pi);
        const double jitter_rate = uniform(rng, 0.2, 1.0);
        const double jitter_phase = uniform(rng, 0.0, two_pi);
        for (std::size_t t = 0; t < n; ++t) {
          const double inst = f * (1.0 + 0.002 * std::sin(two_pi * jitter_rate * t / sr + jitter_phase));
          phase += two_pi * inst / sr;
          out.samples[t] += a * std::sin(phase);
        }
      }
      break;
    }
    case NoiseKind::babble: {
      auto brng = clip_rng(seed, kStreamBabble);
      for (int talker = 0; talker < 6; ++talker) {
        ClipSpec s;
        s.seed = brng();
        s.duration_s = duration_s;
        s.sample_rate = sample_rate;
        s.f0_lo = uniform(brng, 80.0, 200.0);
        s.f0_hi = s.f0_lo + uniform(brng, 30.0, 100.0);
        s.voiced_fraction = uniform(brng, 0.6, 0.9);
        const auto talk = synth_speech(s);
        for (std::size_t t = 0; t < n; ++t) out.samples[t] += talk.samples[t];
      }
      const double r = dsp::rms(out.samples);
      if (r > 0.0) {
        for (auto& s : out.samples) s /= r;
      }
      break;
    }
  }
  return out;
}

}  // namespace malkit::datagen
