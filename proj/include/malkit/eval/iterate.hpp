#pragma once

// Iterative enhancement: feed the model its own output and watch how far
// each pass moves the signal. A self-consistent model approaches a fixed
// point; drift is measured away from the tapered signal edges.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "malkit/eval/metrics.hpp"
#include "malkit/model/model.hpp"
#include "malkit/parallel.hpp"

namespace malkit::eval {

struct DriftCurve {
  std::vector<int> k;              // 1..K
  std::vector<double> drift;       // ||x_k - x_{k-1}|| / ||x_{k-1}|| on the interior
  std::vector<double> si_sdr;      // SI-SDR(clean, x_k); empty without a clean reference

  std::size_t size() const { return k.size(); }
  bool operator==(const DriftCurve&) const = default;
};

struct IterationResult {
  DriftCurve curve;
  /// x_1..x_K when all iterates are kept, otherwise only x_K.
  std::vector<dsp::Waveform> iterates;

  const dsp::Waveform& last() const { return iterates.back(); }
};

/// Samples within one FFT frame of either end are excluded; there the
/// synthesis normalization is partial and the identity is only approximate.
inline std::size_t edge_margin(const model::ModelConfig& config) { return config.stft.fft_size; }

inline double relative_change(const dsp::Waveform& prev, const dsp::Waveform& next,
                              std::size_t margin) {
  require(prev.size() == next.size(), ErrorKind::precondition,
          "relative_change: length mismatch");
  const std::size_t lo = std::min(margin, prev.size());
  const std::size_t hi = prev.size() > margin ? std::max(lo, prev.size() - margin) : lo;
  double num = 0.0, den = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    const double d = next.samples[i] - prev.samples[i];
    num += d * d;
    den += prev.samples[i] * prev.samples[i];
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

/// x_0 = noisy, x_k = enhance(x_{k-1}) for k = 1..K. Restarting from x_a with
/// K = b reproduces iterates a+1..a+b of a single run bitwise.
inline IterationResult iterate_enhance(const model::ModelParams& params, const dsp::Waveform& noisy,
                                       int K, const dsp::Waveform* clean = nullptr,
                                       bool keep_all = false) {
  require(K >= 1, ErrorKind::precondition,
          "iterate_enhance: K must be >= 1, got " + std::to_string(K));
  if (clean) metric_detail::check_lengths("iterate_enhance", *clean, noisy);
  const std::size_t margin = edge_margin(params.config);
  IterationResult out;
  dsp::Waveform prev = noisy;
  for (int k = 1; k <= K; ++k) {
    dsp::Waveform next = model::enhance(params, prev);
    out.curve.k.push_back(k);
    out.curve.drift.push_back(relative_change(prev, next, margin));
    if (clean) out.curve.si_sdr.push_back(si_sdr(*clean, next));
    if (keep_all || k == K) out.iterates.push_back(next);
    prev = std::move(next);
  }
  return out;
}

inline double median(std::vector<double> v) {
  require(!v.empty(), ErrorKind::precondition, "median: empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  require(!v.empty(), ErrorKind::precondition, "mean: empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Fraction of paired bootstrap resamples (clips drawn with replacement)
/// in which holds(median(a*), median(b*)) is true.
template <typename Pred>
double bootstrap_median_fraction(const std::vector<double>& a, const std::vector<double>& b,
                                 Pred holds, std::size_t resamples, std::uint64_t seed) {
  require(a.size() == b.size() && !a.empty(), ErrorKind::precondition,
          "bootstrap: samples must be paired and non-empty");
  require(resamples >= 1, ErrorKind::precondition, "bootstrap: need at least one resample");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, a.size() - 1);
  std::vector<double> ra(a.size()), rb(b.size());
  std::size_t wins = 0;
  for (std::size_t r = 0; r < resamples; ++r) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::size_t j = pick(rng);
      ra[i] = a[j];
      rb[i] = b[j];
    }
    if (holds(median(ra), median(rb))) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(resamples);
}

}  // namespace malkit::eval
