#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "malkit/error.hpp"

namespace malkit::dsp {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Unnormalized forward DFT, X[k] = sum_n x[n] exp(-2 pi i k n / N).
/// Power-of-two sizes use an iterative radix-2 transform; every other size
/// goes through Bluestein's chirp-z reduction onto a power-of-two plan.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    require(n >= 1, ErrorKind::precondition, "fft: size must be positive");
    if (is_pow2(n)) {
      init_radix2();
    } else {
      init_bluestein();
    }
  }

  std::size_t size() const { return n_; }

  void forward(std::span<cplx> data) const {
    require(data.size() == n_, ErrorKind::shape, "fft: buffer size mismatch");
    if (n_ == 1) return;
    if (bluestein_inner_) {
      run_bluestein(data);
    } else {
      run_radix2(data);
    }
  }

 private:
  void init_radix2() {
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n_) ++bits;
    bitrev_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) {
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      }
      bitrev_[i] = r;
    }
    twiddle_.resize(n_ / 2);
    for (std::size_t k = 0; k < n_ / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) /
                           static_cast<double>(n_);
      twiddle_[k] = cplx(std::cos(angle), std::sin(angle));
    }
  }

  void run_radix2(std::span<cplx> a) const {
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < bitrev_[i]) std::swap(a[i], a[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          const cplx t = twiddle_[j * stride] * a[start + j + half];
          const cplx u = a[start + j];
          a[start + j] = u + t;
          a[start + j + half] = u - t;
        }
      }
    }
  }

  void init_bluestein() {
    std::size_t m = 1;
    while (m < 2 * n_ - 1) m <<= 1;
    bluestein_inner_ = std::make_unique<FftPlan>(m);
    chirp_.resize(n_);
    const std::size_t two_n = 2 * n_;
    for (std::size_t k = 0; k < n_; ++k) {
      // k^2 mod 2N keeps the phase argument small.
      const std::size_t k2 = (k * k) % two_n;
      const double angle =
          -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n_);
      chirp_[k] = cplx(std::cos(angle), std::sin(angle));
    }
    chirp_fft_.assign(m, cplx(0.0, 0.0));
    chirp_fft_[0] = std::conj(chirp_[0]);
    for (std::size_t k = 1; k < n_; ++k) {
      chirp_fft_[k] = std::conj(chirp_[k]);
      chirp_fft_[m - k] = std::conj(chirp_[k]);
    }
    bluestein_inner_->forward(chirp_fft_);
  }

  void run_bluestein(std::span<cplx> data) const {
    const std::size_t m = bluestein_inner_->size();
    std::vector<cplx> a(m, cplx(0.0, 0.0));
    for (std::size_t k = 0; k < n_; ++k) a[k] = data[k] * chirp_[k];
    bluestein_inner_->forward(a);
    for (std::size_t k = 0; k < m; ++k) a[k] = std::conj(a[k] * chirp_fft_[k]);
    // inverse via conjugation: ifft(z) = conj(fft(conj(z))) / m
    bluestein_inner_->forward(a);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n_; ++k) {
      data[k] = std::conj(a[k]) * inv_m * chirp_[k];
    }
  }

  std::size_t n_;
  std::vector<std::size_t> bitrev_;
  std::vector<cplx> twiddle_;
  std::unique_ptr<FftPlan> bluestein_inner_;
  std::vector<cplx> chirp_;
  std::vector<cplx> chirp_fft_;
};

/// Per-thread plan cache; plans are immutable once built.
inline const FftPlan& fft_plan(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    it = cache.emplace(n, std::make_unique<FftPlan>(n)).first;
  }
  return *it->second;
}

inline void fft(std::span<cplx> data) { fft_plan(data.size()).forward(data); }

/// Normalized inverse DFT (1/N scaling).
inline void ifft(std::span<cplx> data) {
  for (auto& v : data) v = std::conj(v);
  fft(data);
  const double inv = 1.0 / static_cast<double>(data.size());
  for (auto& v : data) v = std::conj(v) * inv;
}

}  // namespace malkit::dsp
