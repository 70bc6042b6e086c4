#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "malkit/binary_io.hpp"
#include "malkit/datagen/dataset.hpp"
#include "malkit/datagen/synth.hpp"

namespace dg = malkit::datagen;
namespace dsp = malkit::dsp;
namespace fs = std::filesystem;
using std::numbers::pi;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("malkit_test_datagen_" + name);
  fs::remove_all(dir);
  return dir;
}

// Power spectrum averaged over non-overlapping rectangular frames.
std::vector<double> average_psd(const std::vector<double>& x, std::size_t n, std::size_t frames) {
  std::vector<double> psd(n / 2 + 1, 0.0);
  for (std::size_t f = 0; f < frames; ++f) {
    std::vector<dsp::cplx> buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = x[f * n + i];
    dsp::fft(buf);
    for (std::size_t k = 0; k < psd.size(); ++k) psd[k] += std::norm(buf[k]) / frames;
  }
  return psd;
}

}  // namespace

TEST(Speech, SameSeedIsBitIdentical) {
  dg::ClipSpec s;
  s.seed = 77;
  EXPECT_EQ(dg::synth_speech(s).samples, dg::synth_speech(s).samples);
  s.seed = 78;
  EXPECT_NE(dg::synth_speech(s).samples, dg::synth_speech(dg::ClipSpec{}).samples);
}

TEST(Speech, PeakNormalizedAndFinite) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    dg::ClipSpec s;
    s.seed = seed;
    const auto w = dg::synth_speech(s);
    EXPECT_EQ(w.size(), 32000u);
    EXPECT_NEAR(dsp::peak(w.samples), 0.5, 1e-12);
    for (double v : w.samples) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Speech, UnvoicedIsSilent) {
  dg::ClipSpec s;
  s.voiced_fraction = 0.0;
  EXPECT_LT(dsp::rms(dg::synth_speech(s).samples), 1e-3);
}

TEST(Speech, AutocorrelationPeaksAtPitchPeriod) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    dg::ClipSpec s;
    s.seed = seed;
    s.f0_lo = 140.0;
    s.f0_hi = 150.0;
    s.voiced_fraction = 1.0;
    const auto w = dg::synth_speech(s);
    const std::size_t start = 16000, len = 640;  // 40 ms from mid-clip
    const double sr = 16000.0;
    std::size_t best_lag = 0;
    double best = -1e300;
    for (std::size_t lag = static_cast<std::size_t>(sr / 400); lag <= sr / 60; ++lag) {
      double acc = 0.0;
      for (std::size_t i = 0; i < len; ++i) acc += w.samples[start + i] * w.samples[start + i + lag];
      if (acc > best) {
        best = acc;
        best_lag = lag;
      }
    }
    const double expected = sr / 145.0;
    EXPECT_NEAR(best_lag, expected, 0.1 * expected) << "seed " << seed;
  }
}

TEST(Speech, SpecValidation) {
  dg::ClipSpec s;
  s.f0_hi = 5000.0;
  EXPECT_THROW(dg::synth_speech(s), malkit::Error);
  s = {};
  s.duration_s = 0.0;
  EXPECT_THROW(dg::synth_speech(s), malkit::Error);
}

TEST(Noise, WhiteIsSpectrallyFlat) {
  const auto w = dg::synth_noise(dg::NoiseKind::white, 3, 2.0);
  const auto psd = average_psd(w.samples, 256, 100);
  double log_sum = 0.0, sum = 0.0;
  const std::size_t n = psd.size() - 2;  // DC and Nyquist are real-only
  for (std::size_t k = 1; k + 1 < psd.size(); ++k) {
    log_sum += std::log(psd[k]);
    sum += psd[k];
  }
  EXPECT_GT(std::exp(log_sum / n) / (sum / n), 0.9);
  for (double v : w.samples) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Noise, PinkSlopesMinusThreeDbPerOctave) {
  const auto w = dg::synth_noise(dg::NoiseKind::pink, 4, 2.0);
  const std::size_t n = 320;  // 50 Hz bins, 100 frames
  const auto psd = average_psd(w.samples, n, 100);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int count = 0;
  for (std::size_t k = 0; k < psd.size(); ++k) {
    const double f = k * 16000.0 / n;
    if (f < 100.0 || f > 4000.0) continue;
    const double x = std::log2(f), y = 10.0 * std::log10(psd[k]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
    ++count;
  }
  const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
  EXPECT_NEAR(slope, -3.0, 1.0);
}

TEST(Noise, HumEnergyAtOddHarmonics) {
  const auto w = dg::synth_noise(dg::NoiseKind::hum, 5, 2.0);
  const std::size_t n = w.size();
  std::vector<dsp::cplx> buf(w.samples.begin(), w.samples.end());
  dsp::fft(buf);
  double total = 0.0, near = 0.0;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    const double e = std::norm(buf[k]);
    const double f = k * 16000.0 / n;
    total += e;
    for (double h : {50.0, 150.0, 250.0, 350.0, 450.0}) {
      if (std::fabs(f - h) <= 5.0) near += e;
    }
  }
  EXPECT_GT(near / total, 0.8);
}

TEST(Noise, BabbleHasUnitRms) {
  const auto w = dg::synth_noise(dg::NoiseKind::babble, 6, 1.0);
  EXPECT_NEAR(dsp::rms(w.samples), 1.0, 1e-12);
  EXPECT_EQ(w.samples, dg::synth_noise(dg::NoiseKind::babble, 6, 1.0).samples);
}

TEST(Noise, UnknownKindRejected) {
  EXPECT_THROW(dg::parse_noise_kind("brown"), malkit::Error);
}

TEST(Manifest, SplitsUseDisjointNoiseFamilies) {
  const auto m = dg::make_manifest(11, {40, 10, 10, 20});
  std::set<dg::NoiseKind> train, ood;
  for (const auto& e : m.clips) {
    if (e.split == dg::Split::train || e.split == dg::Split::val) train.insert(e.spec.noise_kind);
    if (e.split == dg::Split::test_out_domain) ood.insert(e.spec.noise_kind);
  }
  EXPECT_EQ(train, (std::set{dg::NoiseKind::white, dg::NoiseKind::pink}));
  EXPECT_EQ(ood, (std::set{dg::NoiseKind::hum, dg::NoiseKind::babble}));
  auto bad = m;
  bad.clips.back().spec.noise_kind = dg::NoiseKind::white;
  EXPECT_THROW(bad.validate(), malkit::Error);
}

TEST(Dataset, TenSpecsGiveTwentyFilesAndTenLines) {
  dg::DatasetManifest m;
  for (int i = 0; i < 10; ++i) {
    dg::ManifestEntry e;
    e.id = "clip" + std::to_string(i);
    e.split = i < 7 ? dg::Split::train : dg::Split::test_out_domain;
    e.spec.seed = 500 + i;
    e.spec.duration_s = 0.5;
    e.spec.noise_kind = i < 7 ? dg::NoiseKind::pink : dg::NoiseKind::hum;
    m.clips.push_back(e);
  }
  const auto dir = scratch_dir("ten");
  dg::build_dataset(m, dir);
  std::size_t wavs = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.path().extension() == ".wav") ++wavs;
  }
  EXPECT_EQ(wavs, 20u);
  std::ifstream index(dir / dg::kIndexFile);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(index, line)) {
    ++lines;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 5);
  }
  EXPECT_EQ(lines, 10u);
  fs::remove_all(dir);
}

TEST(Dataset, RegenerationIsByteIdenticalAndSnrMatchesIndex) {
  const auto m = dg::make_manifest(21, {6, 2, 2, 2}, 1.0);
  const auto a = scratch_dir("regen_a"), b = scratch_dir("regen_b");
  dg::build_dataset(m, a);
  dg::build_dataset(m, b);
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    EXPECT_EQ(malkit::read_file(entry.path()), malkit::read_file(b / rel)) << rel;
    ++compared;
  }
  EXPECT_EQ(compared, 2 * 12u + 1);

  const auto loaded = dg::load_dataset(a);
  ASSERT_EQ(loaded.size(), 12u);
  std::set<double> snrs;
  for (const auto& c : loaded) {
    EXPECT_NEAR(dsp::measured_snr_db(c.clean.samples, c.noisy.samples), c.snr_db, 1e-3) << c.id;
    EXPECT_GE(c.snr_db, -5.0);
    EXPECT_LE(c.snr_db, 20.0);
    EXPECT_LE(dsp::peak(c.noisy.samples), 1.0);
    EXPECT_LE(dsp::peak(c.clean.samples), 1.0);
    snrs.insert(c.snr_db);
  }
  EXPECT_GT(snrs.size(), 6u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, InMemoryClipsMatchWavRoundTrip) {
  const auto m = dg::make_manifest(31, {2, 0, 0, 0}, 0.5);
  const auto dir = scratch_dir("roundtrip");
  const auto built = dg::build_dataset(m, dir);
  const auto loaded = dg::load_dataset(dir);
  ASSERT_EQ(built.size(), loaded.size());
  for (std::size_t i = 0; i < built.size(); ++i) {
    EXPECT_EQ(built[i].clean.samples, loaded[i].clean.samples);
    EXPECT_EQ(built[i].noisy.samples, loaded[i].noisy.samples);
    EXPECT_EQ(built[i].snr_db, loaded[i].snr_db);
  }
  fs::remove_all(dir);
}

TEST(Dataset, MissingIndexIsNotFound) {
  try {
    dg::load_dataset("/nonexistent/dataset");
    FAIL();
  } catch (const malkit::Error& e) {
    EXPECT_EQ(e.kind(), malkit::ErrorKind::not_found);
  }
}
