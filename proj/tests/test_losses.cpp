#include <gtest/gtest.h>

#include <complex>
#include <numbers>

#include "malkit/losses/losses.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

namespace ad = malkit::ad;
namespace model = malkit::model;
namespace losses = malkit::losses;
namespace dsp = malkit::dsp;
using malkit::Error;
using malkit::testing::test_signal;
using malkit::testing::tiny_config;
using std::numbers::pi;

namespace {

ad::Tensor sig(std::size_t n, std::uint64_t seed, double noise = 0.0) {
  return model::as_tensor(test_signal(n, seed, noise));
}

std::shared_ptr<const model::EncoderSnapshot> tiny_snapshot(std::uint64_t seed) {
  return std::make_shared<const model::EncoderSnapshot>(
      model::snapshot_encoder(model::init_params(tiny_config(), seed), 0));
}

}  // namespace

TEST(SpectralL1, ZeroAtIdentityAndSymmetric) {
  const dsp::StftConfig cfg{};
  const auto a = sig(2048, 1), b = sig(2048, 2, 0.3);
  EXPECT_EQ(losses::spectral_l1(a, a, cfg).item(), 0.0);
  EXPECT_EQ(losses::spectral_l1(a, b, cfg).item(), losses::spectral_l1(b, a, cfg).item());
  EXPECT_GT(losses::spectral_l1(a, b, cfg).item(), 0.0);
}

TEST(SpectralL1, CosineAgainstSilenceMatchesDirectDft) {
  const dsp::StftConfig cfg{64, 32, dsp::WindowKind::vorbis, 0};
  const std::size_t n = 256, k = 5;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::cos(2 * pi * k * i / 64.0);
  const auto w = dsp::make_window(cfg.window, 64);
  // Direct O(N^2) DFT per frame.
  const std::size_t frames = 1 + (n - 64) / 32;
  double acc = 0.0;
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t b = 0; b <= 32; ++b) {
      std::complex<double> s = 0.0;
      for (std::size_t t = 0; t < 64; ++t) {
        s += x[f * 32 + t] * w[t] * std::polar(1.0, -2 * pi * double(b * t) / 64.0);
      }
      acc += std::abs(s);
    }
  }
  const double want = acc / (frames * 33.0);
  const auto got = losses::spectral_l1(ad::Tensor::vector(x), ad::Tensor::zeros({n}), cfg).item();
  EXPECT_NEAR(got, want, 1e-12 * want);
}

TEST(SpectralL1, LengthMismatch) {
  try {
    losses::spectral_l1(sig(600, 1), sig(601, 1), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), malkit::ErrorKind::precondition);
  }
}

TEST(Multires, ZeroAtIdentitySymmetricAndMonotoneAlongSegment) {
  const auto clean = sig(4000, 3), noisy = sig(4000, 3, 0.4);
  EXPECT_EQ(losses::multires_spectral(clean, clean).item(), 0.0);
  EXPECT_EQ(losses::multires_spectral(clean, noisy).item(),
            losses::multires_spectral(noisy, clean).item());
  std::vector<double> values;
  for (double t : {0.0, 0.5, 1.0}) {
    std::vector<double> e(4000);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (1 - t) * noisy[i] + t * clean[i];
    values.push_back(losses::multires_spectral(clean, ad::Tensor::vector(e)).item());
  }
  EXPECT_GT(values[0], values[1]);
  EXPECT_GT(values[1], values[2]);
  EXPECT_EQ(values[2], 0.0);
}

TEST(Multires, RejectsShortInput) {
  EXPECT_THROW(losses::multires_spectral(sig(1000, 1), sig(1000, 2)), Error);
}

TEST(FeatureLoss, IdentityExtractorIsTimeDomainL1) {
  const auto a = sig(500, 4), b = sig(500, 5, 0.2);
  double ref = 0.0;
  for (std::size_t i = 0; i < 500; ++i) ref += std::fabs(a[i] - b[i]);
  ref /= 500.0;
  const auto got = losses::feature_loss([](const ad::Tensor& x) { return x; }, a, b).item();
  EXPECT_NEAR(got, ref, 1e-15);
}

TEST(FeatureLoss, MagnitudeExtractorIsMagnitudeSpectralLoss) {
  const dsp::StftConfig cfg{};
  const auto a = sig(2048, 6), b = sig(2048, 7, 0.2);
  const auto win = dsp::shared_window(cfg.window, cfg.fft_size);
  const auto got = losses::feature_loss(
      [&](const ad::Tensor& x) { return ad::complex_abs(ad::stft(x, cfg, win)); }, a, b);
  const auto sa = dsp::stft(test_signal(2048, 6), cfg), sb = dsp::stft(test_signal(2048, 7, 0.2), cfg);
  double ref = 0.0;
  for (std::size_t f = 0; f < sa.frames; ++f) {
    for (std::size_t k = 0; k < sa.bins; ++k) ref += std::fabs(sa.magnitude(f, k) - sb.magnitude(f, k));
  }
  ref /= static_cast<double>(sa.frames * sa.bins);
  EXPECT_NEAR(got.item(), ref, 1e-12);
}

TEST(FeatureLoss, ShapeMismatchBetweenBranches) {
  const auto a = sig(100, 1), b = sig(100, 2);
  int calls = 0;
  const losses::Extractor ragged = [&](const ad::Tensor& x) {
    return ++calls == 1 ? x : ad::Tensor::zeros({3});
  };
  try {
    losses::feature_loss(ragged, a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), malkit::ErrorKind::shape);
  }
}

TEST(MalLoss, ZeroAtIdentity) {
  const auto snap = tiny_snapshot(1);
  const auto a = sig(200, 8);
  EXPECT_EQ(losses::mal_loss(*snap, a, a).item(), 0.0);
}

TEST(MalLoss, HomogeneousInLastLayerScale) {
  const auto cfg = tiny_config();
  auto p = model::init_params(cfg, 9);
  auto& last = p.encoder.layers.back();
  last.bias = ad::Tensor::zeros(last.bias.shape());
  const auto a = sig(300, 9), b = sig(300, 10, 0.3);
  const auto base = losses::mal_loss(model::snapshot_encoder(p, 0), a, b).item();
  last.weight = ad::scale(last.weight, 2.0);
  const auto doubled = losses::mal_loss(model::snapshot_encoder(p, 0), a, b).item();
  EXPECT_NEAR(doubled, 2.0 * base, 1e-14);
  EXPECT_GT(base, 0.0);
}

TEST(MalLoss, GradientReachesDecoderOnlyThroughEnhanced) {
  const auto cfg = tiny_config();
  const auto p = model::init_params(cfg, 11);
  const auto snap = tiny_snapshot(12);
  const auto noisy = sig(120, 13, 0.3), clean = sig(120, 13);
  const auto flat = p.flatten();
  const std::vector<ad::Tensor> decoder(flat.begin() + model::kEncoderTensors, flat.end());
  const auto fn = [&](ad::Tape&, const std::vector<ad::Tensor>& v) {
    auto all = flat;
    std::copy(v.begin(), v.end(), all.begin() + model::kEncoderTensors);
    const auto q = model::ModelParams::unflatten(cfg, all);
    return losses::mal_loss(*snap, clean, model::forward(q, noisy).enhanced);
  };
  const auto r = malkit::testing::gradient_check(fn, decoder);
  EXPECT_TRUE(r.ok()) << r.worst;

  // The snapshot's tensors are constants: nothing on the tape refers to them.
  ad::Tape tape;
  const auto q = model::bind(tape, p, true, true);
  const auto loss = losses::mal_loss(*snap, clean, model::forward(q, noisy).enhanced);
  const auto grads = tape.backward(loss);
  for (const auto& l : snap->encoder().layers) {
    EXPECT_FALSE(l.weight.requires_grad());
    EXPECT_FALSE(grads.contains(l.weight));
  }
  EXPECT_TRUE(grads.contains(q.decoder.layers[0].weight));
}

TEST(Composite, SingleTermEqualsTerm) {
  const auto a = sig(2048, 14), b = sig(2048, 15, 0.2);
  const auto c = losses::composite_loss({losses::LossTerm::multires()}, a, b);
  EXPECT_EQ(c.total.item(), losses::multires_spectral(a, b).item());
  ASSERT_EQ(c.breakdown.size(), 1u);
  EXPECT_EQ(c.breakdown[0].name, "multires_spectral");
}

TEST(Composite, ZeroOnIdenticalAndBreakdownSums) {
  const auto snap = tiny_snapshot(16);
  const std::vector<losses::LossTerm> terms{losses::LossTerm::spectral(tiny_config().stft),
                                            losses::LossTerm::mal(snap)};
  const auto a = sig(1200, 17), b = sig(1200, 18, 0.2);
  EXPECT_EQ(losses::composite_loss(terms, a, a).total.item(), 0.0);

  auto with_all = terms;
  with_all.push_back(losses::LossTerm::multires());
  with_all.push_back(losses::LossTerm::external(tiny_snapshot(19), 0.5));
  const auto c = losses::composite_loss(with_all, a, b);
  double sum = 0.0;
  for (const auto& t : c.breakdown) sum += t.contribution;
  EXPECT_NEAR(sum, c.total.item(), 1e-12);
  EXPECT_EQ(c.breakdown[3].contribution, 0.5 * c.breakdown[3].value);
}

TEST(Composite, Errors) {
  const auto a = sig(2048, 1);
  EXPECT_THROW(losses::composite_loss({}, a, a), Error);
  EXPECT_THROW(losses::composite_loss({losses::LossTerm::mal(nullptr)}, a, a), Error);
  auto neg = losses::LossTerm::multires(-1.0);
  EXPECT_THROW(losses::composite_loss({neg}, a, a), Error);
}

TEST(Losses, NonNegativeAndZeroAtIdentity) {
  const auto snap = tiny_snapshot(20);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = sig(2048, seed), b = sig(2048, seed + 100, 0.5);
    EXPECT_GE(losses::spectral_l1(a, b, {}).item(), 0.0);
    EXPECT_GE(losses::multires_spectral(a, b).item(), 0.0);
    EXPECT_GE(losses::mal_loss(*snap, a, b).item(), 0.0);
    EXPECT_EQ(losses::external_feature_loss({*snap}, a, a).item(), 0.0);
  }
}
