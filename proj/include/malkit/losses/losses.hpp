#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "malkit/autodiff/ops.hpp"
#include "malkit/dsp/signal.hpp"
#include "malkit/model/model.hpp"

namespace malkit::losses {

using ad::Tensor;

inline void check_pair(std::string_view op, const Tensor& clean, const Tensor& enhanced) {
  require(clean.rank() == 1 && enhanced.rank() == 1, ErrorKind::shape,
          std::string(op) + ": expected 1-D waveforms");
  require(clean.size() == enhanced.size(), ErrorKind::precondition,
          std::string(op) + ": length mismatch " + std::to_string(clean.size()) + " vs " +
              std::to_string(enhanced.size()));
}

/// mean over frames x bins of |STFT(clean) - STFT(enhanced)| (complex modulus).
inline Tensor spectral_l1(const Tensor& clean, const Tensor& enhanced,
                          const dsp::StftConfig& cfg) {
  check_pair("spectral_l1", clean, enhanced);
  const auto window = dsp::shared_window(cfg.window, cfg.fft_size);
  const auto diff = ad::sub(ad::stft(clean, cfg, window), ad::stft(enhanced, cfg, window));
  return ad::mean(ad::complex_abs(diff));
}

struct Resolution {
  std::size_t fft_size;
  std::size_t hop;
};

inline constexpr std::array<Resolution, 3> kMultiResolutions{{{256, 128}, {512, 256}, {1024, 512}}};

/// Sum over three STFT resolutions of magnitude L1 plus log-magnitude L1.
inline Tensor multires_spectral(const Tensor& clean, const Tensor& enhanced) {
  check_pair("multires_spectral", clean, enhanced);
  require(clean.size() >= kMultiResolutions.back().fft_size, ErrorKind::precondition,
          "multires_spectral: need at least " +
              std::to_string(kMultiResolutions.back().fft_size) + " samples, got " +
              std::to_string(clean.size()));
  Tensor total;
  bool first = true;
  for (const auto& res : kMultiResolutions) {
    dsp::StftConfig cfg{res.fft_size, res.hop, dsp::WindowKind::vorbis, 0};
    const auto window = dsp::shared_window(cfg.window, cfg.fft_size);
    const auto mc = ad::complex_abs(ad::stft(clean, cfg, window));
    const auto me = ad::complex_abs(ad::stft(enhanced, cfg, window));
    const auto lc = ad::log(ad::offset(mc, model::kMagnitudeOffset));
    const auto le = ad::log(ad::offset(me, model::kMagnitudeOffset));
    const auto term = ad::add(ad::mean_l1(mc, me), ad::mean_l1(lc, le));
    total = first ? term : ad::add(total, term);
    first = false;
  }
  return total;
}

using Extractor = std::function<Tensor(const Tensor&)>;

/// mean |F(clean) - F(enhanced)| for an arbitrary deterministic extractor F.
inline Tensor feature_loss(const Extractor& extractor, const Tensor& clean,
                           const Tensor& enhanced) {
  const auto fc = extractor(clean);
  const auto fe = extractor(enhanced);
  if (fc.shape() != fe.shape()) {
    fail(ErrorKind::shape, "feature_loss: extractor output shape mismatch " +
                               ad::shape_str(fc.shape()) + " vs " + ad::shape_str(fe.shape()));
  }
  return ad::mean_l1(fc, fe);
}

/// Mean L1 distance between MAL-encoder bottleneck embeddings of clean and
/// enhanced. The encoder's tensors are constants, so gradient reaches only
/// whatever produced `enhanced`.
inline Tensor mal_loss(const model::EncoderSnapshot& mal_encoder, const Tensor& clean,
                       const Tensor& enhanced) {
  check_pair("mal_loss", clean, enhanced);
  const auto& cfg = mal_encoder.config();
  return feature_loss(
      [&](const Tensor& w) { return model::encode(mal_encoder, model::waveform_features(w, cfg)); },
      clean, enhanced);
}

/// Frozen encoder taken from a denoising autoencoder pre-trained on a
/// separate corpus; stands in for an external pre-trained feature network.
struct AuxEncoder {
  model::EncoderSnapshot encoder;
};

inline Tensor external_feature_loss(const AuxEncoder& aux, const Tensor& clean,
                                    const Tensor& enhanced) {
  check_pair("external_feature_loss", clean, enhanced);
  return mal_loss(aux.encoder, clean, enhanced);
}

enum class TermKind { spectral_l1, multires_spectral, mal, external_feature };

inline std::string_view to_string(TermKind k) {
  switch (k) {
    case TermKind::spectral_l1: return "spectral_l1";
    case TermKind::multires_spectral: return "multires_spectral";
    case TermKind::mal: return "mal";
    case TermKind::external_feature: return "external_feature";
  }
  return "unknown";
}

struct LossTerm {
  TermKind kind = TermKind::multires_spectral;
  double weight = 1.0;
  std::shared_ptr<const model::EncoderSnapshot> extractor;  // mal / external_feature
  dsp::StftConfig stft{};                                    // spectral_l1

  static LossTerm multires(double w = 1.0) { return {TermKind::multires_spectral, w, nullptr, {}}; }
  static LossTerm spectral(const dsp::StftConfig& cfg, double w = 1.0) {
    return {TermKind::spectral_l1, w, nullptr, cfg};
  }
  static LossTerm mal(std::shared_ptr<const model::EncoderSnapshot> enc, double w = 1.0) {
    return {TermKind::mal, w, std::move(enc), {}};
  }
  static LossTerm external(std::shared_ptr<const model::EncoderSnapshot> enc, double w = 1.0) {
    return {TermKind::external_feature, w, std::move(enc), {}};
  }

  void validate() const {
    require(std::isfinite(weight) && weight >= 0.0, ErrorKind::precondition,
            "loss term " + std::string(to_string(kind)) + ": weight must be finite and >= 0");
    const bool needs = kind == TermKind::mal || kind == TermKind::external_feature;
    require(needs == static_cast<bool>(extractor), ErrorKind::precondition,
            "loss term " + std::string(to_string(kind)) +
                (needs ? ": missing feature extractor" : ": unexpected feature extractor"));
  }
};

struct TermValue {
  std::string name;
  double weight;
  double value;         // unweighted
  double contribution;  // weight * value
};

struct CompositeLoss {
  Tensor total;
  std::vector<TermValue> breakdown;
};

inline Tensor evaluate_term(const LossTerm& term, const Tensor& clean, const Tensor& enhanced) {
  switch (term.kind) {
    case TermKind::spectral_l1: return spectral_l1(clean, enhanced, term.stft);
    case TermKind::multires_spectral: return multires_spectral(clean, enhanced);
    case TermKind::mal: return mal_loss(*term.extractor, clean, enhanced);
    case TermKind::external_feature:
      return external_feature_loss(AuxEncoder{*term.extractor}, clean, enhanced);
  }
  fail(ErrorKind::precondition, "unknown loss term");
}

/// Sum of weight * term. Terms are accumulated in list order, so the
/// breakdown contributions add up to the total exactly.
inline CompositeLoss composite_loss(const std::vector<LossTerm>& terms, const Tensor& clean,
                                    const Tensor& enhanced) {
  require(!terms.empty(), ErrorKind::precondition, "composite_loss: empty term list");
  CompositeLoss out;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto& term = terms[i];
    term.validate();
    const auto value = evaluate_term(term, clean, enhanced);
    const auto weighted = ad::scale(value, term.weight);
    out.breakdown.push_back({std::string(to_string(term.kind)), term.weight, value.item(),
                             weighted.item()});
    out.total = i == 0 ? weighted : ad::add(out.total, weighted);
  }
  return out;
}

}  // namespace malkit::losses
