#pragma once

// Compact encoder/decoder masking network over log-magnitude spectra.
//
// Activations are laid out channels x frames; convolutions run over time with
// the frequency bins as input channels. Encoder: bins -> c0 -> c1 -> c2, tanh
// on the first two layers, linear bottleneck. Decoder mirrors it back to bins
// with tanh hidden layers and a sigmoid mask.

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "malkit/autodiff/ops.hpp"
#include "malkit/dsp/signal.hpp"
#include "malkit/error.hpp"

namespace malkit::model {

/// Magnitudes are offset by this before the log in every feature path.
inline constexpr double kMagnitudeOffset = 1e-3;

struct ModelConfig {
  dsp::StftConfig stft{};
  std::array<std::size_t, 3> channels{64, 48, 32};
  std::size_t kernel = 3;

  std::size_t bins() const { return stft.bins(); }
  std::size_t embedding_width() const { return channels[2]; }

  /// in/out channel pairs for encoder layers 0..2 then decoder layers 0..2.
  std::array<std::array<std::size_t, 2>, 6> layer_channels() const {
    const std::size_t b = bins();
    return {{{b, channels[0]},
             {channels[0], channels[1]},
             {channels[1], channels[2]},
             {channels[2], channels[1]},
             {channels[1], channels[0]},
             {channels[0], b}}};
  }

  void validate() const {
    stft.validate();
    require(kernel % 2 == 1, ErrorKind::precondition, "model config: kernel width must be odd");
    for (auto c : channels) {
      require(c > 0, ErrorKind::precondition, "model config: zero channel count");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

struct ConvLayer {
  ad::Tensor weight;  // [out, in, kernel]
  ad::Tensor bias;    // [out]
};

struct EncoderStack {
  std::vector<ConvLayer> layers;

  bool bitwise_equal(const EncoderStack& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (!layers[i].weight.same_values(other.layers[i].weight) ||
          !layers[i].bias.same_values(other.layers[i].bias)) {
        return false;
      }
    }
    return true;
  }
};

struct DecoderStack {
  std::vector<ConvLayer> layers;
};

inline constexpr std::size_t kEncoderLayers = 3;
inline constexpr std::size_t kDecoderLayers = 3;
inline constexpr std::size_t kParamTensors = 2 * (kEncoderLayers + kDecoderLayers);
/// Flattened tensors [0, kEncoderTensors) belong to the encoder.
inline constexpr std::size_t kEncoderTensors = 2 * kEncoderLayers;

inline std::string layer_name(std::size_t index) {
  return index < kEncoderLayers ? "encoder." + std::to_string(index)
                                : "decoder." + std::to_string(index - kEncoderLayers);
}

struct ModelParams {
  ModelConfig config;
  EncoderStack encoder;
  DecoderStack decoder;

  /// enc0.w, enc0.b, enc1.w, ..., dec2.w, dec2.b
  std::vector<ad::Tensor> flatten() const {
    std::vector<ad::Tensor> out;
    out.reserve(kParamTensors);
    for (const auto& l : encoder.layers) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    for (const auto& l : decoder.layers) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

  static ModelParams unflatten(const ModelConfig& config, const std::vector<ad::Tensor>& flat) {
    require(flat.size() == kParamTensors, ErrorKind::shape,
            "model params: expected " + std::to_string(kParamTensors) + " tensors");
    ModelParams p;
    p.config = config;
    for (std::size_t i = 0; i < kEncoderLayers; ++i) {
      p.encoder.layers.push_back({flat[2 * i], flat[2 * i + 1]});
    }
    for (std::size_t i = kEncoderLayers; i < kEncoderLayers + kDecoderLayers; ++i) {
      p.decoder.layers.push_back({flat[2 * i], flat[2 * i + 1]});
    }
    return p;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : flatten()) n += t.size();
    return n;
  }

  bool bitwise_equal(const ModelParams& other) const {
    const auto a = flatten();
    const auto b = other.flatten();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a[i].same_values(b[i])) return false;
    }
    return true;
  }

  /// Checks layer shapes against config and that all values are finite.
  void validate() const {
    config.validate();
    const auto chans = config.layer_channels();
    const auto flat = flatten();
    require(flat.size() == kParamTensors, ErrorKind::shape, "model params: wrong layer count");
    for (std::size_t l = 0; l < chans.size(); ++l) {
      const auto& w = flat[2 * l];
      const auto& b = flat[2 * l + 1];
      const ad::Shape want_w{chans[l][1], chans[l][0], config.kernel};
      require(w.shape() == want_w && b.shape() == ad::Shape{chans[l][1]}, ErrorKind::shape,
              "model params: layer " + layer_name(l) + " has weight " +
                  ad::shape_str(w.shape()) + ", expected " + ad::shape_str(want_w));
      for (const auto* t : {&w, &b}) {
        for (double v : t->values()) {
          require(std::isfinite(v), ErrorKind::numeric,
                  "model params: non-finite value in " + layer_name(l));
        }
      }
    }
  }
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] with fan_in = in_channels * kernel.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x696e6974u};
  std::mt19937_64 rng(seq);
  std::vector<ad::Tensor> flat;
  for (const auto& [in, out] : config.layer_channels()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * config.kernel));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(out * in * config.kernel);
    for (auto& v : w) v = dist(rng);
    std::vector<double> b(out);
    for (auto& v : b) v = dist(rng);
    flat.emplace_back(ad::Shape{out, in, config.kernel}, std::move(w));
    flat.emplace_back(ad::Shape{out}, std::move(b));
  }
  return ModelParams::unflatten(config, flat);
}

/// Registers the selected parameter groups as differentiable leaves on tape;
/// the other group stays constant and receives no gradient.
inline ModelParams bind(ad::Tape& tape, const ModelParams& p, bool train_encoder,
                        bool train_decoder) {
  auto flat = p.flatten();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const bool enc = i < kEncoderTensors;
    if ((enc && train_encoder) || (!enc && train_decoder)) flat[i] = tape.variable(flat[i]);
  }
  return ModelParams::unflatten(p.config, flat);
}

/// Immutable deep copy of an encoder, tagged with the epoch it was taken at.
class EncoderSnapshot {
 public:
  EncoderSnapshot(const ModelConfig& config, const EncoderStack& encoder, int epoch)
      : config_(config), epoch_(epoch) {
    for (const auto& l : encoder.layers) {
      encoder_.layers.push_back(
          {ad::Tensor(l.weight.shape(), l.weight.vec()), ad::Tensor(l.bias.shape(), l.bias.vec())});
    }
  }

  const ModelConfig& config() const { return config_; }
  const EncoderStack& encoder() const { return encoder_; }
  int epoch() const { return epoch_; }

 private:
  ModelConfig config_;
  EncoderStack encoder_;
  int epoch_;
};

inline EncoderSnapshot snapshot_encoder(const ModelParams& params, int epoch) {
  return EncoderSnapshot(params.config, params.encoder, epoch);
}

// ---------------------------------------------------------------------------

inline std::shared_ptr<const std::vector<double>> analysis_window(const ModelConfig& c) {
  return dsp::shared_window(c.stft.window, c.stft.fft_size);
}

/// Model input features: log(|X| + offset), transposed to bins x frames and
/// shifted by the configured lookahead.
inline ad::Tensor spectral_features(const ad::Tensor& spec, const ModelConfig& config) {
  auto logmag = ad::log(ad::offset(ad::complex_abs(spec), kMagnitudeOffset));
  return ad::frame_shift(ad::transpose(logmag), config.stft.lookahead_frames);
}

inline ad::Tensor waveform_features(const ad::Tensor& wave, const ModelConfig& config) {
  return spectral_features(ad::stft(wave, config.stft, analysis_window(config)), config);
}

/// Bottleneck embedding [width x frames] of features [bins x frames].
inline ad::Tensor encode(const EncoderStack& enc, const ModelConfig& config,
                         const ad::Tensor& features) {
  require(features.rank() == 2 && features.dim(0) == config.bins(), ErrorKind::shape,
          "encode: expected [" + std::to_string(config.bins()) + ", frames] features, got " +
              ad::shape_str(features.shape()));
  require(enc.layers.size() == kEncoderLayers, ErrorKind::shape, "encode: wrong layer count");
  ad::Tensor h = features;
  for (std::size_t i = 0; i < enc.layers.size(); ++i) {
    h = ad::conv1d_same(h, enc.layers[i].weight, enc.layers[i].bias);
    if (i + 1 < enc.layers.size()) h = ad::tanh(h);
  }
  return h;
}

inline ad::Tensor encode(const ModelParams& p, const ad::Tensor& features) {
  return encode(p.encoder, p.config, features);
}

inline ad::Tensor encode(const EncoderSnapshot& s, const ad::Tensor& features) {
  return encode(s.encoder(), s.config(), features);
}

/// Mask [bins x frames] in (0, 1) from an embedding [width x frames].
inline ad::Tensor decode(const ModelParams& p, const ad::Tensor& embedding) {
  require(embedding.rank() == 2 && embedding.dim(0) == p.config.embedding_width(),
          ErrorKind::shape,
          "decode: expected embedding width " + std::to_string(p.config.embedding_width()) +
              ", got " + ad::shape_str(embedding.shape()));
  ad::Tensor h = embedding;
  const auto& layers = p.decoder.layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = ad::conv1d_same(h, layers[i].weight, layers[i].bias);
    h = (i + 1 < layers.size()) ? ad::tanh(h) : ad::sigmoid(h);
  }
  return h;
}

struct ForwardPass {
  ad::Tensor mask;      // [bins x frames]
  ad::Tensor enhanced;  // [length]
};

/// noisy waveform -> mask -> masked noisy spectrum (noisy phase) -> ISTFT.
inline ForwardPass forward(const ModelParams& p, const ad::Tensor& noisy) {
  const auto window = analysis_window(p.config);
  const auto spec = ad::stft(noisy, p.config.stft, window);
  const auto mask = decode(p, encode(p, spectral_features(spec, p.config)));
  const auto masked = ad::complex_mask(spec, ad::transpose(mask));
  return {mask, ad::istft(masked, p.config.stft, window, noisy.size())};
}

inline ad::Tensor as_tensor(const dsp::Waveform& w) { return ad::Tensor::vector(w.samples); }

inline dsp::Waveform enhance(const ModelParams& p, const dsp::Waveform& noisy) {
  const auto out = forward(p, as_tensor(noisy));
  dsp::Waveform w;
  w.sample_rate = noisy.sample_rate;
  w.samples = out.enhanced.vec();
  return w;
}

inline ad::Tensor embed_waveform(const EncoderStack& enc, const ModelConfig& config,
                                 const dsp::Waveform& w) {
  return encode(enc, config, waveform_features(as_tensor(w), config));
}

}  // namespace malkit::model
