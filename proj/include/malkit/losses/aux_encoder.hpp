#pragma once

// Stand-in for an external pre-trained feature network: the encoder half of a
// denoising autoencoder trained on its own synthetic corpus, then frozen.

#include <memory>
#include <string>

#include "malkit/datagen/dataset.hpp"
#include "malkit/losses/losses.hpp"
#include "malkit/training/trainer.hpp"

namespace malkit::losses {

/// Offset separating auxiliary corpus seeds from main-corpus seeds.
inline constexpr std::uint64_t kAuxSeedOffset = 10'000'000;

/// count clips with light white/pink noise (10..30 dB SNR); seeds start at
/// base_seed + kAuxSeedOffset. Every clip is tagged train; pretraining
/// validates on the same clips since only reconstruction quality matters.
inline datagen::DatasetManifest make_aux_manifest(std::uint64_t base_seed, std::size_t count,
                                                  double duration_s = 1.0,
                                                  int sample_rate = 16000) {
  datagen::DatasetManifest m;
  for (std::size_t i = 0; i < count; ++i) {
    datagen::ManifestEntry e;
    e.id = "aux_" + std::to_string(i);
    e.split = datagen::Split::train;
    e.spec.seed = base_seed + kAuxSeedOffset + i;
    e.spec.duration_s = duration_s;
    e.spec.sample_rate = sample_rate;
    auto rng = datagen::clip_rng(e.spec.seed, datagen::kStreamSnr + 100);
    e.spec.noise_kind = (rng() & 1u) ? datagen::NoiseKind::pink : datagen::NoiseKind::white;
    e.spec.snr_db = std::uniform_real_distribution<double>(10.0, 30.0)(rng);
    m.clips.push_back(std::move(e));
  }
  return m;
}

struct AuxPretrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Trains a fresh model as a denoising autoencoder with multires_spectral
/// and returns its encoder, frozen. The two corpora must occupy disjoint
/// seed ranges.
inline AuxEncoder pretrain_aux_encoder(const datagen::DatasetManifest& aux_corpus,
                                       const datagen::DatasetManifest& main_corpus, int epochs,
                                       std::uint64_t seed, const model::ModelConfig& config,
                                       AuxPretrainReport* report = nullptr) {
  const auto [alo, ahi] = aux_corpus.seed_range();
  const auto [mlo, mhi] = main_corpus.seed_range();
  require(ahi < mlo || mhi < alo, ErrorKind::precondition,
          "pretrain_aux_encoder: auxiliary seed range [" + std::to_string(alo) + ", " +
              std::to_string(ahi) + "] overlaps main corpus [" + std::to_string(mlo) + ", " +
              std::to_string(mhi) + "]");
  training::Corpus corpus;
  for (const auto& c : datagen::build_clips(aux_corpus)) corpus.train.push_back(training::to_clip(c));
  corpus.val = corpus.train;

  training::TrainSchedule schedule;
  schedule.n_baseline_epochs = epochs;
  schedule.m_mal_epochs = 0;
  schedule.seed = seed;
  auto state = training::init_state(config, seed);
  const std::vector<LossTerm> terms{LossTerm::multires()};
  if (report) report->initial_loss = training::validation_loss(state.params, terms, corpus.val);
  training::train_baseline(state, corpus, schedule);
  if (report) report->final_loss = training::validation_loss(state.params, terms, corpus.val);
  return AuxEncoder{model::snapshot_encoder(state.params, epochs)};
}

}  // namespace malkit::losses
