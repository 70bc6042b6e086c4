#pragma once

// Two-phase training: N baseline epochs on the multi-resolution spectral
// loss, then M fine-tuning epochs with variant-specific loss terms and freeze
// rules. Per-clip gradients are computed independently (optionally in
// parallel) and summed in clip order, so results do not depend on the worker
// count.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "malkit/datagen/dataset.hpp"
#include "malkit/losses/losses.hpp"
#include "malkit/parallel.hpp"
#include "malkit/training/schedule.hpp"
#include "malkit/training/state_io.hpp"

namespace malkit::training {

struct Clip {
  std::string id;
  ad::Tensor clean;
  ad::Tensor noisy;
};

struct Corpus {
  std::vector<Clip> train;
  std::vector<Clip> val;
};

inline Clip to_clip(const datagen::ClipPair& c) {
  return {c.id, model::as_tensor(c.clean), model::as_tensor(c.noisy)};
}

/// Train and val splits of a generated dataset.
inline Corpus make_corpus(const std::vector<datagen::ClipPair>& clips) {
  Corpus corpus;
  for (const auto& c : clips) {
    if (c.split == datagen::Split::train) corpus.train.push_back(to_clip(c));
    if (c.split == datagen::Split::val) corpus.val.push_back(to_clip(c));
  }
  return corpus;
}

/// Reported after every optimizer step.
struct BatchEvent {
  int epoch;  // 1-based epoch in progress
  std::size_t batch;
  std::size_t batches;
  const model::EncoderSnapshot* mal_encoder;  // MAL-encoder used for this batch
  const model::ModelParams& before;
  const model::ModelParams& after;
};

struct TrainHooks {
  std::function<void(const BatchEvent&)> on_batch;
  std::function<void(const TrainState&)> on_epoch_end;
  /// Return once this many epochs are complete, as if interrupted.
  std::optional<int> stop_after_epoch;
  /// Full training state is written here after every epoch when non-empty.
  std::filesystem::path checkpoint_path;
};

/// Loss terms for the current phase, all with weight 1.0.
inline std::vector<losses::LossTerm> loss_terms(const TrainState& state) {
  std::vector<losses::LossTerm> terms{losses::LossTerm::multires()};
  if (state.phase == Phase::baseline) return terms;
  if (uses_external(state.variant)) terms.push_back(losses::LossTerm::external(state.aux_encoder));
  if (uses_mal(state.variant)) terms.push_back(losses::LossTerm::mal(state.mal_encoder));
  return terms;
}

struct ClipResult {
  std::vector<ad::Tensor> grads;
  std::vector<losses::TermValue> terms;
  double total = 0.0;
};

inline ClipResult clip_gradient(const model::ModelParams& params,
                                const std::vector<losses::LossTerm>& terms, const Clip& clip,
                                bool train_encoder, bool train_decoder) {
  ad::Tape tape;
  const auto bound = model::bind(tape, params, train_encoder, train_decoder);
  const auto out = model::forward(bound, clip.noisy);
  const auto loss = losses::composite_loss(terms, clip.clean, out.enhanced);
  ClipResult r;
  r.total = loss.total.item();
  r.terms = loss.breakdown;
  if (!std::isfinite(r.total)) return r;
  const auto grads = tape.backward(loss.total);
  for (const auto& t : bound.flatten()) r.grads.push_back(grads.of(t));
  return r;
}

inline ClipResult clip_loss(const model::ModelParams& params,
                            const std::vector<losses::LossTerm>& terms, const Clip& clip) {
  const auto out = model::forward(params, clip.noisy);
  const auto loss = losses::composite_loss(terms, clip.clean, out.enhanced);
  return {{}, loss.breakdown, loss.total.item()};
}

namespace detail {

inline void append_means(std::vector<LogRow>& log, int epoch, int batch, const std::string& split,
                         const std::vector<ClipResult>& results) {
  if (results.empty()) return;
  const double n = static_cast<double>(results.size());
  for (std::size_t t = 0; t < results.front().terms.size(); ++t) {
    double acc = 0.0;
    for (const auto& r : results) acc += r.terms[t].value;
    log.push_back({epoch, batch, split, results.front().terms[t].name, acc / n});
  }
  double total = 0.0;
  for (const auto& r : results) total += r.total;
  log.push_back({epoch, batch, split, "total", total / n});
}

inline bool all_finite(const std::vector<ad::Tensor>& grads) {
  for (const auto& g : grads) {
    for (double v : g.values()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace detail

/// Mean composite loss over clips, without gradients.
inline double validation_loss(const model::ModelParams& params,
                              const std::vector<losses::LossTerm>& terms,
                              const std::vector<Clip>& clips,
                              std::vector<ClipResult>* per_clip = nullptr) {
  std::vector<ClipResult> results(clips.size());
  parallel_for(clips.size(), [&](std::size_t i) { results[i] = clip_loss(params, terms, clips[i]); });
  double total = 0.0;
  for (const auto& r : results) total += r.total;
  if (per_clip) *per_clip = std::move(results);
  return clips.empty() ? 0.0 : total / static_cast<double>(clips.size());
}

/// One epoch of shuffled mini-batch Adam, followed by validation and
/// best-state bookkeeping. Advances state.epoch by one.
inline void train_epoch(TrainState& state, const Corpus& corpus, const TrainSchedule& schedule,
                        const TrainHooks& hooks) {
  require(!corpus.train.empty(), ErrorKind::precondition, "training: empty train split");
  require(!corpus.val.empty(), ErrorKind::precondition, "training: empty validation split");
  const int epoch = state.epoch + 1;
  const bool train_encoder = state.phase == Phase::baseline || !freezes_encoder(state.variant);
  const bool per_batch_snapshot = state.phase == Phase::finetune &&
                                  state.variant == Variant::mal_dynamic &&
                                  schedule.dynamic_update == DynamicUpdate::per_batch;
  std::vector<bool> active(model::kParamTensors, true);
  for (std::size_t i = 0; i < model::kEncoderTensors; ++i) active[i] = train_encoder;

  std::vector<std::size_t> order(corpus.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), state.rng);

  const std::size_t bs = schedule.batch_size;
  const std::size_t batches = (order.size() + bs - 1) / bs;
  std::vector<ClipResult> epoch_results;
  for (std::size_t b = 0; b < batches; ++b) {
    if (per_batch_snapshot) {
      state.mal_encoder =
          std::make_shared<const model::EncoderSnapshot>(model::snapshot_encoder(state.params, epoch));
    }
    const auto terms = loss_terms(state);
    const std::size_t begin = b * bs, count = std::min(bs, order.size() - begin);
    std::vector<ClipResult> results(count);
    parallel_for(count, [&](std::size_t i) {
      results[i] = clip_gradient(state.params, terms, corpus.train[order[begin + i]],
                                 train_encoder, true);
    });

    auto flat = state.params.flatten();
    std::vector<std::vector<double>> sum(flat.size());
    for (std::size_t p = 0; p < flat.size(); ++p) sum[p].assign(flat[p].size(), 0.0);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& r = results[i];
      if (!std::isfinite(r.total) || !detail::all_finite(r.grads)) {
        fail(ErrorKind::numeric, "training: non-finite loss at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(b) + " (clip " +
                                     corpus.train[order[begin + i]].id + ")");
      }
      for (std::size_t p = 0; p < flat.size(); ++p) {
        const auto g = r.grads[p].values();
        for (std::size_t j = 0; j < g.size(); ++j) sum[p][j] += g[j];
      }
    }
    std::vector<ad::Tensor> grads;
    for (std::size_t p = 0; p < flat.size(); ++p) {
      for (auto& v : sum[p]) v /= static_cast<double>(count);
      grads.emplace_back(flat[p].shape(), std::move(sum[p]));
    }

    const model::ModelParams before = state.params;
    state.params = model::ModelParams::unflatten(
        state.params.config,
        ad::adam_step(flat, grads, state.adam, schedule.learning_rate, active));
    detail::append_means(state.log, epoch, static_cast<int>(b), "train", results);
    if (hooks.on_batch) {
      hooks.on_batch({epoch, b, batches, state.mal_encoder.get(), before, state.params});
    }
    for (auto& r : results) epoch_results.push_back(std::move(r));
  }

  state.epoch = epoch;
  detail::append_means(state.log, epoch, -1, "train", epoch_results);
  std::vector<ClipResult> val_results;
  const double val = validation_loss(state.params, loss_terms(state), corpus.val, &val_results);
  require(std::isfinite(val), ErrorKind::numeric,
          "training: non-finite validation loss at epoch " + std::to_string(epoch));
  detail::append_means(state.log, epoch, -1, "val", val_results);
  if (!state.best || val < state.best->val_loss) {
    state.best = BestState{state.params, state.adam, epoch, val};
  }
}

namespace detail {

inline void restore_best(TrainState& state) {
  if (state.best && state.best->epoch != state.epoch) {
    state.params = state.best->params;
    state.adam = state.best->adam;
  }
}

inline void finish_epoch(const TrainState& state, const TrainHooks& hooks) {
  if (!hooks.checkpoint_path.empty()) save_state(state, hooks.checkpoint_path);
  if (hooks.on_epoch_end) hooks.on_epoch_end(state);
}

inline bool interrupted(const TrainState& state, const TrainHooks& hooks) {
  return hooks.stop_after_epoch && state.epoch >= *hooks.stop_after_epoch;
}

}  // namespace detail

/// Baseline phase up to epoch N. Resumes from state.epoch. After the last
/// epoch the best validation epoch's parameters and moments are restored.
inline void train_baseline(TrainState& state, const Corpus& corpus, const TrainSchedule& schedule,
                           const TrainHooks& hooks = {}) {
  schedule.validate();
  require(state.phase == Phase::baseline, ErrorKind::precondition,
          "train_baseline: state is already in the fine-tuning phase");
  require(state.epoch <= schedule.n_baseline_epochs, ErrorKind::precondition,
          "train_baseline: state epoch " + std::to_string(state.epoch) + " is past N = " +
              std::to_string(schedule.n_baseline_epochs));
  while (state.epoch < schedule.n_baseline_epochs) {
    train_epoch(state, corpus, schedule, hooks);
    if (state.epoch == schedule.n_baseline_epochs) detail::restore_best(state);
    detail::finish_epoch(state, hooks);
    if (detail::interrupted(state, hooks)) return;
  }
}

/// MAL phase: epochs N+1 .. N+M with the variant's loss terms and freeze
/// rules. A state at the end of baseline starts the phase; a fine-tuning
/// state of the same variant resumes it.
inline void finetune(TrainState& state, const Corpus& corpus, const TrainSchedule& schedule,
                     std::shared_ptr<const model::EncoderSnapshot> aux = nullptr,
                     const TrainHooks& hooks = {}) {
  schedule.validate();
  const int n = schedule.n_baseline_epochs;
  const int end = n + schedule.m_mal_epochs;
  if (state.phase == Phase::baseline) {
    require(state.epoch == n, ErrorKind::precondition,
            "finetune: variant " + std::string(to_string(schedule.variant)) +
                " needs a baseline trained for " + std::to_string(n) + " epochs, state has " +
                std::to_string(state.epoch));
    state.phase = Phase::finetune;
    state.variant = schedule.variant;
    state.best.reset();
    if (uses_mal(state.variant)) {
      state.mal_encoder =
          std::make_shared<const model::EncoderSnapshot>(model::snapshot_encoder(state.params, n));
    }
    if (uses_external(state.variant)) {
      require(aux != nullptr, ErrorKind::precondition,
              "finetune: variant " + std::string(to_string(state.variant)) +
                  " needs an auxiliary encoder");
      require(aux->config() == state.params.config, ErrorKind::shape,
              "finetune: auxiliary encoder config differs from the model config");
      state.aux_encoder = std::move(aux);
    }
  } else {
    require(state.variant == schedule.variant, ErrorKind::precondition,
            "finetune: state was fine-tuned with variant " + std::string(to_string(state.variant)) +
                ", requested " + std::string(to_string(schedule.variant)));
    require(state.epoch >= n && state.epoch <= end, ErrorKind::precondition,
            "finetune: state epoch " + std::to_string(state.epoch) + " outside the MAL phase");
  }
  while (state.epoch < end) {
    train_epoch(state, corpus, schedule, hooks);
    if (state.variant == Variant::mal_dynamic &&
        schedule.dynamic_update == DynamicUpdate::per_epoch) {
      // MAL-encoder for epoch e+1 is the live encoder at the end of epoch e.
      state.mal_encoder = std::make_shared<const model::EncoderSnapshot>(
          model::snapshot_encoder(state.params, state.epoch));
    }
    if (state.epoch == end) detail::restore_best(state);
    detail::finish_epoch(state, hooks);
    if (detail::interrupted(state, hooks)) return;
  }
}

}  // namespace malkit::training
