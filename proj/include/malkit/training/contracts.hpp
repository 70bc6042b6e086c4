#pragma once

// Run-time checker for the MAL variant semantics. Attached to the training
// hooks, it compares every MAL-phase batch against the rules:
//   encoder-freezing variants: live encoder bitwise unchanged;
//   frozen snapshot variants:  MAL-encoder bitwise equal to the epoch-N capture;
//   dynamic, per epoch:        MAL-encoder equals the live encoder at the end of
//                              the previous epoch;
//   dynamic, per batch:        MAL-encoder equals the live encoder before the step.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "malkit/training/trainer.hpp"

namespace malkit::training {

class ContractMonitor {
 public:
  explicit ContractMonitor(const TrainSchedule& schedule) : schedule_(schedule) {}

  /// Chains the monitor in front of any callbacks already present.
  void attach(TrainHooks& hooks) {
    auto prev_batch = hooks.on_batch;
    auto prev_epoch = hooks.on_epoch_end;
    hooks.on_batch = [this, prev_batch](const BatchEvent& ev) {
      on_batch(ev);
      if (prev_batch) prev_batch(ev);
    };
    hooks.on_epoch_end = [this, prev_epoch](const TrainState& s) {
      on_epoch_end(s);
      if (prev_epoch) prev_epoch(s);
    };
  }

  const std::vector<std::string>& violations() const { return violations_; }
  std::size_t checked_batches() const { return checked_; }
  bool ok() const { return violations_.empty() && checked_ > 0; }

  /// Whether the live encoder had moved away from the epoch-N encoder by the
  /// end of the first MAL epoch (expected for variants that train it).
  std::optional<bool> live_encoder_moved_after_first_epoch() const { return moved_; }

 private:
  void violation(const BatchEvent& ev, const std::string& what) {
    violations_.push_back("epoch " + std::to_string(ev.epoch) + " batch " +
                          std::to_string(ev.batch) + ": " + what);
  }

  void on_batch(const BatchEvent& ev) {
    const int n = schedule_.n_baseline_epochs;
    if (ev.epoch <= n) return;
    if (!baseline_end_) baseline_end_ = ev.before.encoder;
    ++checked_;
    const Variant v = schedule_.variant;

    if (uses_mal(v) != (ev.mal_encoder != nullptr)) {
      violation(ev, "MAL-encoder presence does not match variant");
      return;
    }
    if (freezes_encoder(v)) {
      if (!ev.after.encoder.bitwise_equal(ev.before.encoder) ||
          !ev.after.encoder.bitwise_equal(*baseline_end_)) {
        violation(ev, "live encoder changed under a freezing variant");
      }
    }
    if (!ev.mal_encoder) return;
    const auto& mal = *ev.mal_encoder;
    if (v == Variant::mal_dynamic) {
      if (schedule_.dynamic_update == DynamicUpdate::per_batch) {
        if (!mal.encoder().bitwise_equal(ev.before.encoder)) {
          violation(ev, "per-batch MAL-encoder differs from the live encoder before the step");
        }
        return;
      }
      const int prev = ev.epoch - 1;
      const EncoderStack& expected = prev == n ? *baseline_end_ : end_of_epoch_.at(prev);
      if (mal.epoch() != prev || !mal.encoder().bitwise_equal(expected)) {
        violation(ev, "MAL-encoder is not the live encoder from the end of epoch " +
                          std::to_string(prev) + " (tagged " + std::to_string(mal.epoch()) + ")");
      }
      return;
    }
    if (mal.epoch() != n || !mal.encoder().bitwise_equal(*baseline_end_)) {
      violation(ev, "MAL-encoder differs from the epoch-" + std::to_string(n) + " capture");
    }
  }

  void on_epoch_end(const TrainState& s) {
    if (s.phase != Phase::finetune) return;
    end_of_epoch_[s.epoch] = s.params.encoder;
    if (s.epoch == schedule_.n_baseline_epochs + 1 && baseline_end_) {
      moved_ = !s.params.encoder.bitwise_equal(*baseline_end_);
    }
  }

  using EncoderStack = model::EncoderStack;

  TrainSchedule schedule_;
  std::optional<EncoderStack> baseline_end_;
  std::map<int, EncoderStack> end_of_epoch_;
  std::vector<std::string> violations_;
  std::size_t checked_ = 0;
  std::optional<bool> moved_;
};

}  // namespace malkit::training
