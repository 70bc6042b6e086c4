#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "malkit/autodiff/adam.hpp"
#include "malkit/error.hpp"
#include "malkit/model/model.hpp"

namespace malkit::training {

enum class Variant {
  none,
  mal_frozen_fe,
  mal_frozen,
  mal_dynamic,
  external,
  external_fe,
  wavlm_mal_combo,
};

inline constexpr Variant kAllVariants[] = {
    Variant::none,     Variant::mal_frozen_fe, Variant::mal_frozen,     Variant::mal_dynamic,
    Variant::external, Variant::external_fe,   Variant::wavlm_mal_combo};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::none: return "none";
    case Variant::mal_frozen_fe: return "mal_frozen_fe";
    case Variant::mal_frozen: return "mal_frozen";
    case Variant::mal_dynamic: return "mal_dynamic";
    case Variant::external: return "external";
    case Variant::external_fe: return "external_fe";
    case Variant::wavlm_mal_combo: return "wavlm_mal_combo";
  }
  return "unknown";
}

inline Variant parse_variant(std::string_view s) {
  for (auto v : kAllVariants) {
    if (to_string(v) == s) return v;
  }
  fail(ErrorKind::config, "unknown variant '" + std::string(s) + "'");
}

/// Variant uses the model's own encoder as a loss.
inline bool uses_mal(Variant v) {
  return v == Variant::mal_frozen_fe || v == Variant::mal_frozen || v == Variant::mal_dynamic ||
         v == Variant::wavlm_mal_combo;
}

inline bool uses_external(Variant v) {
  return v == Variant::external || v == Variant::external_fe || v == Variant::wavlm_mal_combo;
}

/// Live encoder excluded from the optimizer during the MAL phase.
inline bool freezes_encoder(Variant v) {
  return v == Variant::mal_frozen_fe || v == Variant::external_fe ||
         v == Variant::wavlm_mal_combo;
}

enum class DynamicUpdate { per_epoch, per_batch };

inline std::string_view to_string(DynamicUpdate d) {
  return d == DynamicUpdate::per_epoch ? "per_epoch" : "per_batch";
}

inline DynamicUpdate parse_dynamic_update(std::string_view s) {
  if (s == "per_epoch") return DynamicUpdate::per_epoch;
  if (s == "per_batch") return DynamicUpdate::per_batch;
  fail(ErrorKind::config, "unknown dynamic_update '" + std::string(s) + "'");
}

struct TrainSchedule {
  int n_baseline_epochs = 10;
  int m_mal_epochs = 10;
  Variant variant = Variant::none;
  DynamicUpdate dynamic_update = DynamicUpdate::per_epoch;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    require(n_baseline_epochs >= 1, ErrorKind::precondition,
            "schedule: n_baseline_epochs must be >= 1, got " + std::to_string(n_baseline_epochs));
    require(m_mal_epochs >= 0, ErrorKind::precondition, "schedule: m_mal_epochs must be >= 0");
    require(batch_size >= 1, ErrorKind::precondition, "schedule: batch_size must be >= 1");
    require(std::isfinite(learning_rate) && learning_rate > 0.0, ErrorKind::precondition,
            "schedule: learning_rate must be positive");
  }

  bool operator==(const TrainSchedule&) const = default;
};

enum class Phase { baseline, finetune };

/// Parameters and optimizer moments at the best validation epoch so far.
struct BestState {
  model::ModelParams params;
  ad::AdamState adam;
  int epoch = 0;
  double val_loss = 0.0;
};

/// One training-log row. batch < 0 marks an epoch-level aggregate.
struct LogRow {
  int epoch;
  int batch;
  std::string split;
  std::string term;
  double value;

  bool operator==(const LogRow&) const = default;
};

struct TrainState {
  model::ModelParams params;
  ad::AdamState adam;
  int epoch = 0;  // completed epochs, counted across both phases
  std::mt19937_64 rng;
  Phase phase = Phase::baseline;
  Variant variant = Variant::none;
  /// MAL-encoder in force; present exactly while a MAL variant is fine-tuning.
  std::shared_ptr<const model::EncoderSnapshot> mal_encoder;
  /// Frozen external extractor for the external variants.
  std::shared_ptr<const model::EncoderSnapshot> aux_encoder;
  std::optional<BestState> best;
  std::vector<LogRow> log;
};

/// Fresh state: seeded init and a shuffle stream derived from the same seed.
inline TrainState init_state(const model::ModelConfig& config, std::uint64_t seed) {
  TrainState s;
  s.params = model::init_params(config, seed);
  s.adam = ad::adam_init(s.params.flatten());
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x73687566u};
  s.rng.seed(seq);
  return s;
}

}  // namespace malkit::training
