#include <gtest/gtest.h>

#include <cstdlib>
#include <limits>

#include "malkit/datagen/dataset.hpp"
#include "malkit/losses/aux_encoder.hpp"
#include "malkit/training/contracts.hpp"
#include "malkit/training/trainer.hpp"
#include "support/fixtures.hpp"

namespace tr = malkit::training;
namespace dg = malkit::datagen;
namespace model = malkit::model;
namespace ad = malkit::ad;
using malkit::Error;
using malkit::ErrorKind;

namespace {

// Small but real: desk-size model, 0.5 s clips.
const tr::Corpus& micro_corpus() {
  static const tr::Corpus corpus =
      tr::make_corpus(dg::build_clips(dg::make_manifest(900, {8, 3, 0, 0}, 0.5)));
  return corpus;
}

model::ModelConfig micro_config() {
  model::ModelConfig c;
  c.stft = {256, 128, malkit::dsp::WindowKind::vorbis, 0};
  c.channels = {16, 12, 8};
  return c;
}

tr::TrainSchedule micro_schedule(tr::Variant v = tr::Variant::none) {
  tr::TrainSchedule s;
  s.n_baseline_epochs = 3;
  s.m_mal_epochs = 3;
  s.variant = v;
  s.batch_size = 3;
  s.learning_rate = 3e-3;
  s.seed = 5;
  return s;
}

const tr::TrainState& baseline_state() {
  static const tr::TrainState state = [] {
    auto s = tr::init_state(micro_config(), 5);
    tr::train_baseline(s, micro_corpus(), micro_schedule());
    return s;
  }();
  return state;
}

std::shared_ptr<const model::EncoderSnapshot> random_aux() {
  return std::make_shared<const model::EncoderSnapshot>(
      model::snapshot_encoder(model::init_params(micro_config(), 77), 0));
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::numeric;
}

struct VariantRun {
  tr::TrainState state;
  tr::ContractMonitor monitor;
};

VariantRun run_variant(tr::Variant v, tr::DynamicUpdate mode = tr::DynamicUpdate::per_epoch) {
  auto schedule = micro_schedule(v);
  schedule.dynamic_update = mode;
  VariantRun run{baseline_state(), tr::ContractMonitor(schedule)};
  tr::TrainHooks hooks;
  run.monitor.attach(hooks);
  tr::finetune(run.state, micro_corpus(), schedule, random_aux(), hooks);
  return run;
}

}  // namespace

TEST(Schedule, RejectsZeroBaselineEpochs) {
  auto s = micro_schedule();
  s.n_baseline_epochs = 0;
  auto state = tr::init_state(micro_config(), 1);
  EXPECT_EQ(kind_of([&] { tr::train_baseline(state, micro_corpus(), s); }),
            ErrorKind::precondition);
}

TEST(Schedule, VariantNamesRoundTrip) {
  for (auto v : tr::kAllVariants) EXPECT_EQ(tr::parse_variant(tr::to_string(v)), v);
  EXPECT_EQ(kind_of([] { tr::parse_variant("mal"); }), ErrorKind::config);
}

TEST(Baseline, ReducesValidationLossAndLogs) {
  const auto& s = baseline_state();
  EXPECT_EQ(s.epoch, 3);
  ASSERT_TRUE(s.best.has_value());
  double first_val = 0.0;
  int val_rows = 0;
  for (const auto& row : s.log) {
    if (row.split == "val" && row.term == "total") {
      if (++val_rows == 1) first_val = row.value;
      EXPECT_EQ(row.batch, -1);
    }
  }
  EXPECT_EQ(val_rows, 3);
  const std::vector<malkit::losses::LossTerm> terms{malkit::losses::LossTerm::multires()};
  const auto init = tr::init_state(micro_config(), 5);
  const double at_init = tr::validation_loss(init.params, terms, micro_corpus().val);
  EXPECT_LT(s.best->val_loss, at_init);
  EXPECT_LE(s.best->val_loss, first_val);
  // Best epoch restored at the end of the phase.
  EXPECT_TRUE(s.params.bitwise_equal(s.best->params));
}

TEST(Baseline, DeterministicAcrossRunsAndThreadCounts) {
  auto run = [] {
    auto s = tr::init_state(micro_config(), 5);
    tr::train_baseline(s, micro_corpus(), micro_schedule());
    return s;
  };
  ::setenv("MALKIT_THREADS", "3", 1);
  const auto threaded = run();
  ::setenv("MALKIT_THREADS", "1", 1);
  const auto serial = run();
  ::unsetenv("MALKIT_THREADS");
  EXPECT_TRUE(tr::same_state(threaded, serial));
  EXPECT_TRUE(tr::same_state(serial, baseline_state()));
}

TEST(Baseline, NonFiniteLossAbortsWithContext) {
  auto corpus = micro_corpus();
  auto noisy = corpus.train[2].noisy.vec();
  noisy[100] = std::numeric_limits<double>::quiet_NaN();
  corpus.train[2].noisy = ad::Tensor::vector(noisy);
  auto s = tr::init_state(micro_config(), 5);
  try {
    tr::train_baseline(s, corpus, micro_schedule());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
    EXPECT_NE(msg.find(corpus.train[2].id), std::string::npos) << msg;
  }
}

TEST(Checkpoint, SaveResumeImmediatelyIsEqual) {
  const auto dir = malkit::testing::scratch("train_ckpt");
  tr::save_state(baseline_state(), dir / "s.ckpt");
  const auto back = tr::load_state(dir / "s.ckpt", micro_config());
  EXPECT_TRUE(tr::same_state(back, baseline_state()));
  EXPECT_EQ(back.log, baseline_state().log);
  EXPECT_EQ(back.adam, baseline_state().adam);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, Errors) {
  EXPECT_EQ(kind_of([] { tr::load_state("/nonexistent/s.ckpt", micro_config()); }),
            ErrorKind::not_found);
  const auto bytes = tr::encode_state(baseline_state());
  EXPECT_EQ(kind_of([&] { tr::decode_state(bytes.substr(0, bytes.size() - 5), micro_config(), "x"); }),
            ErrorKind::truncated);
  auto versioned = bytes;
  const auto at = model::encode_params(baseline_state().params).size() + 4;
  versioned[at] = 42;
  EXPECT_EQ(kind_of([&] { tr::decode_state(versioned, micro_config(), "x"); }), ErrorKind::version);
}

TEST(Checkpoint, InterruptedBaselineMatchesUninterrupted) {
  auto schedule = micro_schedule();
  schedule.n_baseline_epochs = 5;
  const auto dir = malkit::testing::scratch("train_resume");
  auto full = tr::init_state(micro_config(), 5);
  tr::train_baseline(full, micro_corpus(), schedule);

  auto part = tr::init_state(micro_config(), 5);
  tr::TrainHooks hooks;
  hooks.stop_after_epoch = 3;
  hooks.checkpoint_path = dir / "s.ckpt";
  tr::train_baseline(part, micro_corpus(), schedule, hooks);
  EXPECT_EQ(part.epoch, 3);
  auto resumed = tr::load_state(dir / "s.ckpt", micro_config());
  tr::train_baseline(resumed, micro_corpus(), schedule);
  EXPECT_TRUE(tr::same_state(resumed, full));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, InterruptedFinetuneMatchesUninterrupted) {
  const auto schedule = micro_schedule(tr::Variant::mal_dynamic);
  const auto dir = malkit::testing::scratch("finetune_resume");
  auto full = baseline_state();
  tr::finetune(full, micro_corpus(), schedule);

  auto part = baseline_state();
  tr::TrainHooks hooks;
  hooks.stop_after_epoch = 4;
  hooks.checkpoint_path = dir / "s.ckpt";
  tr::finetune(part, micro_corpus(), schedule, nullptr, hooks);
  auto resumed = tr::load_state(dir / "s.ckpt", micro_config());
  EXPECT_EQ(resumed.epoch, 4);
  tr::finetune(resumed, micro_corpus(), schedule);
  EXPECT_TRUE(tr::same_state(resumed, full));
  std::filesystem::remove_all(dir);
}

TEST(Finetune, StateMismatchErrors) {
  auto fresh = tr::init_state(micro_config(), 5);
  EXPECT_EQ(kind_of([&] {
              tr::finetune(fresh, micro_corpus(), micro_schedule(tr::Variant::mal_frozen));
            }),
            ErrorKind::precondition);
  auto s = baseline_state();
  EXPECT_EQ(kind_of([&] {
              tr::finetune(s, micro_corpus(), micro_schedule(tr::Variant::external));
            }),
            ErrorKind::precondition);
  auto done = run_variant(tr::Variant::mal_frozen).state;
  EXPECT_EQ(kind_of([&] {
              tr::finetune(done, micro_corpus(), micro_schedule(tr::Variant::mal_dynamic));
            }),
            ErrorKind::precondition);
}

TEST(Contracts, FrozenFeKeepsEncoderBitwise) {
  auto run = run_variant(tr::Variant::mal_frozen_fe);
  EXPECT_TRUE(run.monitor.ok());
  for (const auto& v : run.monitor.violations()) ADD_FAILURE() << v;
  EXPECT_EQ(run.monitor.checked_batches(), 9u);
  EXPECT_TRUE(run.state.params.encoder.bitwise_equal(baseline_state().params.encoder));
  EXPECT_FALSE(run.state.params.bitwise_equal(baseline_state().params));
}

TEST(Contracts, FrozenSnapshotFixedWhileLiveEncoderMoves) {
  auto run = run_variant(tr::Variant::mal_frozen);
  EXPECT_TRUE(run.monitor.ok());
  for (const auto& v : run.monitor.violations()) ADD_FAILURE() << v;
  ASSERT_TRUE(run.monitor.live_encoder_moved_after_first_epoch().has_value());
  EXPECT_TRUE(*run.monitor.live_encoder_moved_after_first_epoch());
  EXPECT_TRUE(run.state.mal_encoder->encoder().bitwise_equal(baseline_state().params.encoder));
}

TEST(Contracts, DynamicPerEpochIsOneEpochOld) {
  auto run = run_variant(tr::Variant::mal_dynamic);
  EXPECT_TRUE(run.monitor.ok());
  for (const auto& v : run.monitor.violations()) ADD_FAILURE() << v;
}

TEST(Contracts, DynamicPerBatchIsZeroBatchesOld) {
  auto run = run_variant(tr::Variant::mal_dynamic, tr::DynamicUpdate::per_batch);
  EXPECT_TRUE(run.monitor.ok());
  for (const auto& v : run.monitor.violations()) ADD_FAILURE() << v;
}

TEST(Contracts, ExternalVariants) {
  auto ext = run_variant(tr::Variant::external);
  auto ext_fe = run_variant(tr::Variant::external_fe);
  auto combo = run_variant(tr::Variant::wavlm_mal_combo);
  for (auto* r : {&ext, &ext_fe, &combo}) {
    EXPECT_TRUE(r->monitor.ok());
    for (const auto& v : r->monitor.violations()) ADD_FAILURE() << v;
  }
  EXPECT_FALSE(ext.state.params.encoder.bitwise_equal(baseline_state().params.encoder));
  EXPECT_TRUE(ext_fe.state.params.encoder.bitwise_equal(baseline_state().params.encoder));
  EXPECT_TRUE(combo.state.params.encoder.bitwise_equal(baseline_state().params.encoder));
  // Aux encoder untouched by fine-tuning.
  EXPECT_TRUE(ext.state.aux_encoder->encoder().bitwise_equal(random_aux()->encoder()));

  std::set<std::string> combo_terms;
  for (const auto& row : combo.state.log) {
    if (row.epoch > 3) combo_terms.insert(row.term);
  }
  EXPECT_EQ(combo_terms, (std::set<std::string>{"multires_spectral", "external_feature", "mal", "total"}));
}

TEST(Contracts, MonitorDetectsViolation) {
  auto schedule = micro_schedule(tr::Variant::mal_frozen_fe);
  tr::ContractMonitor monitor(schedule);
  tr::TrainHooks hooks;
  monitor.attach(hooks);
  const auto p = baseline_state().params;
  const auto q = model::init_params(micro_config(), 999);
  const auto snap = model::snapshot_encoder(p, 3);
  hooks.on_batch({4, 0, 1, &snap, p, q});
  EXPECT_FALSE(monitor.ok());
}

TEST(AuxEncoder, RejectsOverlappingCorpus) {
  const auto main = dg::make_manifest(100, {4, 1, 0, 0});
  auto aux = malkit::losses::make_aux_manifest(100, 4, 0.5);
  aux.clips[1].spec.seed = 101;
  EXPECT_EQ(kind_of([&] {
              malkit::losses::pretrain_aux_encoder(aux, main, 1, 1, micro_config());
            }),
            ErrorKind::precondition);
}

TEST(AuxEncoder, PretrainingReducesLossAndIsDeterministic) {
  const auto main = dg::make_manifest(100, {4, 1, 0, 0});
  const auto aux = malkit::losses::make_aux_manifest(100, 6, 0.5);
  malkit::losses::AuxPretrainReport report;
  const auto a = malkit::losses::pretrain_aux_encoder(aux, main, 3, 8, micro_config(), &report);
  const auto b = malkit::losses::pretrain_aux_encoder(aux, main, 3, 8, micro_config());
  EXPECT_LT(report.final_loss, report.initial_loss);
  EXPECT_TRUE(a.encoder.encoder().bitwise_equal(b.encoder.encoder()));
}
