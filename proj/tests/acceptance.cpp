// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Optional arguments select criteria, e.g. `acceptance 1 2 4`.
//
// Criteria 5-7 train on the full desk corpus (configs/desk.cfg) and take
// tens of minutes on one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "malkit/cli/commands.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

namespace fs = std::filesystem;
namespace ad = malkit::ad;
namespace cli = malkit::cli;
namespace dsp = malkit::dsp;
namespace eval = malkit::eval;
namespace losses = malkit::losses;
namespace model = malkit::model;
namespace tr = malkit::training;
namespace dg = malkit::datagen;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int n, const std::string& name, const Outcome& o) {
  if (!o.pass) ++failures;
  std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << name << "  ["
            << o.detail << "]" << std::endl;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. Gradients of every loss through the full tiny model.

Outcome gradients() {
  const auto t0 = Clock::now();
  const auto cfg = malkit::testing::tiny_config();
  const char* names[] = {"spectral_l1", "multires_spectral", "mal_loss", "external_feature"};
  std::size_t checked = 0, skipped = 0, refined = 0, failed = 0, failed_runs = 0, runs = 0;
  double worst = 0.0;
  std::string worst_where;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto params = model::init_params(cfg, 100 + seed);
    const auto mal = std::make_shared<const model::EncoderSnapshot>(
        model::snapshot_encoder(model::init_params(cfg, 500 + seed), 3));
    const auto aux = losses::AuxEncoder{model::snapshot_encoder(model::init_params(cfg, 900 + seed), 0)};
    // Long enough for the 1024-point multires resolution.
    const auto clean = model::as_tensor(malkit::testing::test_signal(1100, seed));
    const auto noisy = model::as_tensor(malkit::testing::test_signal(1100, seed, 0.3));
    for (int which = 0; which < 4; ++which) {
      malkit::testing::GraphFn fn = [&, which](ad::Tape&, const std::vector<ad::Tensor>& vars) {
        const auto q = model::ModelParams::unflatten(cfg, vars);
        const auto enhanced = model::forward(q, noisy).enhanced;
        switch (which) {
          case 0: return losses::spectral_l1(clean, enhanced, cfg.stft);
          case 1: return losses::multires_spectral(clean, enhanced);
          case 2: return losses::mal_loss(*mal, clean, enhanced);
          default: return losses::external_feature_loss(aux, clean, enhanced);
        }
      };
      malkit::testing::GradCheckOptions opt;
      opt.max_coords = 12;
      opt.seed = seed * 4 + which;
      const auto r = malkit::testing::gradient_check(fn, params.flatten(), opt);
      ++runs;
      checked += r.checked;
      skipped += r.skipped;
      refined += r.refined;
      failed += r.failures;
      if (r.worst_rel > worst) {
        worst = r.worst_rel;
        worst_where = std::string(names[which]) + " seed " + std::to_string(seed) + " " + r.worst;
      }
      if (!r.ok()) ++failed_runs;
    }
  }
  const double secs = seconds_since(t0);
  std::string detail = std::to_string(runs) + " loss x seed runs, " + std::to_string(checked) +
                       " coords checked, " + std::to_string(refined) + " refined, " +
                       std::to_string(skipped) + " skipped at kinks, worst rel " + fmt(worst) +
                       ", " + fmt(secs, 3) + " s";
  if (failed || failed_runs) {
    detail += "; " + std::to_string(failed) + " coords failed, worst at " + worst_where;
  }
  return {failed == 0 && failed_runs == 0 && secs < 60.0, detail};
}

// ---------------------------------------------------------------------------
// 2. istft(stft(x)) == x away from the edges.

Outcome reconstruction() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(2048, 8192);
  double worst = 0.0;
  for (auto kind : {dsp::WindowKind::hann, dsp::WindowKind::vorbis}) {
    const dsp::StftConfig cfg{512, 256, kind, 0};
    for (int i = 0; i < 100; ++i) {
      dsp::Waveform x;
      x.samples.resize(len(rng));
      for (auto& s : x.samples) s = u(rng);
      const auto y = dsp::istft(dsp::stft(x, cfg), x.size());
      const std::size_t last_full = cfg.fft_size + (dsp::frame_count(x.size(), cfg) - 1) * cfg.hop;
      for (std::size_t t = cfg.fft_size; t + cfg.fft_size <= last_full; ++t) {
        worst = std::max(worst, std::fabs(y.samples[t] - x.samples[t]));
      }
    }
  }
  return {worst < 1e-6, "hann + vorbis, 512/256, 200 signals, max interior error " + fmt(worst)};
}

// ---------------------------------------------------------------------------
// 3. Variant contracts on a 3+3 micro-run.

Outcome contracts() {
  const auto t0 = Clock::now();
  model::ModelConfig cfg;
  cfg.stft = {256, 128, dsp::WindowKind::vorbis, 0};
  cfg.channels = {16, 12, 8};
  const auto corpus = tr::make_corpus(dg::build_clips(dg::make_manifest(33, {12, 3, 0, 0}, 0.5)));
  tr::TrainSchedule base;
  base.n_baseline_epochs = 3;
  base.m_mal_epochs = 3;
  base.batch_size = 4;
  base.learning_rate = 3e-3;
  base.seed = 33;
  auto baseline = tr::init_state(cfg, 33);
  tr::train_baseline(baseline, corpus, base);

  struct Case {
    tr::Variant v;
    tr::DynamicUpdate mode;
    const char* name;
  };
  const Case cases[] = {{tr::Variant::mal_frozen_fe, tr::DynamicUpdate::per_epoch, "frozen_fe"},
                        {tr::Variant::mal_frozen, tr::DynamicUpdate::per_epoch, "frozen"},
                        {tr::Variant::mal_dynamic, tr::DynamicUpdate::per_epoch, "dynamic/epoch"},
                        {tr::Variant::mal_dynamic, tr::DynamicUpdate::per_batch, "dynamic/batch"}};
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    auto schedule = base;
    schedule.variant = c.v;
    schedule.dynamic_update = c.mode;
    auto state = baseline;
    tr::ContractMonitor monitor(schedule);
    tr::TrainHooks hooks;
    monitor.attach(hooks);
    tr::finetune(state, corpus, schedule, nullptr, hooks);
    const std::size_t batches = (corpus.train.size() + base.batch_size - 1) / base.batch_size;
    bool case_ok = monitor.ok() && monitor.checked_batches() == batches * base.m_mal_epochs;
    if (c.v == tr::Variant::mal_frozen_fe) {
      case_ok = case_ok && state.params.encoder.bitwise_equal(baseline.params.encoder);
    }
    if (c.v == tr::Variant::mal_frozen) {
      const auto moved = monitor.live_encoder_moved_after_first_epoch();
      case_ok = case_ok && moved && *moved;
    }
    ok = ok && case_ok;
    detail += std::string(detail.empty() ? "" : ", ") + c.name + " " +
              std::to_string(monitor.checked_batches()) + " batches " + (case_ok ? "ok" : "VIOLATED");
    if (!monitor.violations().empty()) detail += " (" + monitor.violations().front() + ")";
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 120.0, detail + ", " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------------------
// 4. Zero at identity.

Outcome identity() {
  const auto cfg = model::ModelConfig{};
  const auto params = model::init_params(cfg, 4);
  const auto snap = model::snapshot_encoder(params, 0);
  const losses::AuxEncoder aux{model::snapshot_encoder(model::init_params(cfg, 5), 0)};
  double worst = 0.0;
  std::string worst_name;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto w = malkit::testing::test_signal(16000, seed, 0.2);
    const auto t = model::as_tensor(w);
    const std::pair<const char*, double> values[] = {
        {"spectral_l1", losses::spectral_l1(t, t, cfg.stft).item()},
        {"multires_spectral", losses::multires_spectral(t, t).item()},
        {"mal_loss", losses::mal_loss(snap, t, t).item()},
        {"external_feature", losses::external_feature_loss(aux, t, t).item()},
        {"lsd", eval::lsd(w, w)},
        {"mcd", eval::mcd(w, w)},
        {"spectral_l1 metric", eval::spectral_l1(w, w)},
    };
    for (const auto& [name, v] : values) {
      if (std::fabs(v) >= worst) {
        worst = std::fabs(v);
        worst_name = name;
      }
    }
  }
  return {worst <= 1e-12, "7 losses/metrics x 5 signals, max |value| " + fmt(worst) +
                              (worst > 0 ? " (" + worst_name + ")" : "")};
}

// ---------------------------------------------------------------------------
// 8. Determinism of commands and of interrupted training.

const char* kDeterminismConfig = R"(seed = 21
corpus_train = 8
corpus_val = 2
corpus_test_in_domain = 3
corpus_test_out_domain = 1
clip_seconds = 0.5
fft_size = 256
hop = 128
channels = 16, 12, 8
n_baseline_epochs = 3
m_mal_epochs = 3
batch_size = 3
aux_clips = 4
aux_epochs = 1
iterate_k = 4
iterate_clips = 3
probe_clips = 3
)";

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = malkit::read_file(e.path());
  }
  return out;
}

Outcome determinism() {
  const auto root = malkit::testing::scratch("acceptance_determinism");
  std::ostringstream sink;
  auto cfg = cli::parse_config(kDeterminismConfig);
  auto run_all = [&](const cli::RunConfig& c, bool fresh) {
    cli::TrainOptions opt;
    opt.fresh = fresh;
    cli::cmd_gen_data(c, sink);
    cli::cmd_train(c, opt, sink);
    for (auto v : {tr::Variant::mal_frozen_fe, tr::Variant::mal_dynamic, tr::Variant::external}) {
      cli::cmd_finetune(c, v, opt, sink);
    }
    cli::cmd_eval(c, {}, sink);
    cli::cmd_iterate(c, {}, std::nullopt, sink);
    cli::cmd_probe_snr(c, std::nullopt, sink);
    cli::cmd_report(c, sink);
  };
  cfg.run_dir = (root / "a").string();
  ::setenv("MALKIT_THREADS", "3", 1);
  run_all(cfg, false);
  const auto first = tree(root / "a");
  fs::remove_all(root / "a" / "aux");
  run_all(cfg, true);
  ::unsetenv("MALKIT_THREADS");
  const auto second = tree(root / "a");
  std::size_t differing = 0;
  for (const auto& [k, v] : first) differing += second.count(k) && second.at(k) == v ? 0 : 1;
  const bool rerun_ok = first == second;

  // Interrupted after epoch 2 of the baseline and epoch 4 of fine-tuning,
  // on one worker thread, versus the uninterrupted 3-thread run above.
  auto cb = cfg;
  cb.run_dir = (root / "b").string();
  ::setenv("MALKIT_THREADS", "1", 1);
  cli::cmd_gen_data(cb, sink);
  cli::TrainOptions stop;
  stop.stop_after_epoch = 2;
  cli::cmd_train(cb, stop, sink);
  cli::cmd_train(cb, {}, sink);
  stop.stop_after_epoch = 4;
  cli::cmd_finetune(cb, tr::Variant::mal_dynamic, stop, sink);
  cli::cmd_finetune(cb, tr::Variant::mal_dynamic, {}, sink);
  ::unsetenv("MALKIT_THREADS");
  bool resume_ok = true;
  for (const char* f : {"baseline/state.ckpt", "baseline/model.malk", "finetune_mal_dynamic/state.ckpt",
                        "finetune_mal_dynamic/model.malk", "finetune_mal_dynamic/log.csv"}) {
    resume_ok = resume_ok && malkit::read_file(root / "a" / f) == malkit::read_file(root / "b" / f);
  }
  fs::remove_all(root);
  return {rerun_ok && resume_ok,
          "re-run of all 7 commands: " + std::to_string(first.size()) + " files, " +
              std::to_string(differing) + " differ; interrupted+resumed (1 thread) vs uninterrupted: " +
              (resume_ok ? "bitwise equal" : "DIFFER")};
}

// ---------------------------------------------------------------------------
// 9. Smoke pipeline through the executable.

Outcome smoke() {
  const auto root = malkit::testing::scratch("acceptance_smoke");
  const std::string common = std::string(" -c ") + MALKIT_SOURCE_DIR + "/configs/smoke.cfg --run-dir " +
                             (root / "run").string() + " > " + (root / "out.txt").string() + " 2>&1";
  const auto t0 = Clock::now();
  std::string failed;
  for (const std::string sub :
       {"gen-data", "train", "finetune --variant mal_dynamic", "eval", "iterate"}) {
    const int status = std::system((std::string(MALKIT_CLI_PATH) + " " + sub + common).c_str());
    if (status != 0) {
      failed = sub + " exited " + std::to_string(status) + ": " + malkit::read_file(root / "out.txt");
      break;
    }
  }
  const double secs = seconds_since(t0);
  fs::remove_all(root);
  return {failed.empty() && secs < 300.0,
          failed.empty() ? "5 commands exit 0 in " + fmt(secs, 3) + " s" : failed};
}

// ---------------------------------------------------------------------------
// 5-7. Desk-scale experiments, sharing one baseline.

struct Desk {
  cli::RunConfig cfg;
  std::vector<dg::ClipPair> clips;
  tr::Corpus corpus;
  tr::TrainState baseline;
  double baseline_secs = 0.0;
};

Desk& desk() {
  static Desk d = [] {
    Desk d;
    d.cfg = cli::load_config(fs::path(MALKIT_SOURCE_DIR) / "configs" / "desk.cfg");
    d.clips = dg::build_clips(d.cfg.manifest());
    d.corpus = tr::make_corpus(d.clips);
    auto schedule = d.cfg.schedule;
    schedule.seed = d.cfg.seed;
    const auto t0 = Clock::now();
    d.baseline = tr::init_state(d.cfg.model, d.cfg.seed);
    tr::train_baseline(d.baseline, d.corpus, schedule);
    d.baseline_secs = seconds_since(t0);
    return d;
  }();
  return d;
}

Outcome efficacy() {
  auto& d = desk();
  const auto val = dg::select_split(d.clips, dg::Split::val);
  std::vector<double> gain(val.size());
  malkit::parallel_for(val.size(), [&](std::size_t i) {
    gain[i] = eval::si_sdr(val[i].clean, model::enhance(d.baseline.params, val[i].noisy)) -
              eval::si_sdr(val[i].clean, val[i].noisy);
  });
  const double mean_gain = eval::mean(gain);
  return {mean_gain >= 3.0 && d.baseline_secs <= 1800.0,
          "mean val SI-SDR gain " + fmt(mean_gain) + " dB over " + std::to_string(val.size()) +
              " clips, baseline N=" + std::to_string(d.cfg.schedule.n_baseline_epochs) + " in " +
              fmt(d.baseline_secs, 4) + " s"};
}

Outcome self_consistency() {
  auto& d = desk();
  const auto test = cli::first_n(dg::select_split(d.clips, dg::Split::test_in_domain), d.cfg.iterate_clips);
  const int K = d.cfg.iterate_k;
  auto final_values = [&](const model::ModelParams& p, std::vector<double>& drift, std::vector<double>& sdr) {
    drift.assign(test.size(), 0.0);
    sdr.assign(test.size(), 0.0);
    malkit::parallel_for(test.size(), [&](std::size_t i) {
      const auto r = eval::iterate_enhance(p, test[i].noisy, K, &test[i].clean);
      drift[i] = r.curve.drift.back();
      sdr[i] = r.curve.si_sdr.back();
    });
  };
  std::vector<double> base_drift, base_sdr;
  auto t0 = Clock::now();
  final_values(d.baseline.params, base_drift, base_sdr);
  double iterate_secs = seconds_since(t0);
  double finetune_secs = 0.0;

  bool ok = true;
  std::string detail = "K=" + std::to_string(K) + ", " + std::to_string(test.size()) +
                       " clips, baseline median drift " + fmt(eval::median(base_drift)) +
                       " si_sdr " + fmt(eval::median(base_sdr));
  for (auto v : {tr::Variant::mal_frozen_fe, tr::Variant::mal_frozen, tr::Variant::mal_dynamic}) {
    auto schedule = d.cfg.schedule;
    schedule.seed = d.cfg.seed;
    schedule.variant = v;
    auto state = d.baseline;
    t0 = Clock::now();
    tr::finetune(state, d.corpus, schedule);
    finetune_secs += seconds_since(t0);
    std::vector<double> drift, sdr;
    t0 = Clock::now();
    final_values(state.params, drift, sdr);
    iterate_secs += seconds_since(t0);
    const double f_drift = eval::bootstrap_median_fraction(
        drift, base_drift, [](double a, double b) { return a <= b; }, 1000, 6);
    const double f_sdr = eval::bootstrap_median_fraction(
        sdr, base_sdr, [](double a, double b) { return a >= b; }, 1000, 7);
    const bool v_ok = f_drift >= 0.7 && f_sdr >= 0.7;
    ok = ok && v_ok;
    detail += "; " + std::string(tr::to_string(v)) + " drift " + fmt(eval::median(drift)) + " (" +
              fmt(100 * f_drift, 3) + "% of resamples <= baseline) si_sdr " + fmt(eval::median(sdr)) +
              " (" + fmt(100 * f_sdr, 3) + "% >= baseline)";
  }
  detail += "; fine-tuning " + fmt(finetune_secs, 4) + " s, iteration " + fmt(iterate_secs, 4) + " s";
  return {ok && iterate_secs <= 1200.0, detail};
}

Outcome snr_rule() {
  auto& d = desk();
  const auto test = cli::first_n(dg::select_split(d.clips, dg::Split::test_in_domain), d.cfg.probe_clips);
  const auto r = eval::probe_snr_rule(d.baseline.params.encoder, d.cfg.model, test, eval::kProbeSnrs);
  const auto untrained = eval::probe_snr_rule(model::init_params(d.cfg.model, d.cfg.seed).encoder,
                                              d.cfg.model, test, eval::kProbeSnrs);
  return {r.mean_rho < -0.8, "mean Spearman rho " + fmt(r.mean_rho) + " over " +
                                 std::to_string(test.size()) + " clips at SNR {20,10,0,-5} (untrained encoder " +
                                 fmt(untrained.mean_rho) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto want = [&](int n) { return only.empty() || only.count(n); };
  const std::pair<int, std::pair<const char*, std::function<Outcome()>>> criteria[] = {
      {1, {"gradient correctness (tiny model, 4 losses, 20 seeds)", gradients}},
      {2, {"STFT perfect reconstruction", reconstruction}},
      {3, {"variant contracts on a 3+3 micro-run", contracts}},
      {4, {"zero at identity", identity}},
      {8, {"determinism", determinism}},
      {9, {"smoke pipeline", smoke}},
      {5, {"training efficacy (desk corpus)", efficacy}},
      {6, {"self-consistency vs baseline at k=25", self_consistency}},
      {7, {"SNR-rule probe", snr_rule}},
  };
  for (const auto& [n, c] : criteria) {
    if (!want(n)) continue;
    try {
      report(n, c.first, c.second());
    } catch (const std::exception& e) {
      report(n, c.first, {false, std::string("exception: ") + e.what()});
    }
  }
  return failures == 0 ? 0 : 1;
}
