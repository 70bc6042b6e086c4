#pragma once

// The pipeline commands behind the `malkit` executable. Each reads the run
// config, writes only below run_dir, and derives all randomness from the
// config seed. Run directory layout:
//
//   config.cfg                         exact config of every command run here
//   data/                              index.tsv + <split>/<id>_{clean,noisy}.wav
//   baseline/  finetune_<variant>/     model.malk, state.ckpt, log.csv
//   aux/encoder.bin                    frozen auxiliary encoder (external variants)
//   eval/metrics.csv, metrics_summary.csv
//   iterate/drift_k<K>.csv, drift_k<K>.svg
//   probe/probe_<tag>.csv, rho_<tag>.csv
//   report/report.md

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "malkit/cli/run_config.hpp"
#include "malkit/datagen/dataset.hpp"
#include "malkit/eval/iterate.hpp"
#include "malkit/eval/probe.hpp"
#include "malkit/eval/report.hpp"
#include "malkit/losses/aux_encoder.hpp"
#include "malkit/model/checkpoint.hpp"
#include "malkit/training/contracts.hpp"
#include "malkit/training/state_io.hpp"
#include "malkit/training/trainer.hpp"

namespace malkit::cli {

namespace fs = std::filesystem;

inline constexpr const char* kConfigFile = "config.cfg";
inline constexpr const char* kModelFile = "model.malk";
inline constexpr const char* kStateFile = "state.ckpt";
inline constexpr const char* kLogFile = "log.csv";

struct RunPaths {
  fs::path root;

  fs::path config() const { return root / kConfigFile; }
  fs::path data() const { return root / "data"; }
  fs::path baseline() const { return root / "baseline"; }
  fs::path finetune(training::Variant v) const {
    return root / ("finetune_" + std::string(training::to_string(v)));
  }
  fs::path aux() const { return root / "aux" / "encoder.bin"; }
  fs::path eval() const { return root / "eval"; }
  fs::path iterate() const { return root / "iterate"; }
  fs::path probe() const { return root / "probe"; }
  fs::path report() const { return root / "report"; }
};

struct TrainOptions {
  std::optional<int> stop_after_epoch;
  /// Ignore an existing state checkpoint instead of resuming from it.
  bool fresh = false;
};

/// Creates the run directory and records the config there. A directory
/// created under a different config is refused rather than mixed.
inline RunPaths open_run(const RunConfig& cfg) {
  RunPaths paths{cfg.run_dir};
  const std::string text = serialize_config(cfg);
  if (fs::exists(paths.config())) {
    require(read_file(paths.config()) == text, ErrorKind::config,
            "run directory '" + paths.root.string() +
                "' was created with a different config; choose another run_dir");
  } else {
    write_file(paths.config(), text);
  }
  return paths;
}

inline std::vector<datagen::ClipPair> load_data(const RunPaths& paths) {
  require(fs::exists(paths.data() / datagen::kIndexFile), ErrorKind::not_found,
          "dataset '" + paths.data().string() + "' not found; run gen-data first");
  return datagen::load_dataset(paths.data());
}

inline std::string log_csv(const std::vector<training::LogRow>& rows) {
  std::string out = "epoch,batch,split,term,value\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + (r.batch < 0 ? std::string() : std::to_string(r.batch)) +
           "," + r.split + "," + r.term + "," + eval::exact(r.value) + "\n";
  }
  return out;
}

inline void write_outputs(const training::TrainState& state, const fs::path& dir) {
  write_file(dir / kLogFile, log_csv(state.log));
  model::save_params(state.params, dir / kModelFile);
}

inline training::TrainHooks progress_hooks(std::ostream& out, const fs::path& checkpoint,
                                           const TrainOptions& opt) {
  training::TrainHooks hooks;
  hooks.checkpoint_path = checkpoint;
  hooks.stop_after_epoch = opt.stop_after_epoch;
  hooks.on_epoch_end = [&out](const training::TrainState& s) {
    double train = 0.0, val = 0.0;
    for (const auto& r : s.log) {
      if (r.epoch == s.epoch && r.batch < 0 && r.term == "total") {
        (r.split == "train" ? train : val) = r.value;
      }
    }
    out << "epoch " << s.epoch << "  train " << std::setprecision(6) << train << "  val " << val
        << std::endl;
  };
  return hooks;
}

inline void cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  const auto paths = open_run(cfg);
  const auto clips = datagen::build_dataset(cfg.manifest(), paths.data());
  out << "wrote " << clips.size() << " clip pairs to " << paths.data().string() << "\n";
}

inline training::TrainState load_or_init(const fs::path& ckpt, const RunConfig& cfg,
                                         const TrainOptions& opt,
                                         const std::function<training::TrainState()>& init) {
  if (!opt.fresh && fs::exists(ckpt)) return training::load_state(ckpt, cfg.model);
  return init();
}

inline void cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& out) {
  const auto paths = open_run(cfg);
  const auto corpus = training::make_corpus(load_data(paths));
  const fs::path ckpt = paths.baseline() / kStateFile;
  auto state = load_or_init(ckpt, cfg, opt, [&] { return training::init_state(cfg.model, cfg.seed); });
  require(state.phase == training::Phase::baseline, ErrorKind::precondition,
          ckpt.string() + " is not a baseline checkpoint");
  if (state.epoch > 0) out << "resuming baseline at epoch " << state.epoch << "\n";
  auto schedule = cfg.schedule;
  schedule.seed = cfg.seed;
  training::train_baseline(state, corpus, schedule, progress_hooks(out, ckpt, opt));
  save_state(state, ckpt);
  write_outputs(state, paths.baseline());
  if (state.best) out << "best epoch " << state.best->epoch << "  val " << state.best->val_loss << "\n";
}

/// Loads the cached auxiliary encoder or pretrains and caches it.
inline std::shared_ptr<const model::EncoderSnapshot> aux_encoder(const RunConfig& cfg,
                                                                 const RunPaths& paths,
                                                                 std::ostream& out) {
  if (fs::exists(paths.aux())) {
    ByteReader r(read_file(paths.aux()), paths.aux().string());
    auto snap = training::state_detail::read_snapshot(r, cfg.model);
    require(snap && r.at_end(), ErrorKind::format, paths.aux().string() + ": corrupt encoder file");
    return snap;
  }
  out << "pretraining auxiliary encoder on " << cfg.aux_clips << " clips\n";
  const auto aux_manifest =
      losses::make_aux_manifest(cfg.seed, cfg.aux_clips, cfg.clip_seconds, cfg.sample_rate);
  losses::AuxPretrainReport report;
  const auto aux = losses::pretrain_aux_encoder(aux_manifest, cfg.manifest(), cfg.aux_epochs,
                                                cfg.seed + losses::kAuxSeedOffset, cfg.model, &report);
  out << "auxiliary loss " << report.initial_loss << " -> " << report.final_loss << "\n";
  ByteWriter w;
  training::state_detail::write_snapshot(w, &aux.encoder);
  write_file(paths.aux(), w.bytes());
  return std::make_shared<const model::EncoderSnapshot>(aux.encoder);
}

inline void cmd_finetune(const RunConfig& cfg, training::Variant variant, const TrainOptions& opt,
                         std::ostream& out) {
  require(variant != training::Variant::none, ErrorKind::config,
          "finetune: variant 'none' is the baseline; use train");
  const auto paths = open_run(cfg);
  const fs::path base_ckpt = paths.baseline() / kStateFile;
  require(fs::exists(base_ckpt), ErrorKind::not_found,
          "baseline checkpoint '" + base_ckpt.string() + "' not found; run train first");
  const auto corpus = training::make_corpus(load_data(paths));
  const fs::path dir = paths.finetune(variant);
  const fs::path ckpt = dir / kStateFile;
  auto state = load_or_init(ckpt, cfg, opt, [&] { return training::load_state(base_ckpt, cfg.model); });

  auto schedule = cfg.schedule;
  schedule.seed = cfg.seed;
  schedule.variant = variant;
  std::shared_ptr<const model::EncoderSnapshot> aux;
  if (training::uses_external(variant) && state.phase == training::Phase::baseline) {
    aux = aux_encoder(cfg, paths, out);
  }
  auto hooks = progress_hooks(out, ckpt, opt);
  // Contracts are checked live whenever the phase runs from its start.
  std::optional<training::ContractMonitor> monitor;
  if (state.phase == training::Phase::baseline) {
    monitor.emplace(schedule);
    monitor->attach(hooks);
  }
  training::finetune(state, corpus, schedule, aux, hooks);
  if (monitor && !monitor->violations().empty()) {
    fail(ErrorKind::precondition, "finetune: variant contract violated: " + monitor->violations().front());
  }
  save_state(state, ckpt);
  write_outputs(state, dir);
  if (monitor) out << "variant contract checked on " << monitor->checked_batches() << " batches\n";
}

/// A checkpoint argument is a model directory or a .malk file. The tag is
/// the directory name with any "finetune_" prefix removed.
struct ModelRef {
  std::string tag;
  fs::path file;
};

inline ModelRef resolve_model(const fs::path& arg) {
  const fs::path file = fs::is_directory(arg) ? arg / kModelFile : arg;
  require(fs::exists(file), ErrorKind::not_found, "checkpoint '" + file.string() + "' not found");
  std::string tag = fs::absolute(file).parent_path().filename().string();
  if (tag.rfind("finetune_", 0) == 0) tag = tag.substr(9);
  return {tag, file};
}

/// Explicit checkpoints, or else the baseline and every finished fine-tune.
inline std::vector<ModelRef> models_for(const RunPaths& paths, const std::vector<fs::path>& explicit_refs) {
  std::vector<ModelRef> out;
  if (!explicit_refs.empty()) {
    for (const auto& p : explicit_refs) out.push_back(resolve_model(p));
    return out;
  }
  out.push_back(resolve_model(paths.baseline()));
  for (auto v : training::kAllVariants) {
    if (fs::exists(paths.finetune(v) / kModelFile)) out.push_back(resolve_model(paths.finetune(v)));
  }
  return out;
}

inline std::vector<datagen::ClipPair> first_n(std::vector<datagen::ClipPair> clips, std::size_t n) {
  if (clips.size() > n) clips.resize(n);
  return clips;
}

inline void cmd_eval(const RunConfig& cfg, const std::vector<fs::path>& checkpoints,
                     std::ostream& out) {
  const auto paths = open_run(cfg);
  const auto models = models_for(paths, checkpoints);
  std::vector<datagen::ClipPair> clips;
  for (const auto& c : load_data(paths)) {
    if (c.split != datagen::Split::train) clips.push_back(c);
  }
  const auto mc = cfg.metric_config();
  auto records = eval::evaluate_clips(nullptr, clips, "noisy", mc);
  for (const auto& m : models) {
    const auto params = model::load_params(m.file, cfg.model);
    const auto r = eval::evaluate_clips(&params, clips, m.tag, mc);
    records.insert(records.end(), r.begin(), r.end());
  }
  const auto summary = eval::report(records, paths.eval() / "metrics.csv");
  for (const auto& s : summary) {
    if (s.metric == "si_sdr") {
      out << s.model_tag << " " << s.split << " si_sdr mean " << std::setprecision(5) << s.mean << "\n";
    }
  }
}

inline void cmd_iterate(const RunConfig& cfg, const std::vector<fs::path>& checkpoints,
                        std::optional<int> k_override, std::ostream& out) {
  const auto paths = open_run(cfg);
  const int K = k_override.value_or(cfg.iterate_k);
  require(K >= 1, ErrorKind::config, "iterate: --k must be >= 1");
  const auto models = models_for(paths, checkpoints);
  const auto clips = first_n(datagen::select_split(load_data(paths), datagen::Split::test_in_domain),
                             cfg.iterate_clips);
  require(!clips.empty(), ErrorKind::precondition, "iterate: the in-domain test split is empty");
  std::vector<eval::DriftRecord> records;
  for (const auto& m : models) {
    const auto params = model::load_params(m.file, cfg.model);
    std::vector<eval::DriftRecord> per(clips.size());
    parallel_for(clips.size(), [&](std::size_t i) {
      per[i] = {clips[i].id, m.tag,
                eval::iterate_enhance(params, clips[i].noisy, K, &clips[i].clean).curve};
    });
    std::vector<double> drift, sdr;
    for (const auto& r : per) {
      drift.push_back(r.curve.drift.back());
      sdr.push_back(r.curve.si_sdr.back());
    }
    out << m.tag << " k=" << K << " median drift " << std::setprecision(5) << eval::median(drift)
        << "  median si_sdr " << eval::median(sdr) << "\n";
    records.insert(records.end(), per.begin(), per.end());
  }
  const std::string stem = "drift_k" + std::to_string(K);
  write_file(paths.iterate() / (stem + ".csv"), eval::drift_csv(records));
  write_file(paths.iterate() / (stem + ".svg"), eval::drift_svg(records));
}

inline void cmd_probe_snr(const RunConfig& cfg, const std::optional<fs::path>& checkpoint,
                          std::ostream& out) {
  const auto paths = open_run(cfg);
  const auto m = resolve_model(checkpoint.value_or(paths.baseline()));
  const auto params = model::load_params(m.file, cfg.model);
  const auto clips = first_n(datagen::select_split(load_data(paths), datagen::Split::test_in_domain),
                             cfg.probe_clips);
  const auto r = eval::probe_snr_rule(params.encoder, cfg.model, clips, cfg.probe_snrs);
  std::string table = "clip_id,snr_db,distance\n";
  for (const auto& row : r.rows) {
    table += row.clip_id + "," + eval::exact(row.snr_db) + "," + eval::exact(row.distance) + "\n";
  }
  std::string rho = "clip_id,rho\n";
  for (std::size_t i = 0; i < clips.size(); ++i) rho += clips[i].id + "," + eval::exact(r.clip_rho[i]) + "\n";
  rho += "mean," + eval::exact(r.mean_rho) + "\n";
  write_file(paths.probe() / ("probe_" + m.tag + ".csv"), table);
  write_file(paths.probe() / ("rho_" + m.tag + ".csv"), rho);
  out << m.tag << " mean spearman rho " << std::setprecision(5) << r.mean_rho << "\n";
}

/// Markdown digest of whatever eval, iterate and probe outputs exist.
inline void cmd_report(const RunConfig& cfg, std::ostream& out) {
  const auto paths = open_run(cfg);
  const fs::path metrics = paths.eval() / "metrics.csv";
  require(fs::exists(metrics), ErrorKind::not_found,
          "metrics '" + metrics.string() + "' not found; run eval first");
  const auto summary = eval::summarize(eval::read_metrics_csv(metrics));
  std::ostringstream md;
  md << std::setprecision(6);
  md << "# Run report\n\n## Metrics (mean / median)\n\n| model | split | metric | n | mean | median |\n"
     << "|---|---|---|---|---|---|\n";
  for (const auto& s : summary) {
    md << "| " << s.model_tag << " | " << s.split << " | " << s.metric << " | " << s.count << " | "
       << s.mean << " | " << s.median << " |\n";
  }
  std::vector<fs::path> drift_files, rho_files;
  if (fs::exists(paths.iterate())) {
    for (const auto& e : fs::directory_iterator(paths.iterate())) {
      if (e.path().extension() == ".csv") drift_files.push_back(e.path());
    }
  }
  if (fs::exists(paths.probe())) {
    for (const auto& e : fs::directory_iterator(paths.probe())) {
      if (e.path().filename().string().rfind("rho_", 0) == 0) rho_files.push_back(e.path());
    }
  }
  std::sort(drift_files.begin(), drift_files.end());
  std::sort(rho_files.begin(), rho_files.end());
  for (const auto& f : drift_files) {
    // Final-iteration medians per model from clip_id,model_tag,k,si_sdr,drift rows.
    std::map<std::string, std::map<std::string, std::pair<int, std::pair<double, double>>>> last;
    std::istringstream in(read_file(f));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> c;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) c.push_back(cell);
      require(c.size() == 5, ErrorKind::format, f.string() + ": malformed row '" + line + "'");
      const int k = std::stoi(c[2]);
      auto& slot = last[c[1]][c[0]];
      if (k >= slot.first) slot = {k, {std::stod(c[3]), std::stod(c[4])}};
    }
    md << "\n## Iterative enhancement (" << f.filename().string() << ")\n\n"
       << "| model | clips | median si_sdr at K | median drift at K |\n|---|---|---|---|\n";
    for (const auto& [tag, clips] : last) {
      std::vector<double> sdr, drift;
      for (const auto& [id, v] : clips) {
        sdr.push_back(v.second.first);
        drift.push_back(v.second.second);
      }
      md << "| " << tag << " | " << clips.size() << " | " << eval::median(sdr) << " | "
         << eval::median(drift) << " |\n";
    }
  }
  if (!rho_files.empty()) {
    md << "\n## SNR-rule probe\n\n| model | mean spearman rho |\n|---|---|\n";
    for (const auto& f : rho_files) {
      const std::string text = read_file(f);
      const auto pos = text.rfind("mean,");
      require(pos != std::string::npos, ErrorKind::format, f.string() + ": no mean row");
      std::string tag = f.stem().string().substr(4);
      md << "| " << tag << " | " << text.substr(pos + 5, text.find('\n', pos) - pos - 5) << " |\n";
    }
  }
  write_file(paths.report() / "report.md", md.str());
  out << "wrote " << (paths.report() / "report.md").string() << "\n";
}

}  // namespace malkit::cli
