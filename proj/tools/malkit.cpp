// malkit: corpus generation, baseline training, MAL fine-tuning, evaluation.
// Failures print one line, `error: <kind>: <message>`, and exit nonzero.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "malkit/cli/commands.hpp"

namespace cli = malkit::cli;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::string config;
  std::string run_dir;

  cli::RunConfig load() const {
    auto cfg = cli::load_config(config);
    if (!run_dir.empty()) cfg.run_dir = run_dir;
    return cfg;
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "Run configuration file")->required();
  sub->add_option("--run-dir", c.run_dir, "Override run_dir from the config");
}

void add_train_options(CLI::App* sub, cli::TrainOptions& opt) {
  sub->add_option("--stop-after-epoch", opt.stop_after_epoch,
                  "Stop once this many epochs are complete (resume by re-running)");
  sub->add_flag("--fresh", opt.fresh, "Ignore an existing state checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"malkit: Model-as-Loss speech enhancement at desk scale"};
  app.require_subcommand(1);
  Common common;
  cli::TrainOptions train_opt;
  std::string variant;
  std::vector<std::string> checkpoints;
  std::optional<int> k;
  std::optional<std::string> probe_checkpoint;

  auto* gen = app.add_subcommand("gen-data", "Synthesize the corpus into <run_dir>/data");
  add_common(gen, common);
  auto* train = app.add_subcommand("train", "Baseline training (resumes from its checkpoint)");
  add_common(train, common);
  add_train_options(train, train_opt);
  auto* finetune = app.add_subcommand("finetune", "MAL or external-feature fine-tuning");
  add_common(finetune, common);
  add_train_options(finetune, train_opt);
  finetune->add_option("--variant", variant, "mal_frozen_fe | mal_frozen | mal_dynamic | external | "
                                             "external_fe | wavlm_mal_combo")
      ->required();
  auto* evalc = app.add_subcommand("eval", "Metrics CSV for the noisy input and each model");
  add_common(evalc, common);
  evalc->add_option("--checkpoint", checkpoints, "Model directory or .malk file (repeatable)");
  auto* iterate = app.add_subcommand("iterate", "Iterative enhancement drift curves");
  add_common(iterate, common);
  iterate->add_option("--checkpoint", checkpoints, "Model directory or .malk file (repeatable)");
  iterate->add_option("--k", k, "Iterations (default: iterate_k from the config)");
  auto* probe = app.add_subcommand("probe-snr", "SNR-rule embedding probe");
  add_common(probe, common);
  probe->add_option("--checkpoint", probe_checkpoint, "Model directory or .malk file");
  auto* report = app.add_subcommand("report", "Markdown digest of eval, iterate and probe outputs");
  add_common(report, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    const auto cfg = common.load();
    auto& out = std::cout;
    std::vector<std::filesystem::path> refs(checkpoints.begin(), checkpoints.end());
    if (*gen) cli::cmd_gen_data(cfg, out);
    if (*train) cli::cmd_train(cfg, train_opt, out);
    if (*finetune) cli::cmd_finetune(cfg, malkit::training::parse_variant(variant), train_opt, out);
    if (*evalc) cli::cmd_eval(cfg, refs, out);
    if (*iterate) cli::cmd_iterate(cfg, refs, k, out);
    if (*probe) {
      std::optional<std::filesystem::path> ref;
      if (probe_checkpoint) ref = *probe_checkpoint;
      cli::cmd_probe_snr(cfg, ref, out);
    }
    if (*report) cli::cmd_report(cfg, out);
  } catch (const malkit::Error& e) {
    std::cerr << "error: " << malkit::to_string(e.kind()) << ": " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
