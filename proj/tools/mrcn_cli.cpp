#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mrcn/check.hpp"
#include "mrcn/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Staging area for parsed flags; only flags the user actually passed are
// merged, so precedence stays defaults < config file < command line.
struct CliArgs {
  std::string config_file;
  std::string checkpoint;
  std::string layout_dir;
  std::string lambda2_list;
  std::uint64_t seed = 0;
  std::string out;
  std::string dataset;
  std::string backbone;
  int stage = 0;
  double lambda2 = 0.0;
  double alpha = 0.0;
  std::uint64_t epochs = 0;
};

void add_common_flags(CLI::App* cmd, CliArgs& args) {
  cmd->add_option("--config", args.config_file, "flat key = value config file");
  cmd->add_option("--seed", args.seed, "run seed");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--dataset", args.dataset,
                  "'synthetic', a dataset container, or an image directory");
  cmd->add_option("--stage", args.stage, "backbone stage after which the block is inserted")
      ->check(CLI::Range(0, 4));
  cmd->add_option("--backbone", args.backbone, "toy | resnet5");
  cmd->add_flag("--no-mrm", "disable the restitution module");
  cmd->add_flag("--no-mcm", "disable the compensation module");
  cmd->add_flag("--no-cqc", "disable the center-quadruplet loss");
  cmd->add_option("--lambda2", args.lambda2, "CQC loss weight");
  cmd->add_option("--alpha", args.alpha, "CQC margin");
  cmd->add_option("--epochs", args.epochs, "total training epochs")->check(CLI::PositiveNumber);
}

mrcn::RunConfig resolve_config(CLI::App* cmd, const CliArgs& args) {
  mrcn::RunConfig cfg;
  if (!args.config_file.empty()) mrcn::apply_config_file(cfg, args.config_file);

  auto passed = [&](const std::string& name) { return cmd->count(name) > 0; };
  if (passed("--seed")) cfg.seed = args.seed;
  if (passed("--out")) cfg.out_dir = args.out;
  if (passed("--dataset")) cfg.dataset = args.dataset;
  if (passed("--stage")) cfg.stage = args.stage;
  if (passed("--backbone")) cfg.backbone = args.backbone;
  if (passed("--no-mrm")) cfg.use_mrm = false;
  if (passed("--no-mcm")) cfg.use_mcm = false;
  if (passed("--no-cqc")) cfg.use_cqc = false;
  if (passed("--lambda2")) cfg.loss.lambda2 = args.lambda2;
  if (passed("--alpha")) cfg.loss.alpha = args.alpha;
  if (passed("--epochs")) cfg.schedule.set_total_epochs(args.epochs);
  if (!args.lambda2_list.empty()) mrcn::apply_config_line(cfg, "lambda2_values", args.lambda2_list);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modality restitution/compensation network: training, evaluation and diagnostics"};
  app.require_subcommand(1);

  CliArgs args;

  CLI::App* synth = app.add_subcommand("synth-data", "generate a synthetic two-modality dataset");
  add_common_flags(synth, args);
  synth->add_option("--layout-dir", args.layout_dir,
                    "also export the image directory layout (image mode only)");

  CLI::App* train = app.add_subcommand("train", "train a network and write checkpoints");
  add_common_flags(train, args);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint (CMC / mAP, embeddings)");
  add_common_flags(eval, args);
  eval->add_option("--checkpoint", args.checkpoint, "checkpoint to evaluate")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "train/evaluate the component ablation table");
  add_common_flags(ablate, args);

  CLI::App* sweep = app.add_subcommand("sweep-lambda2", "evaluate a list of CQC weights");
  add_common_flags(sweep, args);
  sweep->add_option("--values", args.lambda2_list, "comma-separated lambda2 values");

  CLI::App* diagnose = app.add_subcommand("diagnose", "disentanglement diagnostics for a checkpoint");
  add_common_flags(diagnose, args);
  diagnose->add_option("--checkpoint", args.checkpoint, "checkpoint to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* cmd = app.get_subcommands().front();
  try {
    mrcn::RunConfig cfg = resolve_config(cmd, args);
    if (cmd == synth) return mrcn::cmd_synth_data(cfg, args.layout_dir);
    if (cmd == train) return mrcn::cmd_train(cfg);
    if (cmd == eval) return mrcn::cmd_eval(cfg, args.checkpoint);
    if (cmd == ablate) return mrcn::cmd_ablate(cfg);
    if (cmd == sweep) return mrcn::cmd_sweep_lambda2(cfg);
    if (cmd == diagnose) return mrcn::cmd_diagnose(cfg, args.checkpoint);
    std::cerr << "error: unknown subcommand\n";
    return kExitUsage;
  } catch (const mrcn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
