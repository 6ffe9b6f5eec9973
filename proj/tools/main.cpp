// descent: constrained-training experiment CLI.
//
// Subcommands:
//   train        per-seed training runs (constrained + unconstrained)
//   sweep        evaluate saved checkpoints across the noise grid
//   gradcheck    finite-difference validation of every differentiable op
//   ratio-report layerwise descent-ratio statistics for one checkpoint
//
// Exit codes: 0 success, 2 invalid or incomplete configuration (the failing
// field is named on stderr), 1 any other failure (divergence, I/O, bad
// checkpoint); partial training logs are preserved on failure.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "descent/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "runs";
  int64_t seed = -1;  // < 0: use the seeds listed in the config
};

void add_common(CLI::App* cmd, CommonArgs& args, bool need_config) {
  auto* conf = cmd->add_option("--config", args.config_path, "experiment config file");
  if (need_config) conf->required();
  cmd->add_option("--out", args.out_dir, "output directory (default: runs)");
  cmd->add_option("--seed", args.seed, "override the config seed list with one seed");
}

std::vector<uint64_t> pick_seeds(const descent::ExperimentConfig& cfg, int64_t override_seed) {
  if (override_seed >= 0) return {static_cast<uint64_t>(override_seed)};
  return cfg.seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"descent: layerwise-constrained training experiments"};
  app.require_subcommand(1);

  CommonArgs train_args, sweep_args, ratio_args;
  std::vector<std::string> sweep_ckpts;
  std::string ratio_ckpt;
  descent::GradCheckOptions gc;

  CLI::App* train = app.add_subcommand("train", "train per-seed constrained and unconstrained runs");
  add_common(train, train_args, true);

  CLI::App* sweep = app.add_subcommand("sweep", "evaluate checkpoints across the noise grid");
  add_common(sweep, sweep_args, true);
  sweep->add_option("--checkpoint", sweep_ckpts,
                    "checkpoint to evaluate; repeat for more (first is tagged "
                    "constrained, second unconstrained)")
      ->required();

  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference checks for every op");
  grad->add_option("--instances", gc.instances, "random instances per op (default 100)");
  grad->add_option("--tol", gc.tol, "max relative error (default 1e-4)");
  grad->add_option("--gradcheck-seed", gc.seed, "rng seed for the check instances");
  grad->add_flag("--corrupt-relu", gc.corrupt_relu,
                 "fault-injection fixture: offset the relu gradient to prove the harness fails");

  CLI::App* ratio = app.add_subcommand("ratio-report", "layerwise descent-ratio statistics");
  add_common(ratio, ratio_args, true);
  ratio->add_option("--checkpoint", ratio_ckpt, "checkpoint to analyze")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const auto cfg = descent::load_config(train_args.config_path);
      const auto runs = descent::run_train(cfg, train_args.out_dir, pick_seeds(cfg, train_args.seed));
      for (const auto& r : runs) std::cout << "run " << r.dir << "\n";
      return 0;
    }
    if (sweep->parsed()) {
      const auto cfg = descent::load_config(sweep_args.config_path);
      const uint64_t seed = sweep_args.seed >= 0 ? static_cast<uint64_t>(sweep_args.seed) : cfg.seeds.front();
      descent::run_sweep(cfg, sweep_args.out_dir, seed, sweep_ckpts);
      std::cout << "sweep written to " << sweep_args.out_dir << "\n";
      return 0;
    }
    if (grad->parsed()) {
      return descent::run_gradcheck_report(gc, std::cout) ? 0 : 1;
    }
    if (ratio->parsed()) {
      const auto cfg = descent::load_config(ratio_args.config_path);
      const uint64_t seed = ratio_args.seed >= 0 ? static_cast<uint64_t>(ratio_args.seed) : cfg.seeds.front();
      descent::run_ratio_report(cfg, ratio_args.out_dir, seed, ratio_ckpt, std::cout);
      return 0;
    }
  } catch (const descent::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
