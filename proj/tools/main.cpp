#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "refldepth/image_io.hpp"

namespace {

using namespace refldepth;

// Flags override the JSON config file: the file is merged into the option
// struct first, then CLI11 assigns whatever was passed on the command line.
template <typename Options>
void preload_config(int argc, char** argv, Options& opts) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      opts.merge_json(io::read_text_file(argv[i + 1]));
      return;
    }
  }
}

int default_threads() {
  if (const char* env = std::getenv("REFLDEPTH_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "refldepth: reflection-aware self-supervised depth training on "
      "synthetic scenes"};
  app.require_subcommand(1);

  std::string config_path;  // consumed by preload_config

  cli::GenOptions gen;
  gen.threads = default_threads();
  preload_config(argc, argv, gen);
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen_cmd->add_option("--config", config_path, "JSON config file");
  gen_cmd->add_option("--preset", gen.preset,
                      "mirror-small | mirror-standard | mirror-standard-flat "
                      "| lambertian");
  gen_cmd->add_option("--scene", gen.scene_json_path,
                      "SceneSpec JSON file (overrides --preset)");
  gen_cmd->add_option("--out", gen.out, "Output dataset directory")
      ->required();
  gen_cmd->add_option("--frames", gen.frames, "Trajectory length override");
  gen_cmd->add_option("--baseline", gen.baseline,
                      "Horizontal baseline override (m)");
  gen_cmd->add_option("--delta-z", gen.virtual_offset,
                      "Virtual-plane offset override (m); 0 disables the "
                      "violation");
  gen_cmd->add_option("--seed", gen.texture_seed, "Texture seed override");
  gen_cmd->add_option("--smoothness", gen.smoothness,
                      "Texture smoothness override");
  gen_cmd->add_flag("--emit-gt-checkpoint", gen.emit_gt_checkpoint,
                    "Also write a ground-truth depth checkpoint");
  gen_cmd->add_option("--threads", gen.threads, "Worker threads");

  cli::TrainOptions train_opts;
  train_opts.threads = default_threads();
  preload_config(argc, argv, train_opts);
  auto* train_cmd =
      app.add_subcommand("train", "Optimize depth grids on a dataset");
  train_cmd->add_option("--config", config_path, "JSON config file");
  train_cmd->add_option("--dataset", train_opts.dataset, "Dataset directory")
      ->required();
  train_cmd->add_option("--out", train_opts.out, "Checkpoint directory")
      ->required();
  train_cmd->add_option("--mode", train_opts.mode, "photo | triplet");
  train_cmd->add_option("--mask-mode", train_opts.mask_mode,
                        "zero | one | auto");
  train_cmd->add_option("--iterations", train_opts.iterations, "Iterations");
  train_cmd->add_option("--lr", train_opts.learning_rate, "Learning rate");
  train_cmd->add_option("--lambda-smooth", train_opts.lambda_smooth,
                        "Smoothness weight");
  train_cmd->add_option("--init-depth", train_opts.init_depth,
                        "Initial depth of every grid (m)");
  auto* delta_opt = train_cmd->add_option(
      "--delta", train_opts.delta, "Fixed margin (disables adaptive)");
  train_cmd->add_option("--margin-scale", train_opts.margin_scale,
                        "Scale on the adaptive quartile margin");
  train_cmd->add_option("--freeze-mask-after", train_opts.freeze_mask_after,
                        "Freeze masks after this iteration (-1: never)");
  train_cmd->add_option("--seed", train_opts.seed, "Run seed (echoed)");
  train_cmd->add_option("--threads", train_opts.threads, "Worker threads");

  cli::DistillOptions distill_opts;
  distill_opts.threads = default_threads();
  preload_config(argc, argv, distill_opts);
  auto* distill_cmd = app.add_subcommand(
      "distill", "Train a student from two teacher checkpoints");
  distill_cmd->add_option("--config", config_path, "JSON config file");
  distill_cmd
      ->add_option("--dataset", distill_opts.dataset, "Dataset directory")
      ->required();
  distill_cmd
      ->add_option("--teacher-photo", distill_opts.teacher_photo,
                   "Photometric teacher checkpoint")
      ->required();
  distill_cmd
      ->add_option("--teacher-triplet", distill_opts.teacher_triplet,
                   "Reflection-aware teacher checkpoint")
      ->required();
  distill_cmd->add_option("--out", distill_opts.out, "Student output")
      ->required();
  distill_cmd->add_option("--iterations", distill_opts.iterations,
                          "Iterations");
  distill_cmd->add_option("--lr", distill_opts.learning_rate,
                          "Learning rate");
  auto* ddelta_opt = distill_cmd->add_option(
      "--delta", distill_opts.delta, "Fixed margin (disables adaptive)");
  distill_cmd->add_option("--margin-scale", distill_opts.margin_scale,
                          "Scale on the adaptive quartile margin");
  distill_cmd->add_flag("--add-photometric", distill_opts.add_photometric,
                        "Add the photometric term to the student loss");
  distill_cmd->add_flag("--dump-pseudo", distill_opts.dump_pseudo,
                        "Write fused pseudo-depth PFMs");
  distill_cmd->add_option("--seed", distill_opts.seed, "Run seed (echoed)");
  distill_cmd->add_option("--threads", distill_opts.threads,
                          "Worker threads");

  cli::EvalOptions eval_opts;
  eval_opts.threads = default_threads();
  preload_config(argc, argv, eval_opts);
  auto* eval_cmd =
      app.add_subcommand("eval", "Evaluate a checkpoint against ground truth");
  eval_cmd->add_option("--config", config_path, "JSON config file");
  eval_cmd
      ->add_option("--checkpoint", eval_opts.checkpoint,
                   "Checkpoint directory")
      ->required();
  eval_cmd->add_option("--dataset", eval_opts.dataset, "Dataset directory")
      ->required();
  eval_cmd->add_option("--out", eval_opts.out,
                       "Optional directory for metrics.json");
  eval_cmd->add_option("--threads", eval_opts.threads, "Worker threads");

  cli::MaskmapOptions mask_opts;
  mask_opts.threads = default_threads();
  preload_config(argc, argv, mask_opts);
  auto* mask_cmd = app.add_subcommand(
      "maskmap", "Export the reflective mask of one training pair");
  mask_cmd->add_option("--config", config_path, "JSON config file");
  mask_cmd
      ->add_option("--checkpoint", mask_opts.checkpoint,
                   "Checkpoint directory")
      ->required();
  mask_cmd->add_option("--dataset", mask_opts.dataset, "Dataset directory")
      ->required();
  mask_cmd->add_option("--out", mask_opts.out, "Output directory")
      ->required();
  mask_cmd->add_option("--pair", mask_opts.pair_index, "Training pair index");
  auto* mdelta_opt = mask_cmd->add_option(
      "--delta", mask_opts.delta, "Fixed margin (disables adaptive)");
  mask_cmd->add_option("--margin-scale", mask_opts.margin_scale,
                       "Scale on the adaptive quartile margin");
  mask_cmd->add_option("--threads", mask_opts.threads, "Worker threads");

  cli::GradcheckOptions grad_opts;
  preload_config(argc, argv, grad_opts);
  auto* grad_cmd = app.add_subcommand(
      "gradcheck",
      "Check analytic gradients of the full objectives against central "
      "differences");
  grad_cmd->add_option("--config", config_path, "JSON config file");
  grad_cmd->add_option("--seed", grad_opts.seed, "Base seed");
  grad_cmd->add_option("--count", grad_opts.count, "Number of instances");
  grad_cmd->add_option("--tolerance", grad_opts.tolerance,
                       "Max relative error");
  grad_cmd
      ->add_flag("--inject-bug", grad_opts.inject_bug,
                 "Corrupt one gradient entry (negative control)")
      ->group("");  // hidden from --help

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) return cli::cmd_gen(gen);
    if (train_cmd->parsed()) {
      if (delta_opt->count() > 0) train_opts.adaptive_delta = false;
      return cli::cmd_train(train_opts);
    }
    if (distill_cmd->parsed()) {
      if (ddelta_opt->count() > 0) distill_opts.adaptive_delta = false;
      return cli::cmd_distill(distill_opts);
    }
    if (eval_cmd->parsed()) return cli::cmd_eval(eval_opts);
    if (mask_cmd->parsed()) {
      if (mdelta_opt->count() > 0) mask_opts.adaptive_delta = false;
      return cli::cmd_maskmap(mask_opts);
    }
    if (grad_cmd->parsed()) return cli::cmd_gradcheck(grad_opts);
  } catch (const std::exception& e) {
    std::cerr << "refldepth: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
