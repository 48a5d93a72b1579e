#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace refldepth::cli {

// Each command returns a process exit code: 0 iff its postcondition held.
// Diagnostics go to stderr, machine-readable output to files and stdout.
// Every command echoes its fully resolved configuration into the output
// directory as resolved_config.json.

struct GenOptions {
  std::string preset = "mirror-standard";
  std::string scene_json_path;  // optional SceneSpec JSON; overrides preset
  std::filesystem::path out;
  int frames = -1;            // <0: keep preset trajectory
  double baseline = -1.0;     // <0: keep
  double virtual_offset = -1.0;
  long long texture_seed = -1;
  int smoothness = -1;
  bool emit_gt_checkpoint = false;
  int threads = 1;

  std::string to_json() const;
  void merge_json(const std::string& text);
};
int cmd_gen(const GenOptions& opts);

struct TrainOptions {
  std::filesystem::path dataset;
  std::filesystem::path out;
  std::string mode = "photo";       // photo | triplet
  std::string mask_mode = "auto";   // zero | one | auto
  int iterations = 2000;
  double learning_rate = 1e-2;
  double lambda_smooth = 1e-3;
  double init_depth = 2.5;
  bool adaptive_delta = true;       // --delta sets a fixed margin instead
  double delta = 0.05;
  double margin_scale = 0.7;
  int freeze_mask_after = -1;
  std::uint64_t seed = 0;
  int threads = 1;

  std::string to_json() const;
  void merge_json(const std::string& text);
};
int cmd_train(const TrainOptions& opts);

struct DistillOptions {
  std::filesystem::path dataset;
  std::filesystem::path teacher_photo;    // photometric-only teacher
  std::filesystem::path teacher_triplet;  // reflection-aware teacher
  std::filesystem::path out;
  int iterations = 2000;
  double learning_rate = 1e-2;
  bool adaptive_delta = true;
  double delta = 0.05;
  double margin_scale = 0.7;
  bool add_photometric = false;
  bool dump_pseudo = false;
  std::uint64_t seed = 0;
  int threads = 1;

  std::string to_json() const;
  void merge_json(const std::string& text);
};
int cmd_distill(const DistillOptions& opts);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path dataset;
  std::filesystem::path out;  // optional directory for metrics.json
  int threads = 1;

  std::string to_json() const;
  void merge_json(const std::string& text);
};
int cmd_eval(const EvalOptions& opts);

struct MaskmapOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path dataset;
  std::filesystem::path out;  // directory for the mask PGM
  int pair_index = 0;
  bool adaptive_delta = true;
  double delta = 0.05;
  double margin_scale = 0.7;
  int threads = 1;

  std::string to_json() const;
  void merge_json(const std::string& text);
};
int cmd_maskmap(const MaskmapOptions& opts);

struct GradcheckOptions {
  std::uint32_t seed = 1;
  int count = 20;
  double tolerance = 1e-3;
  bool inject_bug = false;  // negative-control hook for the test harness

  std::string to_json() const;
  void merge_json(const std::string& text);
};
int cmd_gradcheck(const GradcheckOptions& opts);

}  // namespace refldepth::cli
