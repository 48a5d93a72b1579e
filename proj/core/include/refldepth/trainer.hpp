#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "refldepth/autodiff.hpp"
#include "refldepth/depth.hpp"
#include "refldepth/geometry.hpp"
#include "refldepth/photometric.hpp"
#include "refldepth/reflection.hpp"
#include "refldepth/tensor.hpp"

namespace refldepth::train {

// Per-pixel optimizable depth parameterization. Decoded depth always lies
// strictly inside (d_min, d_max).
struct DepthGridModel {
  Tensor logits;  // h x w x 1 free parameters
  float d_min = kMinDepth;
  float d_max = kMaxDepth;

  static DepthGridModel constant_depth(int height, int width, double depth);
};

diff::Value decode_depth(diff::Graph& g, diff::Value logits,
                         float d_min = kMinDepth, float d_max = kMaxDepth);
Tensor decode_depth(const DepthGridModel& model);

// Edge-aware first-order regularizer on mean-normalized disparity:
// mean(|dx d*| exp(-|dx I|) + |dy d*| exp(-|dy I|)).
diff::Value smoothness_term(diff::Value depth, const Tensor& image);
double smoothness_value(const Tensor& depth, const Tensor& image);

enum class LossMode { kPhoto, kTriplet };
enum class MaskMode { kZero, kOne, kAuto };

struct MarginConfig {
  bool adaptive = true;
  double fixed_delta = 0.05;  // used when not adaptive, and as the fallback
  // Multiplier on the adaptive Q3(neg) - Q1(pos) spread. 1.0 is the raw
  // quartile difference; the default sits below it so the mask only fires
  // on separations well under the population level.
  double scale = 0.7;
};

struct TrainConfig {
  int iterations = 2000;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double lambda_smooth = 1e-3;
  double init_depth = 2.5;
  LossMode mode = LossMode::kPhoto;
  MaskMode mask_mode = MaskMode::kAuto;
  MarginConfig margin;
  int freeze_mask_after = -1;  // < 0: recompute every iteration
  std::uint64_t seed = 0;      // echoed into logs; training is deterministic
  int threads = 1;
  photo::LossConfig loss;

  void validate() const;
};

struct StudentConfig {
  int iterations = 2000;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  MarginConfig margin;
  bool add_photometric = false;  // optional E+ term next to the log-depth loss
  std::uint64_t seed = 0;
  int threads = 1;
  photo::LossConfig loss;
};

struct Dataset {
  int width = 0;
  int height = 0;
  geom::Intrinsics intrinsics;
  int ref_index = 0;
  bool no_violation = false;
  std::vector<Tensor> images;
  std::vector<Tensor> gt_depth;       // empty tensors when absent
  std::vector<Tensor> gt_reflective;  // empty tensors when absent
  std::vector<geom::Pose> cam_to_world;

  std::size_t frame_count() const { return images.size(); }
  bool has_gt(std::size_t index) const {
    return index < gt_depth.size() && !gt_depth[index].empty();
  }
  geom::Pose relative(int ref, int src) const;  // reference -> source

  static Dataset load(const std::filesystem::path& dir);
};

// Ordered (reference, source) pairs: every frame serves as a reference
// against its trajectory neighbours, which anchors the per-frame source
// grids the cross-view term needs.
std::vector<std::pair<int, int>> training_pairs(const Dataset& data);

struct IterationStats {
  int iteration = 0;
  double loss = 0.0;
  std::vector<double> deltas;  // per training pair
  double reflective_fraction = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<DepthGridModel> grids;  // one per frame
  std::vector<IterationStats> log;
};

TrainResult train(const Dataset& data, const TrainConfig& cfg);

// Two-teacher distillation: the reflective mask comes from the
// triplet-trained teacher's depths on each pair, the pseudo depth fuses the
// teachers through it, and the student minimizes the absolute log-depth
// difference.
TrainResult train_student(const Dataset& data,
                          const std::vector<DepthGridModel>& teacher_photo,
                          const std::vector<DepthGridModel>& teacher_triplet,
                          const StudentConfig& cfg);

// Reflective masks and margins for every training pair at the given depths.
struct PairMask {
  int ref = 0;
  int src = 0;
  refl::ReflectiveMask mask;
  bool used_fallback = false;
};
std::vector<PairMask> pair_masks(const Dataset& data,
                                 const std::vector<DepthGridModel>& grids,
                                 const MarginConfig& margin,
                                 const photo::LossConfig& loss);

void save_checkpoint(const std::filesystem::path& dir,
                     const std::vector<DepthGridModel>& grids,
                     const std::string& metadata_json);
std::vector<DepthGridModel> load_checkpoint(const std::filesystem::path& dir);
std::string checkpoint_metadata(const std::filesystem::path& dir);

}  // namespace refldepth::train
