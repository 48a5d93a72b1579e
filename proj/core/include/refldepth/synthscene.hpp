#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "refldepth/geometry.hpp"
#include "refldepth/tensor.hpp"

namespace refldepth::synth {

// A fronto-parallel textured plane at plane_depth. Inside mirror_rect the
// plane shows a second texture placed at plane_depth + virtual_offset, so
// mirror content moves between views with the deeper (virtual) disparity
// while the surface ground truth stays at plane_depth. The rectangle is
// expressed in the plane-texture frame, which coincides with the pixel grid
// of an identity-pose camera.
struct SceneSpec {
  int width = 0;
  int height = 0;
  geom::Intrinsics intrinsics;
  double plane_depth = 2.0;
  double virtual_offset = 1.0;  // 0 renders the mirror without violation
  std::array<double, 4> mirror_rect{0, 0, 0, 0};  // u0, v0, u1, v1
  std::uint32_t texture_seed = 1;
  int texture_smoothness = 2;  // base box-blur passes per octave
  std::vector<geom::Pose> trajectory;  // camera-to-world
  int ref_index = 0;

  bool has_mirror() const {
    return mirror_rect[2] > mirror_rect[0] && mirror_rect[3] > mirror_rect[1];
  }
  bool no_violation() const { return !has_mirror() || virtual_offset == 0.0; }
  double virtual_depth() const { return plane_depth + virtual_offset; }

  void validate() const;
  std::string to_json() const;
  static SceneSpec from_json(const std::string& text);
};

struct FrameSample {
  Tensor image;          // h x w x 3, [0,1]
  Tensor gt_depth;       // h x w x 1, surface depth (mirror included)
  Tensor gt_reflective;  // h x w x 1, {0,1}
  geom::Pose pose;       // camera-to-world
};

// Band-limited positive texture in [0.05, 0.95]: three octaves of uniform
// PRNG noise box-blurred with radii smoothness * {1, 2, 4}. Identical
// output for identical arguments.
Tensor make_texture(std::uint32_t seed, int smoothness, int height, int width);

FrameSample render_frame(const SceneSpec& scene, const geom::Pose& cam_to_world,
                         int threads = 1);

// Renders the whole trajectory and writes frame_%04d.ppm, depth_%04d.pfm,
// refl_%04d.pgm plus manifest.json. Byte-identical across reruns.
void generate_sequence(const SceneSpec& scene,
                       const std::filesystem::path& out_dir, int threads = 1);

SceneSpec preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace refldepth::synth
