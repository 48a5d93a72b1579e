#pragma once

#include <array>
#include <string>

#include "refldepth/autodiff.hpp"
#include "refldepth/tensor.hpp"

namespace refldepth::geom {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

struct Intrinsics {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;

  void validate(int width, int height) const;  // fx,fy > 0; c inside image
  std::string to_json() const;
  static Intrinsics from_json(const std::string& json);
};

// Rigid transform x -> R x + t, rotation row-major.
struct Pose {
  std::array<double, 9> rotation = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> translation = {0, 0, 0};

  static Pose identity() { return {}; }
  static Pose translation_only(double tx, double ty, double tz);

  Vec3 apply(const Vec3& p) const;
  bool is_valid(double tol = 1e-6) const;  // orthonormal, det +1
  std::string to_json() const;
  static Pose from_json(const std::string& json);
};

Pose invert_pose(const Pose& p);
// compose(a, b): apply b first, then a.
Pose compose(const Pose& a, const Pose& b);

// depth * K^-1 [u, v, 1]^T
Vec3 backproject(double u, double v, double depth, const Intrinsics& K);

struct Projection {
  double u = 0.0, v = 0.0, z = 0.0;
  bool valid = false;  // z > kMinProjectionDepth
};

inline constexpr double kMinProjectionDepth = 1e-6;

Projection project(const Intrinsics& K, const Vec3& X);

// Continuous source-image sample coordinates for every reference pixel,
// with per-pixel validity (in-bounds and in front of the camera).
struct WarpField {
  Tensor coords;    // h x w x 2, (u', v')
  Tensor validity;  // h x w x 1, {0, 1}
};

// Differentiable warp built on the tape; validity is a constant snapshot.
struct WarpNodes {
  diff::Value u;
  diff::Value v;
  Tensor validity;
};

WarpNodes warp_grid(diff::Graph& g, diff::Value depth, const Intrinsics& K,
                    const Pose& ref_to_src);

// Plain-tensor variant; evaluates the differentiable path on a scratch graph
// so both produce identical coordinates.
WarpField warp_grid(const Tensor& depth, const Intrinsics& K,
                    const Pose& ref_to_src);

}  // namespace refldepth::geom
