#pragma once

#include <utility>

#include "refldepth/autodiff.hpp"
#include "refldepth/reflection.hpp"
#include "refldepth/tensor.hpp"

namespace refldepth::distill {

// Depth maps of the two teachers for one reference frame together with the
// reflective mask that drives the fusion.
struct TeacherPair {
  Tensor depth_triplet;  // reflection-aware teacher
  Tensor depth_photo;    // photometric-only teacher
  refl::ReflectiveMask mask;
};

// Hard per-pixel fusion: mask ? depth_triplet : depth_photo.
Tensor fuse_pseudo_depth(const TeacherPair& teachers);

// Per-pixel |log d_hat - log d_pse| and its mean over all pixels.
// Both depths must be strictly positive.
std::pair<diff::Value, diff::Value> rkd_loss(diff::Value d_hat,
                                             const Tensor& d_pse);
std::pair<Tensor, double> rkd_loss(const Tensor& d_hat, const Tensor& d_pse);

}  // namespace refldepth::distill
