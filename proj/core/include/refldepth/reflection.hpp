#pragma once

#include <span>
#include <utility>

#include "refldepth/autodiff.hpp"
#include "refldepth/geometry.hpp"
#include "refldepth/photometric.hpp"
#include "refldepth/tensor.hpp"

namespace refldepth::refl {

// Positive/negative photometric error maps of one (reference, source) pair.
// pos_error compares the synthesized reference view against the reference
// image (same viewpoint); neg_error compares the two cross-synthesized
// images index-by-index (different viewpoints). validity is the shared
// support: principled mask AND both warp validities. Invalid pixels carry 0
// in both maps and are excluded from statistics.
struct ErrorPair {
  Tensor pos_error;
  Tensor neg_error;
  Tensor validity;
};

struct ReflectiveMask {
  Tensor mask;         // {0,1}; forced to 0 wherever validity is 0
  double delta = 0.0;  // margin used to build it
};

struct CrossViewNodes {
  diff::Value pos_error;
  diff::Value neg_error;
  Tensor validity;

  ErrorPair snapshot() const {
    return {pos_error.tensor(), neg_error.tensor(), validity};
  }
};

// Builds both synthesized views and the error pair on the tape,
// differentiable w.r.t. both depth fields. With use_principled_mask the
// single-pair static-scene guard is folded into the validity.
// support_override replaces the internally computed validity; gradient
// checks use it to hold the support fixed across probes.
CrossViewNodes cross_view_errors(diff::Graph& g, const Tensor& ref_image,
                                 const Tensor& src_image,
                                 diff::Value ref_depth, diff::Value src_depth,
                                 const geom::Intrinsics& K,
                                 const geom::Pose& ref_to_src,
                                 const photo::LossConfig& cfg,
                                 bool use_principled_mask = true,
                                 const Tensor* support_override = nullptr);

ErrorPair cross_view_errors(const Tensor& ref_image, const Tensor& src_image,
                            const Tensor& ref_depth, const Tensor& src_depth,
                            const geom::Intrinsics& K,
                            const geom::Pose& ref_to_src,
                            const photo::LossConfig& cfg,
                            bool use_principled_mask = true);

struct MarginResult {
  double delta = 0.0;
  bool used_fallback = false;
};

// delta = max(0, Q3(neg) - Q1(pos)) over valid pixels, quartiles by linear
// interpolation on the sorted values. Falls back to `fallback_delta` when
// fewer than 4 pixels are valid.
MarginResult adaptive_margin(const ErrorPair& pair, double fallback_delta = 0.0);

// Inclusive threshold: mask = 1 iff neg - pos <= delta, 0 on invalid pixels.
ReflectiveMask reflective_mask(const ErrorPair& pair, double delta);

// Per-pixel loss map
//   mask * hinge(pos - neg + delta) + (1 - mask) * pos
// and its mean over valid pixels. The mask and delta are constants; on
// mask == 0 pixels the map equals pos_error bit-exactly.
std::pair<diff::Value, diff::Value> triplet_loss(const CrossViewNodes& pair,
                                                 const ReflectiveMask& m);

// Per-pixel minimum of per-source loss maps over the sources valid at each
// pixel, then mean over pixels covered by at least one source.
diff::Value multi_source_combine(std::span<const diff::Value> loss_maps,
                                 std::span<const Tensor> validities);

double quantile_linear(std::vector<double> values, double q);  // sorts a copy

}  // namespace refldepth::refl
