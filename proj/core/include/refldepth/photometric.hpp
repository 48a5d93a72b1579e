#pragma once

#include <span>
#include <utility>

#include "refldepth/autodiff.hpp"
#include "refldepth/geometry.hpp"
#include "refldepth/tensor.hpp"

namespace refldepth::photo {

struct LossConfig {
  float alpha_ssim = 0.85f;  // weight of the (1 - SSIM)/2 term
  float alpha_l1 = 0.15f;    // weight of the per-channel mean |a - b|
  float ssim_c1 = 1e-4f;     // 0.01^2 on [0,1] images
  float ssim_c2 = 9e-4f;     // 0.03^2

  void validate() const;
};

// Per-pixel SSIM from 3x3 box-filter local statistics with replicate
// padding, averaged over channels. Range [-1, 1].
diff::Value ssim_map(diff::Value a, diff::Value b, const LossConfig& cfg);
Tensor ssim(const Tensor& a, const Tensor& b, const LossConfig& cfg);

// Photometric error map: mask * (a_s * (1 - SSIM)/2 + a_1 * mean_ch|t - s|).
// Masked pixels are exactly zero.
diff::Value error_map(diff::Value target, diff::Value synthesized,
                      const Tensor& mask, const LossConfig& cfg);
Tensor photometric_error(const Tensor& target, const Tensor& synthesized,
                         const Tensor& mask, const LossConfig& cfg);

Tensor bilinear_sample(const Tensor& src, const geom::WarpField& field);

struct SynthesisNodes {
  diff::Value image;
  Tensor validity;
};

// Warp + bilinear sample of the source image into the reference view,
// differentiable w.r.t. the reference depth.
SynthesisNodes synthesize_view(diff::Graph& g, const Tensor& src_image,
                               diff::Value ref_depth,
                               const geom::Intrinsics& K,
                               const geom::Pose& ref_to_src);
std::pair<Tensor, Tensor> synthesize_view(const Tensor& src_image,
                                          const Tensor& ref_depth,
                                          const geom::Intrinsics& K,
                                          const geom::Pose& ref_to_src);

// Per-pixel mask that is 1 where the best synthesized error beats the best
// identity (unwarped) error, and 0 elsewhere or where no source is valid.
// The static-camera guard from the minimum-reprojection convention.
Tensor auto_mask(const Tensor& ref, std::span<const Tensor> sources,
                 std::span<const Tensor> synthesized,
                 std::span<const Tensor> validity, const LossConfig& cfg);

// Elementwise minimum across maps; ties go to the earliest map.
Tensor min_reprojection(std::span<const Tensor> maps);

}  // namespace refldepth::photo
