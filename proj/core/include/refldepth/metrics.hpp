#pragma once

#include <optional>
#include <string>

#include "refldepth/tensor.hpp"

namespace refldepth::metrics {

// Standard depth-evaluation metrics over valid pixels. Ground truth is
// clamped to the evaluation range; predictions are not (they are
// range-bounded by construction). No median scaling, no flip averaging.
struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double a1 = 0.0;  // fraction with max(p/g, g/p) < 1.25
  double a2 = 0.0;  // ... < 1.25^2
  double a3 = 0.0;  // ... < 1.25^3

  std::string to_json() const;
};

DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt,
                           const Tensor& valid, double d_min, double d_max);

struct RegionMetrics {
  std::optional<DepthMetrics> reflective;
  std::optional<DepthMetrics> non_reflective;
};

// depth_metrics restricted to the reflective / non-reflective regions of
// gt_reflective (after intersecting with valid). An empty region is
// reported absent, not zero.
RegionMetrics region_split(const Tensor& pred, const Tensor& gt,
                           const Tensor& valid, const Tensor& gt_reflective,
                           double d_min, double d_max);

// |m AND gt| / |m OR gt|; 1 when both masks are empty.
double mask_iou(const Tensor& mask, const Tensor& gt_mask);

}  // namespace refldepth::metrics
