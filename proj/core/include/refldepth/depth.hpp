#pragma once

#include <cmath>

namespace refldepth {

// Training and evaluation depth range, meters.
inline constexpr float kMinDepth = 0.1f;
inline constexpr float kMaxDepth = 10.0f;

// Sigmoid-disparity decode: depth = 1 / (sigmoid(x) * (1/d_min - 1/d_max)
// + 1/d_max), always inside (d_min, d_max).
inline double decode_depth_scalar(double logit, double d_min = kMinDepth,
                                  double d_max = kMaxDepth) {
  const double s = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit))
                                : std::exp(logit) / (1.0 + std::exp(logit));
  return 1.0 / (s * (1.0 / d_min - 1.0 / d_max) + 1.0 / d_max);
}

// Inverse of decode_depth_scalar; depth must lie strictly inside the range.
inline double logit_for_depth(double depth, double d_min = kMinDepth,
                              double d_max = kMaxDepth) {
  const double s =
      (1.0 / depth - 1.0 / d_max) / (1.0 / d_min - 1.0 / d_max);
  return std::log(s / (1.0 - s));
}

}  // namespace refldepth
