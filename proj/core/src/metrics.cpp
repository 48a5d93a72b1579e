#include "refldepth/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace refldepth::metrics {

std::string DepthMetrics::to_json() const {
  nlohmann::json j{{"abs_rel", abs_rel}, {"sq_rel", sq_rel},
                   {"rmse", rmse},       {"rmse_log", rmse_log},
                   {"a1", a1},           {"a2", a2},
                   {"a3", a3}};
  return j.dump();
}

DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt,
                           const Tensor& valid, double d_min, double d_max) {
  if (!pred.same_shape(gt) || !pred.same_shape(valid)) {
    throw std::invalid_argument("depth_metrics: shape mismatch " +
                                pred.shape_string() + " / " +
                                gt.shape_string() + " / " +
                                valid.shape_string());
  }
  double sum_abs = 0.0, sum_sq = 0.0, sum_se = 0.0, sum_sle = 0.0;
  std::size_t n = 0, c1 = 0, c2 = 0, c3 = 0;
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (valid[i] == 0.0f) continue;
    if (!(gt[i] > 0.0f)) {
      throw std::invalid_argument(
          "depth_metrics: non-positive ground truth on a valid pixel");
    }
    const double p = pred[i];
    const double g = std::min(std::max(static_cast<double>(gt[i]), d_min), d_max);
    const double d = p - g;
    sum_abs += std::fabs(d) / g;
    sum_sq += d * d / g;
    sum_se += d * d;
    const double dl = std::log(p) - std::log(g);
    sum_sle += dl * dl;
    const double ratio = std::max(p / g, g / p);
    if (ratio < t1) ++c1;
    if (ratio < t2) ++c2;
    if (ratio < t3) ++c3;
    ++n;
  }
  if (n == 0) {
    throw std::invalid_argument("depth_metrics: empty valid set");
  }
  DepthMetrics m;
  const double dn = static_cast<double>(n);
  m.abs_rel = sum_abs / dn;
  m.sq_rel = sum_sq / dn;
  m.rmse = std::sqrt(sum_se / dn);
  m.rmse_log = std::sqrt(sum_sle / dn);
  m.a1 = static_cast<double>(c1) / dn;
  m.a2 = static_cast<double>(c2) / dn;
  m.a3 = static_cast<double>(c3) / dn;
  return m;
}

RegionMetrics region_split(const Tensor& pred, const Tensor& gt,
                           const Tensor& valid, const Tensor& gt_reflective,
                           double d_min, double d_max) {
  if (!valid.same_shape(gt_reflective)) {
    throw std::invalid_argument("region_split: validity shape " +
                                valid.shape_string() + " vs mask " +
                                gt_reflective.shape_string());
  }
  Tensor refl(valid.height(), valid.width(), valid.channels());
  Tensor nonrefl(valid.height(), valid.width(), valid.channels());
  std::size_t n_refl = 0, n_non = 0;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid[i] == 0.0f) continue;
    if (gt_reflective[i] != 0.0f) {
      refl[i] = 1.0f;
      ++n_refl;
    } else {
      nonrefl[i] = 1.0f;
      ++n_non;
    }
  }
  RegionMetrics out;
  if (n_refl > 0) {
    out.reflective = depth_metrics(pred, gt, refl, d_min, d_max);
  }
  if (n_non > 0) {
    out.non_reflective = depth_metrics(pred, gt, nonrefl, d_min, d_max);
  }
  return out;
}

double mask_iou(const Tensor& mask, const Tensor& gt_mask) {
  if (!mask.same_shape(gt_mask)) {
    throw std::invalid_argument("mask_iou: shape " + mask.shape_string() +
                                " vs " + gt_mask.shape_string());
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const bool a = mask[i] != 0.0f;
    const bool b = gt_mask[i] != 0.0f;
    if (a && b) ++inter;
    if (a || b) ++uni;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace refldepth::metrics
