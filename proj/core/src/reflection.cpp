#include "refldepth/reflection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace refldepth::refl {

CrossViewNodes cross_view_errors(diff::Graph& g, const Tensor& ref_image,
                                 const Tensor& src_image,
                                 diff::Value ref_depth, diff::Value src_depth,
                                 const geom::Intrinsics& K,
                                 const geom::Pose& ref_to_src,
                                 const photo::LossConfig& cfg,
                                 bool use_principled_mask,
                                 const Tensor* support_override) {
  if (!ref_image.same_shape(src_image)) {
    throw std::invalid_argument("cross_view_errors: image shape " +
                                ref_image.shape_string() + " vs " +
                                src_image.shape_string());
  }
  if (!ref_to_src.is_valid()) {
    throw std::invalid_argument("cross_view_errors: pose is not rigid");
  }

  // I_src warped into the reference view with the reference depth,
  // I_ref warped into the source view with the source depth.
  photo::SynthesisNodes src_in_ref =
      photo::synthesize_view(g, src_image, ref_depth, K, ref_to_src);
  const geom::Pose src_to_ref = geom::invert_pose(ref_to_src);
  photo::SynthesisNodes ref_in_src =
      photo::synthesize_view(g, ref_image, src_depth, K, src_to_ref);

  Tensor support(ref_image.height(), ref_image.width(), 1);
  if (support_override) {
    support = *support_override;
  } else {
    for (std::size_t i = 0; i < support.size(); ++i) {
      support[i] = src_in_ref.validity[i] != 0.0f &&
                           ref_in_src.validity[i] != 0.0f
                       ? 1.0f
                       : 0.0f;
    }
    if (use_principled_mask) {
      const Tensor sources[] = {src_image};
      const Tensor synths[] = {src_in_ref.image.tensor()};
      const Tensor valids[] = {src_in_ref.validity};
      const Tensor guard =
          photo::auto_mask(ref_image, sources, synths, valids, cfg);
      for (std::size_t i = 0; i < support.size(); ++i) {
        if (guard[i] == 0.0f) support[i] = 0.0f;
      }
    }
  }

  diff::Value ref_const{&g, g.constant(ref_image)};
  CrossViewNodes out;
  out.pos_error = photo::error_map(ref_const, src_in_ref.image, support, cfg);
  out.neg_error =
      photo::error_map(ref_in_src.image, src_in_ref.image, support, cfg);
  out.validity = std::move(support);
  return out;
}

ErrorPair cross_view_errors(const Tensor& ref_image, const Tensor& src_image,
                            const Tensor& ref_depth, const Tensor& src_depth,
                            const geom::Intrinsics& K,
                            const geom::Pose& ref_to_src,
                            const photo::LossConfig& cfg,
                            bool use_principled_mask) {
  diff::Graph g;
  diff::Value dr{&g, g.constant(ref_depth)};
  diff::Value ds{&g, g.constant(src_depth)};
  return cross_view_errors(g, ref_image, src_image, dr, ds, K, ref_to_src,
                           cfg, use_principled_mask)
      .snapshot();
}

double quantile_linear(std::vector<double> values, double q) {
  if (values.empty()) {
    throw std::invalid_argument("quantile: empty sample");
  }
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= values.size()) return values.back();
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

MarginResult adaptive_margin(const ErrorPair& pair, double fallback_delta) {
  std::vector<double> pos, neg;
  pos.reserve(pair.validity.size());
  neg.reserve(pair.validity.size());
  for (std::size_t i = 0; i < pair.validity.size(); ++i) {
    if (pair.validity[i] != 0.0f) {
      pos.push_back(pair.pos_error[i]);
      neg.push_back(pair.neg_error[i]);
    }
  }
  if (pos.size() < 4) {
    return {std::max(0.0, fallback_delta), true};
  }
  const double q1_pos = quantile_linear(std::move(pos), 0.25);
  const double q3_neg = quantile_linear(std::move(neg), 0.75);
  return {std::max(0.0, q3_neg - q1_pos), false};
}

ReflectiveMask reflective_mask(const ErrorPair& pair, double delta) {
  if (!(delta >= 0.0)) {
    throw std::invalid_argument("reflective_mask: delta must be >= 0");
  }
  ReflectiveMask out;
  out.delta = delta;
  out.mask = Tensor(pair.validity.height(), pair.validity.width(), 1);
  for (std::size_t i = 0; i < out.mask.size(); ++i) {
    if (pair.validity[i] == 0.0f) continue;
    const double diff = static_cast<double>(pair.neg_error[i]) -
                        static_cast<double>(pair.pos_error[i]);
    out.mask[i] = diff <= delta ? 1.0f : 0.0f;
  }
  return out;
}

std::pair<diff::Value, diff::Value> triplet_loss(const CrossViewNodes& pair,
                                                 const ReflectiveMask& m) {
  if (!m.mask.same_shape(pair.validity)) {
    throw std::invalid_argument("triplet_loss: mask shape " +
                                m.mask.shape_string() + " vs validity " +
                                pair.validity.shape_string());
  }
  diff::Value hinge_branch =
      hinge(pair.pos_error - pair.neg_error + m.delta);
  diff::Value map = select(m.mask, hinge_branch, pair.pos_error);
  diff::Value scalar = masked_mean(map, pair.validity);
  return {map, scalar};
}

diff::Value multi_source_combine(std::span<const diff::Value> loss_maps,
                                 std::span<const Tensor> validities) {
  if (loss_maps.empty() || loss_maps.size() != validities.size()) {
    throw std::invalid_argument("multi_source_combine: empty or mismatched");
  }
  diff::Graph& g = loss_maps.front().graph();
  const Tensor& shape = loss_maps.front().tensor();

  // Pixels a source does not cover are pushed out of the running with a
  // large constant; they never survive the min on covered pixels.
  constexpr float kUncovered = 1e30f;
  std::vector<diff::Value> gated;
  gated.reserve(loss_maps.size());
  for (std::size_t s = 0; s < loss_maps.size(); ++s) {
    diff::Value big{&g, g.constant(Tensor::full(shape.height(), shape.width(),
                                                shape.channels(), kUncovered))};
    gated.push_back(select(validities[s], loss_maps[s], big));
  }
  diff::Value best = pixel_min(gated);

  Tensor any_valid(shape.height(), shape.width(), 1);
  for (std::size_t i = 0; i < any_valid.size(); ++i) {
    for (const Tensor& v : validities) {
      if (v[i] != 0.0f) {
        any_valid[i] = 1.0f;
        break;
      }
    }
  }
  return masked_mean(best, any_valid);
}

}  // namespace refldepth::refl
