#include "refldepth/distill.hpp"

#include <stdexcept>

#include "refldepth/depth.hpp"

namespace refldepth::distill {

Tensor fuse_pseudo_depth(const TeacherPair& teachers) {
  const Tensor& tri = teachers.depth_triplet;
  const Tensor& ori = teachers.depth_photo;
  if (!tri.same_shape(ori) || !teachers.mask.mask.same_shape(tri)) {
    throw std::invalid_argument("fuse_pseudo_depth: shape mismatch " +
                                tri.shape_string() + " / " +
                                ori.shape_string() + " / " +
                                teachers.mask.mask.shape_string());
  }
  for (std::size_t i = 0; i < tri.size(); ++i) {
    if (tri[i] < kMinDepth || tri[i] > kMaxDepth || ori[i] < kMinDepth ||
        ori[i] > kMaxDepth) {
      throw std::invalid_argument(
          "fuse_pseudo_depth: teacher depth outside the valid range");
    }
  }
  Tensor out(tri.height(), tri.width(), tri.channels());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = teachers.mask.mask[i] != 0.0f ? tri[i] : ori[i];
  }
  return out;
}

std::pair<diff::Value, diff::Value> rkd_loss(diff::Value d_hat,
                                             const Tensor& d_pse) {
  const Tensor& dh = d_hat.tensor();
  if (!dh.same_shape(d_pse)) {
    throw std::invalid_argument("rkd_loss: shape " + dh.shape_string() +
                                " vs " + d_pse.shape_string());
  }
  if (dh.min_value() <= 0.0f || d_pse.min_value() <= 0.0f) {
    throw std::invalid_argument("rkd_loss: depths must be strictly positive");
  }
  diff::Graph& g = d_hat.graph();
  diff::Value target{&g, g.constant(d_pse)};
  diff::Value map = abs(log(d_hat) - log(target));
  return {map, mean(map)};
}

std::pair<Tensor, double> rkd_loss(const Tensor& d_hat, const Tensor& d_pse) {
  diff::Graph g;
  diff::Value dh{&g, g.constant(d_hat)};
  auto [map, scalar] = rkd_loss(dh, d_pse);
  return {map.tensor(), scalar.scalar()};
}

}  // namespace refldepth::distill
