#include "refldepth/geometry.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace refldepth::geom {

namespace {
using nlohmann::json;
}

void Intrinsics::validate(int width, int height) const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("Intrinsics: focal lengths must be positive");
  }
  if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
    throw std::invalid_argument("Intrinsics: principal point outside image");
  }
}

std::string Intrinsics::to_json() const {
  json j{{"fx", fx}, {"fy", fy}, {"cx", cx}, {"cy", cy}};
  return j.dump();
}

Intrinsics Intrinsics::from_json(const std::string& text) {
  const json j = json::parse(text);
  return Intrinsics{j.at("fx").get<double>(), j.at("fy").get<double>(),
                    j.at("cx").get<double>(), j.at("cy").get<double>()};
}

Pose Pose::translation_only(double tx, double ty, double tz) {
  Pose p;
  p.translation = {tx, ty, tz};
  return p;
}

Vec3 Pose::apply(const Vec3& p) const {
  const auto& r = rotation;
  const auto& t = translation;
  return {r[0] * p.x + r[1] * p.y + r[2] * p.z + t[0],
          r[3] * p.x + r[4] * p.y + r[5] * p.z + t[1],
          r[6] * p.x + r[7] * p.y + r[8] * p.z + t[2]};
}

bool Pose::is_valid(double tol) const {
  const auto& r = rotation;
  // R^T R == I
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r[k * 3 + i] * r[k * 3 + j];
      const double expected = i == j ? 1.0 : 0.0;
      if (std::fabs(dot - expected) > tol) return false;
    }
  }
  const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) -
                     r[1] * (r[3] * r[8] - r[5] * r[6]) +
                     r[2] * (r[3] * r[7] - r[4] * r[6]);
  if (std::fabs(det - 1.0) > tol) return false;
  for (double t : translation) {
    if (!std::isfinite(t)) return false;
  }
  return true;
}

std::string Pose::to_json() const {
  json j{{"rotation", rotation}, {"translation", translation}};
  return j.dump();
}

Pose Pose::from_json(const std::string& text) {
  const json j = json::parse(text);
  Pose p;
  const auto rot = j.at("rotation");
  const auto tr = j.at("translation");
  if (rot.size() != 9 || tr.size() != 3) {
    throw std::invalid_argument("Pose: expected 9 rotation + 3 translation");
  }
  for (int i = 0; i < 9; ++i) p.rotation[i] = rot[i].get<double>();
  for (int i = 0; i < 3; ++i) p.translation[i] = tr[i].get<double>();
  return p;
}

Pose invert_pose(const Pose& p) {
  Pose inv;
  const auto& r = p.rotation;
  inv.rotation = {r[0], r[3], r[6], r[1], r[4], r[7], r[2], r[5], r[8]};
  const auto& t = p.translation;
  inv.translation = {-(inv.rotation[0] * t[0] + inv.rotation[1] * t[1] +
                       inv.rotation[2] * t[2]),
                     -(inv.rotation[3] * t[0] + inv.rotation[4] * t[1] +
                       inv.rotation[5] * t[2]),
                     -(inv.rotation[6] * t[0] + inv.rotation[7] * t[1] +
                       inv.rotation[8] * t[2])};
  return inv;
}

Pose compose(const Pose& a, const Pose& b) {
  Pose c;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a.rotation[i * 3 + k] * b.rotation[k * 3 + j];
      c.rotation[i * 3 + j] = s;
    }
  }
  const Vec3 t = a.apply({b.translation[0], b.translation[1], b.translation[2]});
  c.translation = {t.x, t.y, t.z};
  return c;
}

Vec3 backproject(double u, double v, double depth, const Intrinsics& K) {
  if (!(depth > 0.0)) {
    throw std::invalid_argument("backproject: depth must be positive");
  }
  return {depth * (u - K.cx) / K.fx, depth * (v - K.cy) / K.fy, depth};
}

Projection project(const Intrinsics& K, const Vec3& X) {
  Projection p;
  p.z = X.z;
  if (X.z <= kMinProjectionDepth) {
    p.valid = false;
    p.u = 0.0;
    p.v = 0.0;
    return p;
  }
  p.u = K.fx * X.x / X.z + K.cx;
  p.v = K.fy * X.y / X.z + K.cy;
  p.valid = true;
  return p;
}

namespace {

bool is_identity(const Pose& p) {
  static const Pose id{};
  for (int i = 0; i < 9; ++i) {
    if (p.rotation[i] != id.rotation[i]) return false;
  }
  for (int i = 0; i < 3; ++i) {
    if (p.translation[i] != 0.0) return false;
  }
  return true;
}

// Sum of scaled terms, skipping exact-zero coefficients and using the node
// directly for coefficient 1.
diff::Value scaled_sum(diff::Graph& g, std::initializer_list<std::pair<diff::Value, double>> terms,
                       double offset) {
  diff::Value acc;
  for (const auto& [v, coef] : terms) {
    if (coef == 0.0) continue;
    diff::Value term = coef == 1.0 ? v : v * coef;
    acc = acc.valid() ? acc + term : term;
  }
  if (!acc.valid()) {
    return {&g, g.constant_scalar(offset)};
  }
  if (offset != 0.0) acc = acc + offset;
  return acc;
}

}  // namespace

WarpNodes warp_grid(diff::Graph& g, diff::Value depth, const Intrinsics& K,
                    const Pose& ref_to_src) {
  const Tensor& d = depth.tensor();
  if (d.channels() != 1) {
    throw std::invalid_argument("warp_grid: depth must be h x w x 1, got " +
                                d.shape_string());
  }
  const int h = d.height();
  const int w = d.width();
  K.validate(w, h);
  if (!ref_to_src.is_valid()) {
    throw std::invalid_argument("warp_grid: pose is not a rigid transform");
  }
  if (d.min_value() <= 0.0f) {
    throw std::invalid_argument("warp_grid: depth must be positive");
  }

  if (is_identity(ref_to_src)) {
    Tensor ugrid(h, w, 1), vgrid(h, w, 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        ugrid.at(y, x) = static_cast<float>(x);
        vgrid.at(y, x) = static_cast<float>(y);
      }
    }
    WarpNodes out;
    out.u = {&g, g.constant(std::move(ugrid))};
    out.v = {&g, g.constant(std::move(vgrid))};
    out.validity = Tensor::full(h, w, 1, 1.0f);
    return out;
  }

  // Back-projection directions (K^-1 [u v 1]) as constants.
  Tensor ax(h, w, 1), ay(h, w, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      ax.at(y, x) = static_cast<float>((x - K.cx) / K.fx);
      ay.at(y, x) = static_cast<float>((y - K.cy) / K.fy);
    }
  }
  diff::Value dir_x{&g, g.constant(std::move(ax))};
  diff::Value dir_y{&g, g.constant(std::move(ay))};

  diff::Value px = depth * dir_x;
  diff::Value py = depth * dir_y;
  diff::Value pz = depth;

  const auto& r = ref_to_src.rotation;
  const auto& t = ref_to_src.translation;
  diff::Value qx = scaled_sum(g, {{px, r[0]}, {py, r[1]}, {pz, r[2]}}, t[0]);
  diff::Value qy = scaled_sum(g, {{px, r[3]}, {py, r[4]}, {pz, r[5]}}, t[1]);
  diff::Value qz = scaled_sum(g, {{px, r[6]}, {py, r[7]}, {pz, r[8]}}, t[2]);

  const bool z_preserved =
      r[6] == 0.0 && r[7] == 0.0 && r[8] == 1.0 && t[2] == 0.0;
  diff::Value z_safe = qz;
  if (!z_preserved) {
    // max(z, eps) keeps behind-camera pixels finite; they are masked off.
    const double eps = kMinProjectionDepth;
    z_safe = hinge(qz - eps) + eps;
  }

  diff::Value uc = (qx / z_safe) * K.fx + K.cx;
  diff::Value vc = (qy / z_safe) * K.fy + K.cy;

  const Tensor& zt = qz.tensor();
  const Tensor& ut = uc.tensor();
  const Tensor& vt = vc.tensor();
  Tensor validity(h, w, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float z = zt.at(y, x);
      const float u = ut.at(y, x);
      const float v = vt.at(y, x);
      const bool ok = z > static_cast<float>(kMinProjectionDepth) &&
                      u >= 0.0f && u <= static_cast<float>(w - 1) &&
                      v >= 0.0f && v <= static_cast<float>(h - 1);
      validity.at(y, x) = ok ? 1.0f : 0.0f;
    }
  }

  return {uc, vc, std::move(validity)};
}

WarpField warp_grid(const Tensor& depth, const Intrinsics& K,
                    const Pose& ref_to_src) {
  diff::Graph g;
  diff::Value d{&g, g.constant(depth)};
  WarpNodes nodes = warp_grid(g, d, K, ref_to_src);
  const Tensor& ut = nodes.u.tensor();
  const Tensor& vt = nodes.v.tensor();
  WarpField field;
  field.coords = Tensor(depth.height(), depth.width(), 2);
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      field.coords.at(y, x, 0) = ut.at(y, x);
      field.coords.at(y, x, 1) = vt.at(y, x);
    }
  }
  field.validity = std::move(nodes.validity);
  return field;
}

}  // namespace refldepth::geom
