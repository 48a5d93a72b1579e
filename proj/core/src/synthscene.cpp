#include "refldepth/synthscene.hpp"

#include <atomic>
#include <cmath>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "refldepth/depth.hpp"
#include "refldepth/image_io.hpp"
#include "refldepth/parallel.hpp"

namespace refldepth::synth {

namespace {

using nlohmann::json;

constexpr double kDepthMargin = 0.05;

void box_blur_inplace(Tensor& t, int passes) {
  const int h = t.height();
  const int w = t.width();
  Tensor tmp(h, w, 1);
  for (int p = 0; p < passes; ++p) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int xm = x > 0 ? x - 1 : 0;
        const int xp = x < w - 1 ? x + 1 : w - 1;
        tmp.at(y, x) = static_cast<float>(
            (static_cast<double>(t.at(y, xm)) + t.at(y, x) + t.at(y, xp)) /
            3.0);
      }
    }
    for (int x = 0; x < w; ++x) {
      for (int y = 0; y < h; ++y) {
        const int ym = y > 0 ? y - 1 : 0;
        const int yp = y < h - 1 ? y + 1 : h - 1;
        t.at(y, x) = static_cast<float>(
            (static_cast<double>(tmp.at(ym, x)) + tmp.at(y, x) +
             tmp.at(yp, x)) /
            3.0);
      }
    }
  }
}

float sample_clamped(const Tensor& t, double u, double v) {
  const int w = t.width();
  const int h = t.height();
  const double uc = std::min(std::max(u, 0.0), static_cast<double>(w - 1));
  const double vc = std::min(std::max(v, 0.0), static_cast<double>(h - 1));
  const int x0 = static_cast<int>(uc);
  const int y0 = static_cast<int>(vc);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double du = uc - x0;
  const double dv = vc - y0;
  return static_cast<float>((1.0 - dv) * ((1.0 - du) * t.at(y0, x0) +
                                          du * t.at(y0, x1)) +
                            dv * ((1.0 - du) * t.at(y1, x0) +
                                  du * t.at(y1, x1)));
}

json pose_to_json(const geom::Pose& p) {
  return json{{"rotation", p.rotation}, {"translation", p.translation}};
}

geom::Pose pose_from_json(const json& j) {
  return geom::Pose::from_json(j.dump());
}

}  // namespace

void SceneSpec::validate() const {
  if (width < 8 || height < 8) {
    throw std::invalid_argument("SceneSpec: image must be at least 8x8");
  }
  intrinsics.validate(width, height);
  if (plane_depth < kMinDepth + kDepthMargin ||
      plane_depth + virtual_offset > kMaxDepth - kDepthMargin) {
    throw std::invalid_argument(
        "SceneSpec: plane and virtual depths must sit inside the depth range");
  }
  if (virtual_offset < 0.0) {
    throw std::invalid_argument("SceneSpec: virtual_offset must be >= 0");
  }
  if (has_mirror()) {
    if (mirror_rect[0] < 0.0 || mirror_rect[1] < 0.0 ||
        mirror_rect[2] > width - 1.0 || mirror_rect[3] > height - 1.0) {
      throw std::invalid_argument("SceneSpec: mirror_rect outside the image");
    }
  }
  if (texture_smoothness < 0) {
    throw std::invalid_argument("SceneSpec: texture_smoothness must be >= 0");
  }
  if (trajectory.empty()) {
    throw std::invalid_argument("SceneSpec: empty trajectory");
  }
  for (const auto& p : trajectory) {
    if (!p.is_valid()) {
      throw std::invalid_argument("SceneSpec: trajectory pose is not rigid");
    }
  }
  if (ref_index < 0 || ref_index >= static_cast<int>(trajectory.size())) {
    throw std::invalid_argument("SceneSpec: ref_index out of range");
  }
}

std::string SceneSpec::to_json() const {
  json traj = json::array();
  for (const auto& p : trajectory) traj.push_back(pose_to_json(p));
  json j{{"width", width},
         {"height", height},
         {"intrinsics", json::parse(intrinsics.to_json())},
         {"plane_depth", plane_depth},
         {"virtual_offset", virtual_offset},
         {"mirror_rect", mirror_rect},
         {"texture_seed", texture_seed},
         {"texture_smoothness", texture_smoothness},
         {"trajectory", traj},
         {"ref_index", ref_index}};
  return j.dump();
}

SceneSpec SceneSpec::from_json(const std::string& text) {
  const json j = json::parse(text);
  SceneSpec s;
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.intrinsics = geom::Intrinsics::from_json(j.at("intrinsics").dump());
  s.plane_depth = j.at("plane_depth").get<double>();
  s.virtual_offset = j.at("virtual_offset").get<double>();
  for (int i = 0; i < 4; ++i) s.mirror_rect[i] = j.at("mirror_rect")[i].get<double>();
  s.texture_seed = j.at("texture_seed").get<std::uint32_t>();
  s.texture_smoothness = j.at("texture_smoothness").get<int>();
  for (const auto& pj : j.at("trajectory")) s.trajectory.push_back(pose_from_json(pj));
  s.ref_index = j.at("ref_index").get<int>();
  return s;
}

Tensor make_texture(std::uint32_t seed, int smoothness, int height,
                    int width) {
  if (height < 8 || width < 8) {
    throw std::invalid_argument("make_texture: size must be at least 8x8");
  }
  if (smoothness < 0) {
    throw std::invalid_argument("make_texture: smoothness must be >= 0");
  }
  std::mt19937 rng(seed);
  auto draw_noise = [&] {
    Tensor t(height, width, 1);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double u = static_cast<double>(rng()) / 4294967296.0;
      t[i] = static_cast<float>(0.05 + 0.9 * u);
    }
    return t;
  };

  const double weights[3] = {0.5, 0.3, 0.2};
  const int radii[3] = {smoothness, smoothness * 2, smoothness * 4};
  Tensor out(height, width, 1);
  for (int o = 0; o < 3; ++o) {
    Tensor octave = draw_noise();
    box_blur_inplace(octave, radii[o]);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] += static_cast<float>(weights[o] * octave[i]);
    }
  }
  return out;
}

FrameSample render_frame(const SceneSpec& scene,
                         const geom::Pose& cam_to_world, int threads) {
  scene.validate();
  if (!cam_to_world.is_valid()) {
    throw std::invalid_argument("render_frame: pose is not rigid");
  }
  const int h = scene.height;
  const int w = scene.width;
  const geom::Intrinsics& K = scene.intrinsics;
  const double zp = scene.plane_depth;
  const double zv = scene.virtual_depth();

  // Texture margin: largest plane disparity over the trajectory plus blur
  // slack, so off-frame samples never clamp into visible content.
  double max_shift = 0.0;
  for (const auto& p : scene.trajectory) {
    const double tx = std::fabs(p.translation[0]) * K.fx;
    const double ty = std::fabs(p.translation[1]) * K.fy;
    max_shift = std::max(max_shift, std::max(tx, ty) / zp);
  }
  const int margin = static_cast<int>(std::ceil(max_shift)) + 8;

  const Tensor plane_tex[3] = {
      make_texture(scene.texture_seed + 0, scene.texture_smoothness,
                   h + 2 * margin, w + 2 * margin),
      make_texture(scene.texture_seed + 1, scene.texture_smoothness,
                   h + 2 * margin, w + 2 * margin),
      make_texture(scene.texture_seed + 2, scene.texture_smoothness,
                   h + 2 * margin, w + 2 * margin)};
  const std::uint32_t vseed = scene.texture_seed ^ 0x9E3779B9u;
  const Tensor virtual_tex[3] = {
      make_texture(vseed + 0, scene.texture_smoothness, h + 2 * margin,
                   w + 2 * margin),
      make_texture(vseed + 1, scene.texture_smoothness, h + 2 * margin,
                   w + 2 * margin),
      make_texture(vseed + 2, scene.texture_smoothness, h + 2 * margin,
                   w + 2 * margin)};

  FrameSample frame;
  frame.image = Tensor(h, w, 3);
  frame.gt_depth = Tensor(h, w, 1);
  frame.gt_reflective = Tensor(h, w, 1);
  frame.pose = cam_to_world;

  const auto& r = cam_to_world.rotation;
  const auto& t = cam_to_world.translation;
  std::atomic<bool> visible{true};

  parallel_rows(h, threads, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dx = (x - K.cx) / K.fx;
        const double dy = (y - K.cy) / K.fy;
        const double wx = r[0] * dx + r[1] * dy + r[2];
        const double wy = r[3] * dx + r[4] * dy + r[5];
        const double wz = r[6] * dx + r[7] * dy + r[8];
        if (wz <= 1e-9) {
          visible = false;
          continue;
        }
        const double s_plane = (zp - t[2]) / wz;
        if (s_plane <= 0.0) {
          visible = false;
          continue;
        }
        const double px = t[0] + s_plane * wx;
        const double py = t[1] + s_plane * wy;
        const double tex_u = K.fx * px / zp + K.cx;
        const double tex_v = K.fy * py / zp + K.cy;

        const bool mirror = scene.has_mirror() &&
                            tex_u >= scene.mirror_rect[0] &&
                            tex_u < scene.mirror_rect[2] &&
                            tex_v >= scene.mirror_rect[1] &&
                            tex_v < scene.mirror_rect[3];

        double su = tex_u, sv = tex_v;
        const Tensor* tex = plane_tex;
        if (mirror) {
          const double s_virt = (zv - t[2]) / wz;
          const double vx2 = t[0] + s_virt * wx;
          const double vy2 = t[1] + s_virt * wy;
          su = K.fx * vx2 / zv + K.cx;
          sv = K.fy * vy2 / zv + K.cy;
          tex = virtual_tex;
        }
        for (int ch = 0; ch < 3; ++ch) {
          frame.image.at(y, x, ch) =
              sample_clamped(tex[ch], su + margin, sv + margin);
        }
        frame.gt_depth.at(y, x) = static_cast<float>(s_plane);
        frame.gt_reflective.at(y, x) = mirror ? 1.0f : 0.0f;
      }
    }
  });

  if (!visible) {
    throw std::invalid_argument("render_frame: plane not visible from pose");
  }
  return frame;
}

void generate_sequence(const SceneSpec& scene,
                       const std::filesystem::path& out_dir, int threads) {
  scene.validate();
  if (scene.trajectory.size() < 2) {
    throw std::invalid_argument("generate_sequence: need at least 2 frames");
  }
  std::filesystem::create_directories(out_dir);

  json frames = json::array();
  char name[64];
  for (std::size_t i = 0; i < scene.trajectory.size(); ++i) {
    const FrameSample frame =
        render_frame(scene, scene.trajectory[i], threads);
    json entry;
    entry["index"] = i;
    std::snprintf(name, sizeof(name), "frame_%04zu.ppm", i);
    entry["image"] = name;
    io::write_ppm(out_dir / name, frame.image);
    std::snprintf(name, sizeof(name), "depth_%04zu.pfm", i);
    entry["depth"] = name;
    io::write_pfm(out_dir / name, frame.gt_depth);
    std::snprintf(name, sizeof(name), "refl_%04zu.pgm", i);
    entry["reflective"] = name;
    io::write_pgm(out_dir / name, frame.gt_reflective);
    entry["pose"] = pose_to_json(frame.pose);
    frames.push_back(std::move(entry));
  }

  json manifest;
  manifest["intrinsics"] = json::parse(scene.intrinsics.to_json());
  manifest["width"] = scene.width;
  manifest["height"] = scene.height;
  manifest["ref_index"] = scene.ref_index;
  manifest["no_violation"] = scene.no_violation();
  manifest["scene"] = json::parse(scene.to_json());
  manifest["frames"] = frames;
  io::write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

SceneSpec preset(const std::string& name) {
  SceneSpec s;
  if (name == "mirror-standard" || name == "lambertian" ||
      name == "mirror-standard-flat") {
    s.width = 128;
    s.height = 96;
    s.intrinsics = {110.0, 110.0, 63.5, 47.5};
    s.plane_depth = 2.0;
    s.virtual_offset = 1.0;
    s.mirror_rect = {40.0, 32.0, 88.0, 64.0};
    s.texture_seed = 7;
    s.texture_smoothness = 2;
    const double b = 0.15;
    s.trajectory = {geom::Pose::translation_only(-b, 0, 0),
                    geom::Pose::identity(),
                    geom::Pose::translation_only(b, 0, 0)};
    s.ref_index = 1;
    if (name == "lambertian") {
      s.mirror_rect = {0, 0, 0, 0};
      s.texture_seed = 13;
    }
    if (name == "mirror-standard-flat") {
      s.virtual_offset = 0.0;
    }
    return s;
  }
  if (name == "mirror-small") {
    s.width = 64;
    s.height = 48;
    s.intrinsics = {55.0, 55.0, 31.5, 23.5};
    s.plane_depth = 2.0;
    s.virtual_offset = 1.0;
    s.mirror_rect = {20.0, 16.0, 44.0, 32.0};
    s.texture_seed = 11;
    s.texture_smoothness = 2;
    s.trajectory = {geom::Pose::identity(),
                    geom::Pose::translation_only(0.3, 0, 0)};
    s.ref_index = 0;
    return s;
  }
  throw std::invalid_argument("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() {
  return {"mirror-small", "mirror-standard", "mirror-standard-flat",
          "lambertian"};
}

}  // namespace refldepth::synth
