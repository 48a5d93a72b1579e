#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "refldepth/image_io.hpp"
#include "refldepth/photometric.hpp"
#include "refldepth/reflection.hpp"
#include "refldepth/synthscene.hpp"
#include "test_support.hpp"

using namespace refldepth;

namespace {

std::filesystem::path temp_dir(const std::string& leaf) {
  const auto dir = std::filesystem::temp_directory_path() / "refldepth_scene" /
                   leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  return io::read_text_file(p);
}

float sample_at(const Tensor& img, double u, double v, int ch) {
  geom::WarpField f;
  f.coords = Tensor(1, 1, 2);
  f.coords.at(0, 0, 0) = static_cast<float>(u);
  f.coords.at(0, 0, 1) = static_cast<float>(v);
  f.validity = Tensor::full(1, 1, 1, 1.0f);
  return photo::bilinear_sample(img, f).at(0, 0, ch);
}

}  // namespace

TEST_SUITE("synthscene") {

TEST_CASE("make_texture determinism and range behavior") {
  const Tensor a = synth::make_texture(42, 2, 32, 40);
  const Tensor b = synth::make_texture(42, 2, 32, 40);
  CHECK(bitwise_equal(a, b));

  const Tensor raw = synth::make_texture(7, 0, 64, 64);
  const double mean = raw.sum() / static_cast<double>(raw.size());
  CHECK(mean > 0.3);
  CHECK(mean < 0.7);
  CHECK(raw.min_value() >= 0.05f);
  CHECK(raw.max_value() <= 0.95f);

  const Tensor flat = synth::make_texture(7, 64, 64, 64);
  CHECK(flat.max_value() - flat.min_value() < 0.05f);
}

TEST_CASE("mirror content moves with the virtual depth between views") {
  synth::SceneSpec spec = synth::preset("mirror-standard");
  const double baseline = 0.15;
  const auto frame0 = synth::render_frame(spec, geom::Pose::identity());
  const auto frameB =
      synth::render_frame(spec, geom::Pose::translation_only(baseline, 0, 0));

  const double plane_shift =
      spec.intrinsics.fx * baseline / spec.plane_depth;     // 8.25 px
  const double virtual_shift =
      spec.intrinsics.fx * baseline / spec.virtual_depth(); // 5.5 px

  // Non-mirror interior pixel: frameB(p) shows what frame0 shows at
  // p + plane_shift.
  double err_plane = 0.0, err_virtual_on_plane = 0.0;
  int n_plane = 0;
  // Mirror interior pixel: content follows the virtual disparity instead.
  double err_mirror_virtual = 0.0, err_mirror_plane = 0.0;
  int n_mirror = 0;
  for (int y = 8; y < spec.height - 8; ++y) {
    for (int x = 8; x < spec.width - 20; ++x) {
      const bool mirror = frameB.gt_reflective.at(y, x) != 0.0f;
      // Stay away from the rect boundary so displaced probes do not
      // straddle regions.
      const double interior_pad = 10.0;
      const double tex_u = x + plane_shift;
      const bool deep_inside =
          tex_u > spec.mirror_rect[0] + interior_pad &&
          tex_u < spec.mirror_rect[2] - interior_pad &&
          y > spec.mirror_rect[1] + interior_pad &&
          y < spec.mirror_rect[3] - interior_pad;
      const bool deep_outside =
          tex_u < spec.mirror_rect[0] - interior_pad ||
          tex_u > spec.mirror_rect[2] + interior_pad ||
          y < spec.mirror_rect[1] - interior_pad ||
          y > spec.mirror_rect[3] + interior_pad;
      for (int ch = 0; ch < 3; ++ch) {
        const float here = frameB.image.at(y, x, ch);
        const float at_plane = sample_at(frame0.image, x + plane_shift, y, ch);
        const float at_virtual =
            sample_at(frame0.image, x + virtual_shift, y, ch);
        if (mirror && deep_inside) {
          err_mirror_virtual += std::fabs(here - at_virtual);
          err_mirror_plane += std::fabs(here - at_plane);
        } else if (!mirror && deep_outside) {
          err_plane += std::fabs(here - at_plane);
          err_virtual_on_plane += std::fabs(here - at_virtual);
        }
      }
      if (mirror && deep_inside) ++n_mirror;
      if (!mirror && deep_outside) ++n_plane;
    }
  }
  REQUIRE(n_plane > 500);
  REQUIRE(n_mirror > 100);
  err_plane /= 3 * n_plane;
  err_virtual_on_plane /= 3 * n_plane;
  err_mirror_virtual /= 3 * n_mirror;
  err_mirror_plane /= 3 * n_mirror;

  CHECK(err_plane < 0.02);                        // correct correspondence
  CHECK(err_mirror_virtual < 0.02);               // mirror follows Zv
  CHECK(err_mirror_plane > 3.0 * err_mirror_virtual);
  CHECK(err_virtual_on_plane > 3.0 * err_plane);
}

TEST_CASE("zero virtual offset removes the violation") {
  synth::SceneSpec spec = synth::preset("mirror-standard-flat");
  REQUIRE(spec.no_violation());
  const double baseline = 0.15;
  const auto frame0 = synth::render_frame(spec, geom::Pose::identity());
  const auto frameB =
      synth::render_frame(spec, geom::Pose::translation_only(baseline, 0, 0));
  const double plane_shift = spec.intrinsics.fx * baseline / spec.plane_depth;
  double err = 0.0;
  int n = 0;
  for (int y = 8; y < spec.height - 8; ++y) {
    for (int x = 8; x < spec.width - 20; ++x) {
      if (frameB.gt_reflective.at(y, x) == 0.0f) continue;
      for (int ch = 0; ch < 3; ++ch) {
        err += std::fabs(frameB.image.at(y, x, ch) -
                         sample_at(frame0.image, x + plane_shift, y, ch));
      }
      ++n;
    }
  }
  REQUIRE(n > 100);
  CHECK(err / (3 * n) < 0.02);  // mirror pixels move exactly like the plane
}

TEST_CASE("ground-truth depth and mask invariants") {
  synth::SceneSpec spec = synth::preset("mirror-standard");
  const auto frame = synth::render_frame(spec, spec.trajectory[1]);
  CHECK(frame.gt_depth.min_value() >= kMinDepth);
  CHECK(frame.gt_depth.max_value() <= kMaxDepth);
  for (std::size_t i = 0; i < frame.gt_depth.size(); ++i) {
    CHECK(frame.gt_depth[i] == doctest::Approx(2.0).epsilon(1e-6));
  }

  // Reflective area matches the projected rectangle within a 1-pixel ring.
  const double rect_area = (spec.mirror_rect[2] - spec.mirror_rect[0]) *
                           (spec.mirror_rect[3] - spec.mirror_rect[1]);
  double area = 0.0;
  for (std::size_t i = 0; i < frame.gt_reflective.size(); ++i) {
    area += frame.gt_reflective[i];
  }
  const double perimeter = 2.0 * (spec.mirror_rect[2] - spec.mirror_rect[0] +
                                  spec.mirror_rect[3] - spec.mirror_rect[1]);
  CHECK(std::fabs(area - rect_area) <= perimeter + 4.0);
}

TEST_CASE("generate_sequence writes a complete deterministic dataset") {
  synth::SceneSpec spec = synth::preset("mirror-small");
  const auto dir_a = temp_dir("gen_a");
  const auto dir_b = temp_dir("gen_b");
  synth::generate_sequence(spec, dir_a);
  synth::generate_sequence(spec, dir_b);

  CHECK(std::filesystem::exists(dir_a / "manifest.json"));
  CHECK(std::filesystem::exists(dir_a / "frame_0001.ppm"));
  CHECK(std::filesystem::exists(dir_a / "depth_0001.pfm"));
  CHECK(std::filesystem::exists(dir_a / "refl_0001.pgm"));

  for (const auto& entry : std::filesystem::directory_iterator(dir_a)) {
    const auto name = entry.path().filename();
    CHECK(slurp(dir_a / name) == slurp(dir_b / name));
  }

  // Thread count must not change any byte.
  const auto dir_c = temp_dir("gen_c");
  synth::generate_sequence(spec, dir_c, 4);
  for (const auto& entry : std::filesystem::directory_iterator(dir_a)) {
    const auto name = entry.path().filename();
    CHECK(slurp(dir_a / name) == slurp(dir_c / name));
  }
}

TEST_CASE("rendered frames are consistent with the warp") {
  synth::SceneSpec spec = synth::preset("mirror-small");
  const auto dir = temp_dir("warp_consistency");
  synth::generate_sequence(spec, dir);

  const Tensor frame0 = io::read_ppm(dir / "frame_0000.ppm");
  const Tensor frame1 = io::read_ppm(dir / "frame_0001.ppm");
  const Tensor depth0 = io::read_pfm(dir / "depth_0000.pfm");
  const Tensor refl0 = io::read_pgm(dir / "refl_0000.pgm");

  const geom::Pose rel = geom::compose(
      geom::invert_pose(spec.trajectory[1]), spec.trajectory[0]);
  const auto [synth_img, validity] =
      photo::synthesize_view(frame1, depth0, spec.intrinsics, rel);

  double err = 0.0;
  int n = 0;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      if (validity.at(y, x) == 0.0f || refl0.at(y, x) != 0.0f) continue;
      for (int ch = 0; ch < 3; ++ch) {
        err += std::fabs(synth_img.at(y, x, ch) - frame0.at(y, x, ch));
        ++n;
      }
    }
  }
  REQUIRE(n > 1000);
  CHECK(err / n < 2e-2);
}

TEST_CASE("photometric constancy holds off-mirror and breaks on it") {
  // The premise: with ground-truth depth, the positive error is small on
  // Lambertian pixels and large on mirror pixels once the disparity gap
  // crosses ~2 px.
  synth::SceneSpec spec = synth::preset("mirror-standard");
  const double gap = spec.intrinsics.fx * 0.15 *
                     (1.0 / spec.plane_depth - 1.0 / spec.virtual_depth());
  REQUIRE(gap >= 2.0);

  const auto dir = temp_dir("constancy");
  synth::generate_sequence(spec, dir);
  const Tensor ref = io::read_ppm(dir / "frame_0001.ppm");
  const Tensor src = io::read_ppm(dir / "frame_0002.ppm");
  const Tensor depth = io::read_pfm(dir / "depth_0001.pfm");
  const Tensor refl = io::read_pgm(dir / "refl_0001.pgm");

  const geom::Pose rel = geom::compose(
      geom::invert_pose(spec.trajectory[2]), spec.trajectory[1]);
  const auto [synth_img, validity] =
      photo::synthesize_view(src, depth, spec.intrinsics, rel);
  const Tensor err = photo::photometric_error(ref, synth_img, validity, {});

  double on = 0.0, off = 0.0;
  int n_on = 0, n_off = 0;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      if (validity.at(y, x) == 0.0f) continue;
      if (refl.at(y, x) != 0.0f) {
        on += err.at(y, x);
        ++n_on;
      } else {
        off += err.at(y, x);
        ++n_off;
      }
    }
  }
  REQUIRE(n_on > 200);
  REQUIRE(n_off > 2000);
  on /= n_on;
  off /= n_off;
  CHECK(off < 0.02);
  CHECK(on > 3.0 * off);
}

TEST_CASE("scene validation rejects broken specs") {
  synth::SceneSpec spec = synth::preset("mirror-small");
  spec.plane_depth = 0.05;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

  synth::SceneSpec rect = synth::preset("mirror-small");
  rect.mirror_rect = {10, 10, 400, 20};
  CHECK_THROWS_AS(rect.validate(), std::invalid_argument);

  synth::SceneSpec spec2 = synth::preset("mirror-small");
  spec2.trajectory.clear();
  CHECK_THROWS_AS(synth::generate_sequence(spec2, temp_dir("bad")),
                  std::invalid_argument);
}

TEST_CASE("scene spec JSON round trip") {
  const synth::SceneSpec spec = synth::preset("mirror-standard");
  const synth::SceneSpec back = synth::SceneSpec::from_json(spec.to_json());
  CHECK(back.width == spec.width);
  CHECK(back.plane_depth == spec.plane_depth);
  CHECK(back.mirror_rect == spec.mirror_rect);
  CHECK(back.trajectory.size() == spec.trajectory.size());
  CHECK(back.ref_index == spec.ref_index);
}

}  // TEST_SUITE
