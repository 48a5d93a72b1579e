#include "refldepth/photometric.hpp"

#include <limits>
#include <stdexcept>

namespace refldepth::photo {

void LossConfig::validate() const {
  if (alpha_ssim < 0.0f || alpha_l1 < 0.0f || alpha_ssim + alpha_l1 <= 0.0f) {
    throw std::invalid_argument(
        "LossConfig: weights must be non-negative with a positive sum");
  }
  if (ssim_c1 <= 0.0f || ssim_c2 <= 0.0f) {
    throw std::invalid_argument("LossConfig: SSIM stabilizers must be positive");
  }
}

diff::Value ssim_map(diff::Value a, diff::Value b, const LossConfig& cfg) {
  if (!a.tensor().same_shape(b.tensor())) {
    throw std::invalid_argument("ssim: shape " + a.tensor().shape_string() +
                                " vs " + b.tensor().shape_string());
  }
  const double c1 = cfg.ssim_c1;
  const double c2 = cfg.ssim_c2;

  diff::Value mu_a = box_filter3(a);
  diff::Value mu_b = box_filter3(b);
  diff::Value var_a = box_filter3(a * a) - mu_a * mu_a;
  diff::Value var_b = box_filter3(b * b) - mu_b * mu_b;
  diff::Value cov = box_filter3(a * b) - mu_a * mu_b;

  diff::Value num = (mu_a * mu_b * 2.0 + c1) * (cov * 2.0 + c2);
  diff::Value den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
  return channel_mean(num / den);
}

Tensor ssim(const Tensor& a, const Tensor& b, const LossConfig& cfg) {
  diff::Graph g;
  diff::Value va{&g, g.constant(a)};
  diff::Value vb{&g, g.constant(b)};
  return ssim_map(va, vb, cfg).tensor();
}

diff::Value error_map(diff::Value target, diff::Value synthesized,
                      const Tensor& mask, const LossConfig& cfg) {
  cfg.validate();
  const Tensor& tt = target.tensor();
  if (!tt.same_shape(synthesized.tensor())) {
    throw std::invalid_argument("photometric_error: shape " +
                                tt.shape_string() + " vs " +
                                synthesized.tensor().shape_string());
  }
  diff::Graph& g = target.graph();
  diff::Value structural = ssim_map(target, synthesized, cfg);
  diff::Value ssim_term = (structural * -1.0 + 1.0) * (0.5 * cfg.alpha_ssim);
  diff::Value l1_term =
      channel_mean(abs(target - synthesized)) * static_cast<double>(cfg.alpha_l1);
  diff::Value raw = ssim_term + l1_term;
  diff::Value m{&g, g.constant(mask)};
  return raw * m;
}

Tensor photometric_error(const Tensor& target, const Tensor& synthesized,
                         const Tensor& mask, const LossConfig& cfg) {
  diff::Graph g;
  diff::Value t{&g, g.constant(target)};
  diff::Value s{&g, g.constant(synthesized)};
  return error_map(t, s, mask, cfg).tensor();
}

Tensor bilinear_sample(const Tensor& src, const geom::WarpField& field) {
  diff::Graph g;
  const int h = field.coords.height();
  const int w = field.coords.width();
  Tensor u(h, w, 1), v(h, w, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      u.at(y, x) = field.coords.at(y, x, 0);
      v.at(y, x) = field.coords.at(y, x, 1);
    }
  }
  return g
      .value(g.bilinear(g.constant(src), g.constant(std::move(u)),
                        g.constant(std::move(v))))
      ;
}

SynthesisNodes synthesize_view(diff::Graph& g, const Tensor& src_image,
                               diff::Value ref_depth,
                               const geom::Intrinsics& K,
                               const geom::Pose& ref_to_src) {
  geom::WarpNodes warp = geom::warp_grid(g, ref_depth, K, ref_to_src);
  diff::Value src{&g, g.constant(src_image)};
  diff::Value sampled = bilinear(src, warp.u, warp.v);
  return {sampled, std::move(warp.validity)};
}

std::pair<Tensor, Tensor> synthesize_view(const Tensor& src_image,
                                          const Tensor& ref_depth,
                                          const geom::Intrinsics& K,
                                          const geom::Pose& ref_to_src) {
  diff::Graph g;
  diff::Value d{&g, g.constant(ref_depth)};
  SynthesisNodes nodes = synthesize_view(g, src_image, d, K, ref_to_src);
  return {nodes.image.tensor(), std::move(nodes.validity)};
}

Tensor auto_mask(const Tensor& ref, std::span<const Tensor> sources,
                 std::span<const Tensor> synthesized,
                 std::span<const Tensor> validity, const LossConfig& cfg) {
  if (sources.empty() || sources.size() != synthesized.size() ||
      sources.size() != validity.size()) {
    throw std::invalid_argument("auto_mask: empty or mismatched source lists");
  }
  const int h = ref.height();
  const int w = ref.width();
  const Tensor ones = Tensor::full(h, w, 1, 1.0f);

  std::vector<Tensor> synth_err, ident_err;
  synth_err.reserve(sources.size());
  ident_err.reserve(sources.size());
  for (std::size_t s = 0; s < sources.size(); ++s) {
    synth_err.push_back(photometric_error(ref, synthesized[s], ones, cfg));
    ident_err.push_back(photometric_error(ref, sources[s], ones, cfg));
  }

  Tensor mask(h, w, 1);
  constexpr float kInf = std::numeric_limits<float>::infinity();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float best_synth = kInf;
      float best_ident = kInf;
      bool any_valid = false;
      for (std::size_t s = 0; s < sources.size(); ++s) {
        if (validity[s].at(y, x) != 0.0f) {
          any_valid = true;
          best_synth = std::min(best_synth, synth_err[s].at(y, x));
        }
        best_ident = std::min(best_ident, ident_err[s].at(y, x));
      }
      mask.at(y, x) = any_valid && best_synth < best_ident ? 1.0f : 0.0f;
    }
  }
  return mask;
}

Tensor min_reprojection(std::span<const Tensor> maps) {
  if (maps.empty()) {
    throw std::invalid_argument("min_reprojection: empty list");
  }
  Tensor out = maps.front();
  for (std::size_t k = 1; k < maps.size(); ++k) {
    const Tensor& m = maps[k];
    if (!m.same_shape(out)) {
      throw std::invalid_argument("min_reprojection: shape " +
                                  m.shape_string() + " vs " +
                                  out.shape_string());
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (m[i] < out[i]) out[i] = m[i];
    }
  }
  return out;
}

}  // namespace refldepth::photo
