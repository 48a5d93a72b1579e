#include "refldepth/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

#include "refldepth/distill.hpp"
#include "refldepth/image_io.hpp"

namespace refldepth::train {

namespace {

using nlohmann::json;

Tensor and_masks(const Tensor& a, const Tensor& b) {
  Tensor out(a.height(), a.width(), 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a[i] != 0.0f && b[i] != 0.0f ? 1.0f : 0.0f;
  }
  return out;
}

refl::MarginResult resolve_delta(const refl::ErrorPair& pair,
                                 const MarginConfig& cfg) {
  if (!cfg.adaptive) {
    return {std::max(0.0, cfg.fixed_delta), false};
  }
  refl::MarginResult mr = refl::adaptive_margin(pair, cfg.fixed_delta);
  if (!mr.used_fallback) mr.delta *= cfg.scale;
  return mr;
}

refl::ReflectiveMask build_mask(const refl::ErrorPair& snapshot,
                                MaskMode mode, const MarginConfig& margin,
                                double* delta_out, bool* fallback_out) {
  refl::MarginResult mr{0.0, false};
  if (mode != MaskMode::kZero) {
    mr = resolve_delta(snapshot, margin);
  }
  if (delta_out) *delta_out = mr.delta;
  if (fallback_out) *fallback_out = mr.used_fallback;
  refl::ReflectiveMask m;
  switch (mode) {
    case MaskMode::kZero:
      m.mask = Tensor(snapshot.validity.height(), snapshot.validity.width(), 1);
      m.delta = 0.0;
      break;
    case MaskMode::kOne:
      m.mask = snapshot.validity;
      m.delta = mr.delta;
      break;
    case MaskMode::kAuto:
      m = refl::reflective_mask(snapshot, mr.delta);
      break;
  }
  return m;
}

struct AdamState {
  Tensor m;
  Tensor v;
};

void adam_step(Tensor& x, const Tensor& grad, AdamState& state, int step,
               double lr, double beta1, double beta2, double eps) {
  if (state.m.empty()) {
    state.m = Tensor(x.height(), x.width(), x.channels());
    state.v = Tensor(x.height(), x.width(), x.channels());
  }
  const double bc1 = 1.0 - std::pow(beta1, step);
  const double bc2 = 1.0 - std::pow(beta2, step);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = grad[i];
    const double m = beta1 * state.m[i] + (1.0 - beta1) * g;
    const double v = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    state.m[i] = static_cast<float>(m);
    state.v[i] = static_cast<float>(v);
    x[i] = static_cast<float>(
        x[i] - lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
  }
}

}  // namespace

DepthGridModel DepthGridModel::constant_depth(int height, int width,
                                              double depth) {
  DepthGridModel m;
  m.logits = Tensor::full(height, width, 1,
                          static_cast<float>(logit_for_depth(depth)));
  return m;
}

diff::Value decode_depth(diff::Graph& g, diff::Value logits, float d_min,
                         float d_max) {
  const double span = 1.0 / d_min - 1.0 / d_max;
  diff::Value inv_depth = sigmoid(logits) * span + 1.0 / d_max;
  diff::Value one{&g, g.constant_scalar(1.0)};
  return one / inv_depth;
}

Tensor decode_depth(const DepthGridModel& model) {
  diff::Graph g;
  diff::Value l{&g, g.constant(model.logits)};
  return decode_depth(g, l, model.d_min, model.d_max).tensor();
}

diff::Value smoothness_term(diff::Value depth, const Tensor& image) {
  const Tensor& d = depth.tensor();
  if (d.channels() != 1 || d.height() != image.height() ||
      d.width() != image.width()) {
    throw std::invalid_argument("smoothness_term: depth " + d.shape_string() +
                                " vs image " + image.shape_string());
  }
  diff::Graph& g = depth.graph();
  const int h = d.height();
  const int w = d.width();

  diff::Value one{&g, g.constant_scalar(1.0)};
  diff::Value disp = one / depth;
  diff::Value norm_disp = disp / mean(disp);

  Tensor ux(h, w, 1), uy(h, w, 1), vgrid(h, w, 1), ugrid(h, w, 1);
  Tensor wx(h, w, 1), wy(h, w, 1);
  const int c = image.channels();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int xn = std::min(x + 1, w - 1);
      const int yn = std::min(y + 1, h - 1);
      ugrid.at(y, x) = static_cast<float>(x);
      vgrid.at(y, x) = static_cast<float>(y);
      ux.at(y, x) = static_cast<float>(xn);
      uy.at(y, x) = static_cast<float>(yn);
      double gx = 0.0, gy = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        gx += std::fabs(static_cast<double>(image.at(y, xn, ch)) -
                        image.at(y, x, ch));
        gy += std::fabs(static_cast<double>(image.at(yn, x, ch)) -
                        image.at(y, x, ch));
      }
      wx.at(y, x) = static_cast<float>(std::exp(-gx / c));
      wy.at(y, x) = static_cast<float>(std::exp(-gy / c));
    }
  }

  diff::Value cu{&g, g.constant(std::move(ugrid))};
  diff::Value cv{&g, g.constant(std::move(vgrid))};
  diff::Value cux{&g, g.constant(std::move(ux))};
  diff::Value cuy{&g, g.constant(std::move(uy))};
  diff::Value shifted_x = bilinear(norm_disp, cux, cv);
  diff::Value shifted_y = bilinear(norm_disp, cu, cuy);

  diff::Value weight_x{&g, g.constant(std::move(wx))};
  diff::Value weight_y{&g, g.constant(std::move(wy))};
  diff::Value penalty = abs(shifted_x - norm_disp) * weight_x +
                        abs(shifted_y - norm_disp) * weight_y;
  return mean(penalty);
}

double smoothness_value(const Tensor& depth, const Tensor& image) {
  diff::Graph g;
  diff::Value d{&g, g.constant(depth)};
  return smoothness_term(d, image).scalar();
}

void TrainConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("TrainConfig: iterations < 1");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("TrainConfig: learning rate must be positive");
  }
  if (init_depth <= kMinDepth || init_depth >= kMaxDepth) {
    throw std::invalid_argument(
        "TrainConfig: init_depth must lie inside the depth range");
  }
  loss.validate();
}

geom::Pose Dataset::relative(int ref, int src) const {
  return geom::compose(geom::invert_pose(cam_to_world[src]),
                       cam_to_world[ref]);
}

Dataset Dataset::load(const std::filesystem::path& dir) {
  const json manifest = json::parse(io::read_text_file(dir / "manifest.json"));
  Dataset d;
  d.width = manifest.at("width").get<int>();
  d.height = manifest.at("height").get<int>();
  d.intrinsics = geom::Intrinsics::from_json(manifest.at("intrinsics").dump());
  d.ref_index = manifest.at("ref_index").get<int>();
  d.no_violation = manifest.value("no_violation", false);
  for (const auto& entry : manifest.at("frames")) {
    d.images.push_back(io::read_ppm(dir / entry.at("image").get<std::string>()));
    const auto depth_path = dir / entry.at("depth").get<std::string>();
    d.gt_depth.push_back(std::filesystem::exists(depth_path)
                             ? io::read_pfm(depth_path)
                             : Tensor());
    const auto refl_path = dir / entry.at("reflective").get<std::string>();
    d.gt_reflective.push_back(std::filesystem::exists(refl_path)
                                  ? io::read_pgm(refl_path)
                                  : Tensor());
    d.cam_to_world.push_back(
        geom::Pose::from_json(entry.at("pose").dump()));
  }
  if (d.images.size() < 2) {
    throw std::invalid_argument(dir.string() + ": dataset needs >= 2 frames");
  }
  for (const Tensor& img : d.images) {
    if (img.height() != d.height || img.width() != d.width) {
      throw std::invalid_argument(dir.string() + ": frame size mismatch");
    }
  }
  if (d.ref_index < 0 ||
      d.ref_index >= static_cast<int>(d.images.size())) {
    throw std::invalid_argument(dir.string() + ": ref_index out of range");
  }
  return d;
}

std::vector<std::pair<int, int>> training_pairs(const Dataset& data) {
  std::vector<std::pair<int, int>> pairs;
  const int n = static_cast<int>(data.frame_count());
  for (int r = 0; r < n; ++r) {
    if (r - 1 >= 0) pairs.emplace_back(r, r - 1);
    if (r + 1 < n) pairs.emplace_back(r, r + 1);
  }
  return pairs;
}

namespace {

struct PairTerm {
  diff::Value map;
  Tensor validity;
  refl::ReflectiveMask mask_used;
  double delta = 0.0;
  std::size_t flagged = 0;
  std::size_t valid_count = 0;
};

// One training pair of the photometric / triplet objective. In photo mode
// the negative branch is skipped but the pair support (both warp
// validities and the static guard) is built identically, so the photo loss
// map matches the triplet map under a zeroed mask bit for bit.
PairTerm build_pair_term(diff::Graph& g, const Dataset& data,
                         const std::vector<diff::Value>& depths, int r, int s,
                         const TrainConfig& cfg,
                         const refl::ReflectiveMask* frozen) {
  const geom::Pose rel = data.relative(r, s);
  PairTerm term;
  if (cfg.mode == LossMode::kPhoto) {
    photo::SynthesisNodes synth =
        photo::synthesize_view(g, data.images[s], depths[r], data.intrinsics,
                               rel);
    geom::WarpNodes back = geom::warp_grid(g, depths[s], data.intrinsics,
                                           geom::invert_pose(rel));
    Tensor support = and_masks(synth.validity, back.validity);
    const Tensor sources[] = {data.images[s]};
    const Tensor synths[] = {synth.image.tensor()};
    const Tensor valids[] = {synth.validity};
    support = and_masks(support, photo::auto_mask(data.images[r], sources,
                                                  synths, valids, cfg.loss));
    diff::Value ref_const{&g, g.constant(data.images[r])};
    term.map = photo::error_map(ref_const, synth.image, support, cfg.loss);
    term.validity = std::move(support);
  } else {
    refl::CrossViewNodes cross = refl::cross_view_errors(
        g, data.images[r], data.images[s], depths[r], depths[s],
        data.intrinsics, rel, cfg.loss, true);
    refl::ReflectiveMask mask;
    if (frozen) {
      mask = *frozen;
      term.delta = mask.delta;
    } else {
      mask = build_mask(cross.snapshot(), cfg.mask_mode, cfg.margin,
                        &term.delta, nullptr);
    }
    auto [map, scalar] = refl::triplet_loss(cross, mask);
    (void)scalar;
    term.map = map;
    term.validity = cross.validity;
    for (std::size_t i = 0; i < mask.mask.size(); ++i) {
      if (mask.mask[i] != 0.0f) ++term.flagged;
    }
    term.mask_used = std::move(mask);
  }
  for (std::size_t i = 0; i < term.validity.size(); ++i) {
    if (term.validity[i] != 0.0f) ++term.valid_count;
  }
  return term;
}

}  // namespace

TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto pairs = training_pairs(data);
  if (pairs.empty()) {
    throw std::invalid_argument("train: dataset has no trainable pairs");
  }
  const int n_frames = static_cast<int>(data.frame_count());

  TrainResult result;
  result.grids.reserve(n_frames);
  for (int f = 0; f < n_frames; ++f) {
    result.grids.push_back(
        DepthGridModel::constant_depth(data.height, data.width,
                                       cfg.init_depth));
  }
  std::vector<AdamState> adam(n_frames);
  std::vector<refl::ReflectiveMask> frozen(pairs.size());
  bool have_frozen = false;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const auto tick = std::chrono::steady_clock::now();
    diff::Graph g(cfg.threads);

    std::vector<diff::NodeId> params(n_frames);
    std::vector<diff::Value> depths(n_frames);
    for (int f = 0; f < n_frames; ++f) {
      params[f] = g.parameter(result.grids[f].logits);
      depths[f] = decode_depth(g, {&g, params[f]});
    }

    const bool use_frozen = cfg.mode == LossMode::kTriplet &&
                            cfg.freeze_mask_after >= 0 && have_frozen &&
                            iter > cfg.freeze_mask_after;

    IterationStats stats;
    stats.iteration = iter;
    std::size_t flagged = 0, valid = 0;

    std::vector<std::vector<diff::Value>> ref_maps(n_frames);
    std::vector<std::vector<Tensor>> ref_valid(n_frames);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [r, s] = pairs[p];
      PairTerm term =
          build_pair_term(g, data, depths, r, s, cfg,
                          use_frozen ? &frozen[p] : nullptr);
      if (cfg.mode == LossMode::kTriplet) {
        stats.deltas.push_back(term.delta);
        if (cfg.freeze_mask_after >= 0 && iter == cfg.freeze_mask_after) {
          frozen[p] = term.mask_used;
          have_frozen = true;
        }
      }
      flagged += term.flagged;
      valid += term.valid_count;
      ref_maps[r].push_back(term.map);
      ref_valid[r].push_back(std::move(term.validity));
    }

    diff::Value objective;
    int n_refs = 0;
    for (int r = 0; r < n_frames; ++r) {
      if (ref_maps[r].empty()) continue;
      diff::Value combined =
          refl::multi_source_combine(ref_maps[r], ref_valid[r]);
      objective = objective.valid() ? objective + combined : combined;
      ++n_refs;
    }
    objective = objective * (1.0 / n_refs);

    if (cfg.lambda_smooth > 0.0) {
      diff::Value smooth;
      for (int f = 0; f < n_frames; ++f) {
        diff::Value s_f = smoothness_term(depths[f], data.images[f]);
        smooth = smooth.valid() ? smooth + s_f : s_f;
      }
      objective = objective + smooth * (cfg.lambda_smooth / n_frames);
    }

    stats.loss = objective.scalar();
    if (!std::isfinite(stats.loss)) {
      throw std::runtime_error("train: objective diverged at iteration " +
                               std::to_string(iter));
    }
    stats.reflective_fraction =
        valid == 0 ? 0.0
                   : static_cast<double>(flagged) / static_cast<double>(valid);

    auto grads = g.backward(objective.id());
    for (int f = 0; f < n_frames; ++f) {
      adam_step(result.grids[f].logits, grads.at(params[f]), adam[f],
                iter + 1, cfg.learning_rate, cfg.beta1, cfg.beta2,
                cfg.epsilon);
    }

    stats.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - tick)
                        .count();
    result.log.push_back(std::move(stats));
  }
  return result;
}

std::vector<PairMask> pair_masks(const Dataset& data,
                                 const std::vector<DepthGridModel>& grids,
                                 const MarginConfig& margin,
                                 const photo::LossConfig& loss) {
  if (grids.size() != data.frame_count()) {
    throw std::invalid_argument("pair_masks: checkpoint frame count " +
                                std::to_string(grids.size()) +
                                " vs dataset " +
                                std::to_string(data.frame_count()));
  }
  std::vector<Tensor> depths;
  depths.reserve(grids.size());
  for (const auto& m : grids) depths.push_back(decode_depth(m));

  std::vector<PairMask> out;
  for (const auto& [r, s] : training_pairs(data)) {
    const refl::ErrorPair pair = refl::cross_view_errors(
        data.images[r], data.images[s], depths[r], depths[s],
        data.intrinsics, data.relative(r, s), loss, true);
    PairMask pm;
    pm.ref = r;
    pm.src = s;
    double delta = 0.0;
    pm.mask = build_mask(pair, MaskMode::kAuto, margin, &delta,
                         &pm.used_fallback);
    out.push_back(std::move(pm));
  }
  return out;
}

TrainResult train_student(const Dataset& data,
                          const std::vector<DepthGridModel>& teacher_photo,
                          const std::vector<DepthGridModel>& teacher_triplet,
                          const StudentConfig& cfg) {
  if (teacher_photo.size() != data.frame_count() ||
      teacher_triplet.size() != data.frame_count()) {
    throw std::invalid_argument(
        "train_student: teacher checkpoints do not match the dataset");
  }
  const auto pairs = training_pairs(data);
  const int n_frames = static_cast<int>(data.frame_count());

  std::vector<Tensor> photo_depths, triplet_depths;
  for (int f = 0; f < n_frames; ++f) {
    photo_depths.push_back(decode_depth(teacher_photo[f]));
    triplet_depths.push_back(decode_depth(teacher_triplet[f]));
    if (!photo_depths.back().same_shape(triplet_depths.back()) ||
        photo_depths.back().height() != data.height ||
        photo_depths.back().width() != data.width) {
      throw std::invalid_argument("train_student: teacher shape mismatch");
    }
  }

  // Teachers are fixed, so masks and pseudo depths are computed once.
  const std::vector<PairMask> masks =
      pair_masks(data, teacher_triplet, cfg.margin, cfg.loss);
  std::vector<Tensor> pseudo(pairs.size());
  std::vector<double> deltas(pairs.size());
  double flagged = 0.0, valid_total = 0.0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const int r = masks[p].ref;
    pseudo[p] = distill::fuse_pseudo_depth(
        {triplet_depths[r], photo_depths[r], masks[p].mask});
    deltas[p] = masks[p].mask.delta;
    for (std::size_t i = 0; i < masks[p].mask.mask.size(); ++i) {
      flagged += masks[p].mask.mask[i] != 0.0f ? 1.0 : 0.0;
      valid_total += 1.0;
    }
  }

  TrainResult result;
  for (int f = 0; f < n_frames; ++f) {
    result.grids.push_back(DepthGridModel::constant_depth(
        data.height, data.width, std::sqrt(kMinDepth * kMaxDepth)));
  }
  std::vector<AdamState> adam(n_frames);

  TrainConfig photo_cfg;  // reused for the optional photometric term
  photo_cfg.mode = LossMode::kPhoto;
  photo_cfg.loss = cfg.loss;
  photo_cfg.threads = cfg.threads;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const auto tick = std::chrono::steady_clock::now();
    diff::Graph g(cfg.threads);
    std::vector<diff::NodeId> params(n_frames);
    std::vector<diff::Value> depths(n_frames);
    for (int f = 0; f < n_frames; ++f) {
      params[f] = g.parameter(result.grids[f].logits);
      depths[f] = decode_depth(g, {&g, params[f]});
    }

    diff::Value objective;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      auto [map, scalar] = distill::rkd_loss(depths[pairs[p].first], pseudo[p]);
      (void)map;
      objective = objective.valid() ? objective + scalar : scalar;
    }
    objective = objective * (1.0 / static_cast<double>(pairs.size()));

    if (cfg.add_photometric) {
      std::vector<std::vector<diff::Value>> ref_maps(n_frames);
      std::vector<std::vector<Tensor>> ref_valid(n_frames);
      for (const auto& [r, s] : pairs) {
        PairTerm term =
            build_pair_term(g, data, depths, r, s, photo_cfg, nullptr);
        ref_maps[r].push_back(term.map);
        ref_valid[r].push_back(std::move(term.validity));
      }
      diff::Value photo_term;
      int n_refs = 0;
      for (int r = 0; r < n_frames; ++r) {
        if (ref_maps[r].empty()) continue;
        diff::Value combined =
            refl::multi_source_combine(ref_maps[r], ref_valid[r]);
        photo_term = photo_term.valid() ? photo_term + combined : combined;
        ++n_refs;
      }
      objective = objective + photo_term * (1.0 / n_refs);
    }

    IterationStats stats;
    stats.iteration = iter;
    stats.loss = objective.scalar();
    if (!std::isfinite(stats.loss)) {
      throw std::runtime_error("train_student: diverged at iteration " +
                               std::to_string(iter));
    }
    stats.deltas = deltas;
    stats.reflective_fraction = valid_total == 0.0 ? 0.0 : flagged / valid_total;

    auto grads = g.backward(objective.id());
    for (int f = 0; f < n_frames; ++f) {
      adam_step(result.grids[f].logits, grads.at(params[f]), adam[f],
                iter + 1, cfg.learning_rate, cfg.beta1, cfg.beta2,
                cfg.epsilon);
    }
    stats.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - tick)
                        .count();
    result.log.push_back(std::move(stats));
  }
  return result;
}

void save_checkpoint(const std::filesystem::path& dir,
                     const std::vector<DepthGridModel>& grids,
                     const std::string& metadata_json) {
  std::filesystem::create_directories(dir);
  json files = json::array();
  char name[64];
  for (std::size_t f = 0; f < grids.size(); ++f) {
    std::snprintf(name, sizeof(name), "logits_%04zu.pfm", f);
    io::write_pfm(dir / name, grids[f].logits);
    files.push_back(name);
  }
  json j;
  j["version"] = 1;
  j["d_min"] = grids.empty() ? kMinDepth : grids.front().d_min;
  j["d_max"] = grids.empty() ? kMaxDepth : grids.front().d_max;
  j["logits"] = files;
  j["metadata"] =
      metadata_json.empty() ? json::object() : json::parse(metadata_json);
  io::write_text_file(dir / "checkpoint.json", j.dump(2) + "\n");
}

std::vector<DepthGridModel> load_checkpoint(const std::filesystem::path& dir) {
  const json j = json::parse(io::read_text_file(dir / "checkpoint.json"));
  std::vector<DepthGridModel> grids;
  for (const auto& name : j.at("logits")) {
    DepthGridModel m;
    m.logits = io::read_pfm(dir / name.get<std::string>());
    m.d_min = j.at("d_min").get<float>();
    m.d_max = j.at("d_max").get<float>();
    grids.push_back(std::move(m));
  }
  return grids;
}

std::string checkpoint_metadata(const std::filesystem::path& dir) {
  const json j = json::parse(io::read_text_file(dir / "checkpoint.json"));
  return j.at("metadata").dump();
}

}  // namespace refldepth::train
