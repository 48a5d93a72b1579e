#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>

#include <json.hpp>

#include "refldepth/depth.hpp"
#include "refldepth/distill.hpp"
#include "refldepth/image_io.hpp"
#include "refldepth/metrics.hpp"
#include "refldepth/synthscene.hpp"
#include "refldepth/trainer.hpp"

namespace refldepth::cli {

namespace {

using nlohmann::json;

template <typename T>
void pick(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void pick_path(const json& j, const char* key, std::filesystem::path& field) {
  if (j.contains(key)) field = j.at(key).get<std::string>();
}

void write_resolved_config(const std::filesystem::path& dir,
                           const std::string& command,
                           const std::string& options_json) {
  std::filesystem::create_directories(dir);
  json j;
  j["command"] = command;
  j["options"] = json::parse(options_json);
  io::write_text_file(dir / "resolved_config.json", j.dump(2) + "\n");
}

train::MarginConfig margin_config(bool adaptive, double delta, double scale) {
  train::MarginConfig m;
  m.adaptive = adaptive;
  m.fixed_delta = delta;
  m.scale = scale;
  return m;
}

std::vector<geom::Pose> horizontal_trajectory(int frames, double baseline) {
  std::vector<geom::Pose> traj;
  const int ref = frames / 2;
  for (int i = 0; i < frames; ++i) {
    traj.push_back(geom::Pose::translation_only((i - ref) * baseline, 0, 0));
  }
  return traj;
}

void write_train_log(const std::filesystem::path& path,
                     const std::vector<train::IterationStats>& log) {
  std::string out;
  for (const auto& s : log) {
    json j;
    j["iteration"] = s.iteration;
    j["loss"] = s.loss;
    j["delta"] = s.deltas;
    j["reflective_fraction"] = s.reflective_fraction;
    j["wall_ms"] = s.wall_ms;
    out += j.dump() + "\n";
  }
  io::write_text_file(path, out);
}

json metrics_to_json(const metrics::DepthMetrics& m) {
  return json::parse(m.to_json());
}

// Global metrics, region split and per-pair mask IoU for the reference
// frame of a dataset.
json evaluate_checkpoint(const train::Dataset& data,
                         const std::vector<train::DepthGridModel>& grids,
                         const train::MarginConfig& margin,
                         bool* gt_mask_available) {
  if (grids.size() != data.frame_count()) {
    throw std::invalid_argument("checkpoint has " +
                                std::to_string(grids.size()) +
                                " grids but the dataset has " +
                                std::to_string(data.frame_count()));
  }
  const int ref = data.ref_index;
  if (!data.has_gt(ref)) {
    throw std::invalid_argument("dataset has no ground-truth depth");
  }
  const Tensor depth = train::decode_depth(grids[ref]);
  if (!depth.same_shape(data.gt_depth[ref])) {
    throw std::invalid_argument("checkpoint shape " + depth.shape_string() +
                                " does not match dataset depth " +
                                data.gt_depth[ref].shape_string());
  }
  const Tensor valid = Tensor::full(data.height, data.width, 1, 1.0f);

  json out;
  out["global"] = metrics_to_json(metrics::depth_metrics(
      depth, data.gt_depth[ref], valid, kMinDepth, kMaxDepth));

  const bool have_mask =
      ref < static_cast<int>(data.gt_reflective.size()) &&
      !data.gt_reflective[ref].empty();
  if (gt_mask_available) *gt_mask_available = have_mask;
  if (have_mask) {
    const auto split =
        metrics::region_split(depth, data.gt_depth[ref], valid,
                              data.gt_reflective[ref], kMinDepth, kMaxDepth);
    out["reflective"] = split.reflective
                            ? metrics_to_json(*split.reflective)
                            : json();
    out["non_reflective"] = split.non_reflective
                                ? metrics_to_json(*split.non_reflective)
                                : json();

    const auto masks = train::pair_masks(data, grids, margin, {});
    json pair_report = json::array();
    double iou_sum = 0.0;
    int iou_count = 0;
    for (const auto& pm : masks) {
      json p;
      p["ref"] = pm.ref;
      p["src"] = pm.src;
      p["delta"] = pm.mask.delta;
      if (!data.gt_reflective[pm.ref].empty()) {
        const double iou =
            metrics::mask_iou(pm.mask.mask, data.gt_reflective[pm.ref]);
        p["iou"] = iou;
        if (pm.ref == ref) {
          iou_sum += iou;
          ++iou_count;
        }
      }
      pair_report.push_back(std::move(p));
    }
    out["mask_iou"] = {{"pairs", pair_report},
                       {"reference_mean",
                        iou_count ? iou_sum / iou_count : 0.0}};
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// gen

std::string GenOptions::to_json() const {
  json j{{"preset", preset},
         {"scene_json_path", scene_json_path},
         {"out", out.string()},
         {"frames", frames},
         {"baseline", baseline},
         {"virtual_offset", virtual_offset},
         {"texture_seed", texture_seed},
         {"smoothness", smoothness},
         {"emit_gt_checkpoint", emit_gt_checkpoint},
         {"threads", threads}};
  return j.dump();
}

void GenOptions::merge_json(const std::string& text) {
  const json j = json::parse(text);
  pick(j, "preset", preset);
  pick(j, "scene_json_path", scene_json_path);
  pick_path(j, "out", out);
  pick(j, "frames", frames);
  pick(j, "baseline", baseline);
  pick(j, "virtual_offset", virtual_offset);
  pick(j, "texture_seed", texture_seed);
  pick(j, "smoothness", smoothness);
  pick(j, "emit_gt_checkpoint", emit_gt_checkpoint);
  pick(j, "threads", threads);
}

int cmd_gen(const GenOptions& opts) {
  try {
    synth::SceneSpec scene =
        opts.scene_json_path.empty()
            ? synth::preset(opts.preset)
            : synth::SceneSpec::from_json(
                  io::read_text_file(opts.scene_json_path));
    double baseline = opts.baseline;
    if (baseline < 0.0 && scene.trajectory.size() >= 2) {
      baseline = std::fabs(scene.trajectory[1].translation[0] -
                           scene.trajectory[0].translation[0]);
    }
    if (opts.frames > 0) {
      scene.trajectory = horizontal_trajectory(opts.frames, baseline);
      scene.ref_index = opts.frames / 2;
    } else if (opts.baseline >= 0.0) {
      scene.trajectory = horizontal_trajectory(
          static_cast<int>(scene.trajectory.size()), baseline);
      scene.ref_index = static_cast<int>(scene.trajectory.size()) / 2;
    }
    if (opts.virtual_offset >= 0.0) scene.virtual_offset = opts.virtual_offset;
    if (opts.texture_seed >= 0) {
      scene.texture_seed = static_cast<std::uint32_t>(opts.texture_seed);
    }
    if (opts.smoothness >= 0) scene.texture_smoothness = opts.smoothness;

    scene.validate();
    synth::generate_sequence(scene, opts.out, opts.threads);
    write_resolved_config(opts.out, "gen", opts.to_json());

    if (opts.emit_gt_checkpoint) {
      std::vector<train::DepthGridModel> grids;
      for (const auto& pose : scene.trajectory) {
        const auto frame = synth::render_frame(scene, pose, opts.threads);
        train::DepthGridModel m;
        m.logits = Tensor(scene.height, scene.width, 1);
        for (std::size_t i = 0; i < m.logits.size(); ++i) {
          m.logits[i] =
              static_cast<float>(logit_for_depth(frame.gt_depth[i]));
        }
        grids.push_back(std::move(m));
      }
      train::save_checkpoint(opts.out / "gt_checkpoint", grids,
                             R"({"source":"ground_truth"})");
    }
    std::cout << (opts.out / "manifest.json").string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "gen: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// train

std::string TrainOptions::to_json() const {
  json j{{"dataset", dataset.string()},
         {"out", out.string()},
         {"mode", mode},
         {"mask_mode", mask_mode},
         {"iterations", iterations},
         {"learning_rate", learning_rate},
         {"lambda_smooth", lambda_smooth},
         {"init_depth", init_depth},
         {"adaptive_delta", adaptive_delta},
         {"delta", delta},
         {"margin_scale", margin_scale},
         {"freeze_mask_after", freeze_mask_after},
         {"seed", seed},
         {"threads", threads}};
  return j.dump();
}

void TrainOptions::merge_json(const std::string& text) {
  const json j = json::parse(text);
  pick_path(j, "dataset", dataset);
  pick_path(j, "out", out);
  pick(j, "mode", mode);
  pick(j, "mask_mode", mask_mode);
  pick(j, "iterations", iterations);
  pick(j, "learning_rate", learning_rate);
  pick(j, "lambda_smooth", lambda_smooth);
  pick(j, "init_depth", init_depth);
  pick(j, "adaptive_delta", adaptive_delta);
  pick(j, "delta", delta);
  pick(j, "margin_scale", margin_scale);
  pick(j, "freeze_mask_after", freeze_mask_after);
  pick(j, "seed", seed);
  pick(j, "threads", threads);
}

int cmd_train(const TrainOptions& opts) {
  try {
    const auto data = train::Dataset::load(opts.dataset);
    train::TrainConfig cfg;
    if (opts.mode == "photo") {
      cfg.mode = train::LossMode::kPhoto;
    } else if (opts.mode == "triplet") {
      cfg.mode = train::LossMode::kTriplet;
    } else {
      throw std::invalid_argument("unknown mode '" + opts.mode + "'");
    }
    if (opts.mask_mode == "zero") {
      cfg.mask_mode = train::MaskMode::kZero;
    } else if (opts.mask_mode == "one") {
      cfg.mask_mode = train::MaskMode::kOne;
    } else if (opts.mask_mode == "auto") {
      cfg.mask_mode = train::MaskMode::kAuto;
    } else {
      throw std::invalid_argument("unknown mask mode '" + opts.mask_mode +
                                  "'");
    }
    cfg.iterations = opts.iterations;
    cfg.learning_rate = opts.learning_rate;
    cfg.lambda_smooth = opts.lambda_smooth;
    cfg.init_depth = opts.init_depth;
    cfg.margin =
        margin_config(opts.adaptive_delta, opts.delta, opts.margin_scale);
    cfg.freeze_mask_after = opts.freeze_mask_after;
    cfg.seed = opts.seed;
    cfg.threads = opts.threads;

    const auto result = train::train(data, cfg);

    write_resolved_config(opts.out, "train", opts.to_json());
    train::save_checkpoint(opts.out, result.grids, opts.to_json());
    write_train_log(opts.out / "train_log.jsonl", result.log);

    if (data.has_gt(data.ref_index)) {
      bool have_mask = false;
      const json report = evaluate_checkpoint(
          data, result.grids, cfg.margin, &have_mask);
      io::write_text_file(opts.out / "metrics.json", report.dump(2) + "\n");
      if (!have_mask) {
        std::cerr << "train: dataset has no reflective ground truth; "
                     "region metrics skipped\n";
      }
    }
    std::cout << (opts.out / "checkpoint.json").string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "train: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// distill

std::string DistillOptions::to_json() const {
  json j{{"dataset", dataset.string()},
         {"teacher_photo", teacher_photo.string()},
         {"teacher_triplet", teacher_triplet.string()},
         {"out", out.string()},
         {"iterations", iterations},
         {"learning_rate", learning_rate},
         {"adaptive_delta", adaptive_delta},
         {"delta", delta},
         {"margin_scale", margin_scale},
         {"add_photometric", add_photometric},
         {"dump_pseudo", dump_pseudo},
         {"seed", seed},
         {"threads", threads}};
  return j.dump();
}

void DistillOptions::merge_json(const std::string& text) {
  const json j = json::parse(text);
  pick_path(j, "dataset", dataset);
  pick_path(j, "teacher_photo", teacher_photo);
  pick_path(j, "teacher_triplet", teacher_triplet);
  pick_path(j, "out", out);
  pick(j, "iterations", iterations);
  pick(j, "learning_rate", learning_rate);
  pick(j, "adaptive_delta", adaptive_delta);
  pick(j, "delta", delta);
  pick(j, "margin_scale", margin_scale);
  pick(j, "add_photometric", add_photometric);
  pick(j, "dump_pseudo", dump_pseudo);
  pick(j, "seed", seed);
  pick(j, "threads", threads);
}

int cmd_distill(const DistillOptions& opts) {
  try {
    const auto data = train::Dataset::load(opts.dataset);
    const auto teacher_a = train::load_checkpoint(opts.teacher_photo);
    const auto teacher_b = train::load_checkpoint(opts.teacher_triplet);

    train::StudentConfig cfg;
    cfg.iterations = opts.iterations;
    cfg.learning_rate = opts.learning_rate;
    cfg.margin =
        margin_config(opts.adaptive_delta, opts.delta, opts.margin_scale);
    cfg.add_photometric = opts.add_photometric;
    cfg.seed = opts.seed;
    cfg.threads = opts.threads;

    const auto result = train::train_student(data, teacher_a, teacher_b, cfg);

    write_resolved_config(opts.out, "distill", opts.to_json());
    train::save_checkpoint(opts.out, result.grids, opts.to_json());
    write_train_log(opts.out / "train_log.jsonl", result.log);

    if (opts.dump_pseudo) {
      const auto masks =
          train::pair_masks(data, teacher_b, cfg.margin, cfg.loss);
      json index = json::array();
      char name[64];
      for (std::size_t p = 0; p < masks.size(); ++p) {
        const Tensor pseudo = distill::fuse_pseudo_depth(
            {train::decode_depth(teacher_b[masks[p].ref]),
             train::decode_depth(teacher_a[masks[p].ref]), masks[p].mask});
        std::snprintf(name, sizeof(name), "pseudo_%04zu.pfm", p);
        io::write_pfm(opts.out / name, pseudo);
        index.push_back({{"pair", p},
                         {"ref", masks[p].ref},
                         {"src", masks[p].src},
                         {"file", name},
                         {"delta", masks[p].mask.delta}});
      }
      io::write_text_file(opts.out / "pseudo_index.json",
                          index.dump(2) + "\n");
    }

    if (data.has_gt(data.ref_index)) {
      const json report = evaluate_checkpoint(data, result.grids,
                                              cfg.margin, nullptr);
      io::write_text_file(opts.out / "metrics.json", report.dump(2) + "\n");
    }
    std::cout << (opts.out / "checkpoint.json").string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "distill: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// eval

std::string EvalOptions::to_json() const {
  json j{{"checkpoint", checkpoint.string()},
         {"dataset", dataset.string()},
         {"out", out.string()},
         {"threads", threads}};
  return j.dump();
}

void EvalOptions::merge_json(const std::string& text) {
  const json j = json::parse(text);
  pick_path(j, "checkpoint", checkpoint);
  pick_path(j, "dataset", dataset);
  pick_path(j, "out", out);
  pick(j, "threads", threads);
}

int cmd_eval(const EvalOptions& opts) {
  try {
    const auto data = train::Dataset::load(opts.dataset);
    const auto grids = train::load_checkpoint(opts.checkpoint);
    bool have_mask = false;
    const json report =
        evaluate_checkpoint(data, grids, {}, &have_mask);
    if (!have_mask) {
      std::cerr << "eval: no reflective ground truth; reporting global "
                   "metrics only\n";
    }
    std::cout << report.dump(2) << "\n";
    if (!opts.out.empty()) {
      write_resolved_config(opts.out, "eval", opts.to_json());
      io::write_text_file(opts.out / "metrics.json", report.dump(2) + "\n");
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "eval: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// maskmap

std::string MaskmapOptions::to_json() const {
  json j{{"checkpoint", checkpoint.string()},
         {"dataset", dataset.string()},
         {"out", out.string()},
         {"pair_index", pair_index},
         {"adaptive_delta", adaptive_delta},
         {"delta", delta},
         {"margin_scale", margin_scale},
         {"threads", threads}};
  return j.dump();
}

void MaskmapOptions::merge_json(const std::string& text) {
  const json j = json::parse(text);
  pick_path(j, "checkpoint", checkpoint);
  pick_path(j, "dataset", dataset);
  pick_path(j, "out", out);
  pick(j, "pair_index", pair_index);
  pick(j, "adaptive_delta", adaptive_delta);
  pick(j, "delta", delta);
  pick(j, "margin_scale", margin_scale);
  pick(j, "threads", threads);
}

int cmd_maskmap(const MaskmapOptions& opts) {
  try {
    const auto data = train::Dataset::load(opts.dataset);
    const auto grids = train::load_checkpoint(opts.checkpoint);
    const auto masks = train::pair_masks(
        data, grids,
        margin_config(opts.adaptive_delta, opts.delta, opts.margin_scale),
        {});
    if (opts.pair_index < 0 ||
        opts.pair_index >= static_cast<int>(masks.size())) {
      throw std::invalid_argument(
          "pair index " + std::to_string(opts.pair_index) +
          " out of range (have " + std::to_string(masks.size()) + " pairs)");
    }
    const auto& pm = masks[opts.pair_index];

    write_resolved_config(opts.out, "maskmap", opts.to_json());
    char name[64];
    std::snprintf(name, sizeof(name), "mask_pair%02d.pgm", opts.pair_index);
    io::write_pgm(opts.out / name, pm.mask.mask);

    double flagged = 0.0;
    for (std::size_t i = 0; i < pm.mask.mask.size(); ++i) {
      flagged += pm.mask.mask[i];
    }
    json report;
    report["pair"] = opts.pair_index;
    report["ref"] = pm.ref;
    report["src"] = pm.src;
    report["delta"] = pm.mask.delta;
    report["fallback_delta"] = pm.used_fallback;
    report["reflective_fraction"] =
        flagged / static_cast<double>(pm.mask.mask.size());
    if (pm.ref < static_cast<int>(data.gt_reflective.size()) &&
        !data.gt_reflective[pm.ref].empty()) {
      report["iou_vs_gt"] =
          metrics::mask_iou(pm.mask.mask, data.gt_reflective[pm.ref]);
    }
    std::cout << report.dump(2) << "\n";
    io::write_text_file(opts.out / "maskmap.json", report.dump(2) + "\n");
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "maskmap: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace refldepth::cli
