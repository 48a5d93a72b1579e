#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>

#include <json.hpp>

#include "commands.hpp"
#include "refldepth/autodiff.hpp"
#include "refldepth/distill.hpp"
#include "refldepth/reflection.hpp"
#include "refldepth/synthscene.hpp"
#include "refldepth/trainer.hpp"

namespace refldepth::cli {

namespace {

constexpr int kWidth = 16;
constexpr int kHeight = 12;
constexpr double kStep = 5e-4;
// Probes move warp coordinates and hinge arguments by O(step); this keeps
// every probe on one side of the nearest subgradient kink.
constexpr double kKinkMargin = 2.5e-3;
constexpr double kSmoothWeight = 1e-3;

struct Instance {
  Tensor ref_image, src_image;
  Tensor ref_logits, src_logits;
  Tensor distill_target;  // strictly positive depth map
  geom::Intrinsics K{20.0, 20.0, 7.5, 5.5};
  geom::Pose pose = geom::Pose::translation_only(0.02, 0.006, 0.0);
  Tensor support;                // frozen pair support
  refl::ReflectiveMask mask;     // frozen reflective mask + margin
};

Tensor random_logits(std::mt19937& rng) {
  Tensor t(kHeight, kWidth, 1);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<float>(
        -1.2 + 2.4 * (static_cast<double>(rng()) / 4294967296.0));
  }
  return t;
}

Tensor texture_image(std::uint32_t seed) {
  Tensor img(kHeight, kWidth, 3);
  for (int ch = 0; ch < 3; ++ch) {
    const Tensor t = synth::make_texture(seed + ch, 1, kHeight, kWidth);
    for (int y = 0; y < kHeight; ++y) {
      for (int x = 0; x < kWidth; ++x) {
        img.at(y, x, ch) = t.at(y, x);
      }
    }
  }
  return img;
}

// Frozen support and mask at the current logits.
void refresh_masks(Instance& inst) {
  train::DepthGridModel ref_model{inst.ref_logits};
  train::DepthGridModel src_model{inst.src_logits};
  const refl::ErrorPair pair = refl::cross_view_errors(
      inst.ref_image, inst.src_image, train::decode_depth(ref_model),
      train::decode_depth(src_model), inst.K, inst.pose, {}, true);
  inst.support = pair.validity;
  const auto mr = refl::adaptive_margin(pair, 0.05);
  inst.mask = refl::reflective_mask(pair, 0.7 * mr.delta);
}

std::size_t support_count(const Instance& inst) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < inst.support.size(); ++i) {
    if (inst.support[i] != 0.0f) ++n;
  }
  return n;
}

enum class Objective { kPhoto, kTriplet, kRkd };
enum class Side { kRef, kSrc };

const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kPhoto: return "photo";
    case Objective::kTriplet: return "triplet";
    case Objective::kRkd: return "rkd";
  }
  return "?";
}

// Builds the frozen-mask objective with `point` bound to one side's logits
// and returns the scalar loss node.
diff::NodeId build_objective(diff::Graph& g, const Instance& inst,
                             Objective obj, Side side, const Tensor& point) {
  const Tensor& fixed =
      side == Side::kRef ? inst.src_logits : inst.ref_logits;
  const diff::NodeId param = g.parameter(point);
  const diff::NodeId other = g.constant(fixed);
  diff::Value d_param = train::decode_depth(g, {&g, param});
  diff::Value d_other = train::decode_depth(g, {&g, other});
  diff::Value d_ref = side == Side::kRef ? d_param : d_other;
  diff::Value d_src = side == Side::kRef ? d_other : d_param;

  diff::Value loss;
  switch (obj) {
    case Objective::kPhoto: {
      photo::SynthesisNodes synth = photo::synthesize_view(
          g, inst.src_image, d_ref, inst.K, inst.pose);
      diff::Value ref_c{&g, g.constant(inst.ref_image)};
      diff::Value err =
          photo::error_map(ref_c, synth.image, inst.support, {});
      loss = masked_mean(err, inst.support);
      break;
    }
    case Objective::kTriplet: {
      refl::CrossViewNodes cross = refl::cross_view_errors(
          g, inst.ref_image, inst.src_image, d_ref, d_src, inst.K, inst.pose,
          {}, true, &inst.support);
      auto [map, scalar] = refl::triplet_loss(cross, inst.mask);
      loss = scalar;
      break;
    }
    case Objective::kRkd: {
      auto [map, scalar] = distill::rkd_loss(d_param, inst.distill_target);
      return scalar.id();
    }
  }
  const Tensor& img =
      side == Side::kRef ? inst.ref_image : inst.src_image;
  loss = loss + train::smoothness_term(d_param, img) * kSmoothWeight;
  return loss.id();
}

struct CheckOutcome {
  double max_rel_error = 0.0;
  bool ok = false;
  std::ptrdiff_t coord = -1;
};

CheckOutcome run_check(const Instance& inst, Objective obj, Side side,
                       double tolerance, bool inject_bug) {
  const Tensor& point =
      side == Side::kRef ? inst.ref_logits : inst.src_logits;

  diff::Graph g;
  const diff::NodeId loss = build_objective(g, inst, obj, side, point);
  auto grads = g.backward(loss);
  Tensor analytic = std::move(grads.begin()->second);
  if (inject_bug) {
    analytic[0] += 0.25f * (std::fabs(analytic[0]) + 1.0f);
  }

  auto fn = [&](const Tensor& x) {
    diff::Graph h;
    return h.scalar_value(build_objective(h, inst, obj, side, x));
  };
  const auto report = diff::finite_diff_check(fn, analytic, point, kStep);
  CheckOutcome out;
  out.max_rel_error = report.max_rel_error;
  out.coord = report.worst_coord;
  out.ok = report.finite && report.max_rel_error < tolerance;
  return out;
}

// Margins are evaluated on the same graphs the probes use; nudging all
// logits re-randomizes the fractional parts of the warp coordinates until
// no probe can straddle a kink.
bool settle_instance(Instance& inst) {
  for (int round = 0; round < 32; ++round) {
    refresh_masks(inst);
    if (support_count(inst) * 4 < inst.support.size()) return false;
    double margin = std::numeric_limits<double>::infinity();
    for (const Objective obj :
         {Objective::kPhoto, Objective::kTriplet, Objective::kRkd}) {
      for (const Side side : {Side::kRef, Side::kSrc}) {
        if (obj != Objective::kTriplet && side == Side::kSrc) continue;
        diff::Graph g;
        build_objective(g, inst, obj, side,
                        side == Side::kRef ? inst.ref_logits
                                           : inst.src_logits);
        margin = std::min(margin, g.kink_margin());
      }
    }
    if (margin >= kKinkMargin) return true;
    for (std::size_t i = 0; i < inst.ref_logits.size(); ++i) {
      inst.ref_logits[i] += 0.0173f;
      inst.src_logits[i] += 0.0149f;
    }
  }
  return false;
}

Instance make_instance(std::uint32_t seed) {
  for (std::uint32_t attempt = 0;; ++attempt) {
    const std::uint32_t s = seed * 7919u + attempt * 104729u;
    Instance inst;
    inst.ref_image = texture_image(s + 100);
    inst.src_image = texture_image(s + 200);
    std::mt19937 rng(s + 300);
    inst.ref_logits = random_logits(rng);
    inst.src_logits = random_logits(rng);
    train::DepthGridModel target{random_logits(rng)};
    inst.distill_target = train::decode_depth(target);
    if (settle_instance(inst)) return inst;
    if (attempt > 64) {
      throw std::runtime_error("gradcheck: could not settle an instance");
    }
  }
}

}  // namespace

std::string GradcheckOptions::to_json() const {
  nlohmann::json j{{"seed", seed},
                   {"count", count},
                   {"tolerance", tolerance},
                   {"inject_bug", inject_bug}};
  return j.dump();
}

void GradcheckOptions::merge_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  if (j.contains("seed")) seed = j.at("seed").get<std::uint32_t>();
  if (j.contains("count")) count = j.at("count").get<int>();
  if (j.contains("tolerance")) tolerance = j.at("tolerance").get<double>();
  if (j.contains("inject_bug")) inject_bug = j.at("inject_bug").get<bool>();
}

int cmd_gradcheck(const GradcheckOptions& opts) {
  try {
    bool all_ok = true;
    double worst = 0.0;
    for (int i = 0; i < opts.count; ++i) {
      const std::uint32_t seed = opts.seed + static_cast<std::uint32_t>(i);
      const Instance inst = make_instance(seed);
      for (const Objective obj :
           {Objective::kPhoto, Objective::kTriplet, Objective::kRkd}) {
        for (const Side side : {Side::kRef, Side::kSrc}) {
          if (obj != Objective::kTriplet && side == Side::kSrc) continue;
          const auto outcome =
              run_check(inst, obj, side, opts.tolerance, opts.inject_bug);
          worst = std::max(worst, outcome.max_rel_error);
          std::fprintf(stdout, "[gradcheck] seed %u %s/%s max_rel %.3e %s\n",
                       seed, objective_name(obj),
                       side == Side::kRef ? "ref" : "src",
                       outcome.max_rel_error, outcome.ok ? "ok" : "FAIL");
          if (!outcome.ok) {
            all_ok = false;
            std::fprintf(stderr,
                         "gradcheck: %s/%s seed %u failed at coordinate %td "
                         "(rel error %.3e)\n",
                         objective_name(obj),
                         side == Side::kRef ? "ref" : "src", seed,
                         outcome.coord, outcome.max_rel_error);
          }
        }
      }
    }
    std::fprintf(stdout, "[gradcheck] worst max_rel %.3e over %d seeds: %s\n",
                 worst, opts.count, all_ok ? "PASS" : "FAIL");
    return all_ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "gradcheck: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace refldepth::cli
