#include <doctest.h>

#include <cmath>
#include <random>

#include "refldepth/metrics.hpp"
#include "test_support.hpp"

using namespace refldepth;
using testutil::random_tensor;
using testutil::uniform;

namespace {

// Scalar per-pixel loop oracle, independent of the library implementation.
metrics::DepthMetrics metrics_oracle(const Tensor& pred, const Tensor& gt,
                                     const Tensor& valid, double lo,
                                     double hi) {
  double sa = 0, sq = 0, se = 0, sl = 0;
  double n = 0, a1 = 0, a2 = 0, a3 = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (valid[i] == 0.0f) continue;
    const double p = pred[i];
    double g = gt[i];
    g = g < lo ? lo : (g > hi ? hi : g);
    sa += std::fabs(p - g) / g;
    sq += (p - g) * (p - g) / g;
    se += (p - g) * (p - g);
    sl += std::pow(std::log(p) - std::log(g), 2.0);
    const double r = p > g ? p / g : g / p;
    a1 += r < 1.25 ? 1 : 0;
    a2 += r < 1.5625 ? 1 : 0;
    a3 += r < 1.953125 ? 1 : 0;
    n += 1;
  }
  return {sa / n, sq / n, std::sqrt(se / n), std::sqrt(sl / n),
          a1 / n, a2 / n, a3 / n};
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("perfect prediction scores zero errors") {
  std::mt19937 rng(3);
  const Tensor gt = random_tensor(rng, 8, 8, 1, 0.5, 9.0);
  const Tensor valid = Tensor::full(8, 8, 1, 1.0f);
  const auto m = metrics::depth_metrics(gt, gt, valid, 0.1, 10.0);
  CHECK(m.abs_rel == 0.0);
  CHECK(m.sq_rel == 0.0);
  CHECK(m.rmse == 0.0);
  CHECK(m.rmse_log == 0.0);
  CHECK(m.a1 == 1.0);
  CHECK(m.a2 == 1.0);
  CHECK(m.a3 == 1.0);
}

TEST_CASE("uniform 1.3x overestimate") {
  const Tensor gt = Tensor::full(6, 6, 1, 2.0f);
  Tensor pred(6, 6, 1);
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = 2.6f;
  const Tensor valid = Tensor::full(6, 6, 1, 1.0f);
  const auto m = metrics::depth_metrics(pred, gt, valid, 0.1, 10.0);
  CHECK(m.abs_rel == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(m.a1 == 0.0);  // 1.3 >= 1.25
  CHECK(m.a2 == 1.0);  // 1.3 < 1.5625
  CHECK(m.a3 == 1.0);
}

TEST_CASE("single pixel pred 2 gt 1 hand values") {
  const Tensor gt = Tensor::full(1, 1, 1, 1.0f);
  const Tensor pred = Tensor::full(1, 1, 1, 2.0f);
  const Tensor valid = Tensor::full(1, 1, 1, 1.0f);
  const auto m = metrics::depth_metrics(pred, gt, valid, 0.1, 10.0);
  CHECK(m.abs_rel == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(m.sq_rel == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(m.rmse == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(m.rmse_log == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(m.a1 == 0.0);
  CHECK(m.a2 == 0.0);
  CHECK(m.a3 == 0.0);  // ratio 2 >= 1.25^3 = 1.953125
}

TEST_CASE("matches the scalar loop oracle on random instances") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const Tensor gt = random_tensor(rng, 7, 6, 1, 0.05, 11.0);
    const Tensor pred = random_tensor(rng, 7, 6, 1, 0.2, 9.5);
    const Tensor valid = testutil::random_mask(rng, 7, 6, 0.9);
    bool any = false;
    for (std::size_t i = 0; i < valid.size(); ++i) {
      any = any || valid[i] != 0.0f;
    }
    if (!any) continue;
    const auto got = metrics::depth_metrics(pred, gt, valid, 0.1, 10.0);
    const auto want = metrics_oracle(pred, gt, valid, 0.1, 10.0);
    CHECK(got.abs_rel == doctest::Approx(want.abs_rel).epsilon(1e-6));
    CHECK(got.sq_rel == doctest::Approx(want.sq_rel).epsilon(1e-6));
    CHECK(got.rmse == doctest::Approx(want.rmse).epsilon(1e-6));
    CHECK(got.rmse_log == doctest::Approx(want.rmse_log).epsilon(1e-6));
    CHECK(got.a1 == want.a1);
    CHECK(got.a2 == want.a2);
    CHECK(got.a3 == want.a3);
  }
}

TEST_CASE("delta accuracies are monotone and errors grow with scaling") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const Tensor gt = random_tensor(rng, 6, 6, 1, 0.5, 9.0);
    const Tensor pred = random_tensor(rng, 6, 6, 1, 0.5, 9.0);
    const Tensor valid = Tensor::full(6, 6, 1, 1.0f);
    const auto m = metrics::depth_metrics(pred, gt, valid, 0.1, 10.0);
    CHECK(m.a1 <= m.a2);
    CHECK(m.a2 <= m.a3);

    Tensor scaled(6, 6, 1);
    for (std::size_t i = 0; i < scaled.size(); ++i) {
      scaled[i] = static_cast<float>(gt[i] + 1.5 * (pred[i] - gt[i]));
    }
    const auto ms = metrics::depth_metrics(scaled, gt, valid, 0.1, 10.0);
    CHECK(ms.abs_rel >= m.abs_rel - 1e-9);
    CHECK(ms.sq_rel >= m.sq_rel - 1e-9);
    CHECK(ms.rmse >= m.rmse - 1e-9);
  }
}

TEST_CASE("region split examples") {
  std::mt19937 rng(9);
  const Tensor gt = Tensor::full(8, 8, 1, 2.0f);
  const Tensor valid = Tensor::full(8, 8, 1, 1.0f);

  // No reflective pixels: the non-reflective side equals the global scores.
  {
    const Tensor pred = random_tensor(rng, 8, 8, 1, 1.0, 3.0);
    const auto split = metrics::region_split(pred, gt, valid, Tensor(8, 8, 1),
                                             0.1, 10.0);
    REQUIRE_FALSE(split.reflective.has_value());
    REQUIRE(split.non_reflective.has_value());
    const auto global = metrics::depth_metrics(pred, gt, valid, 0.1, 10.0);
    CHECK(split.non_reflective->abs_rel == doctest::Approx(global.abs_rel));
  }

  // Black-hole predictor: virtual depth on the mirror, truth elsewhere.
  {
    Tensor mask(8, 8, 1);
    Tensor pred = Tensor::full(8, 8, 1, 2.0f);
    for (int y = 2; y < 5; ++y) {
      for (int x = 1; x < 6; ++x) {
        mask.at(y, x) = 1.0f;
        pred.at(y, x) = 3.0f;  // plane 2 m, virtual 3 m
      }
    }
    const auto split =
        metrics::region_split(pred, gt, valid, mask, 0.1, 10.0);
    REQUIRE(split.reflective.has_value());
    REQUIRE(split.non_reflective.has_value());
    CHECK(split.reflective->abs_rel == doctest::Approx(0.5));  // delta/Zp
    CHECK(split.non_reflective->abs_rel == doctest::Approx(0.0));
  }
}

TEST_CASE("mask IoU containment arithmetic") {
  Tensor gt(4, 4, 1), half(4, 4, 1), other(4, 4, 1);
  for (int x = 0; x < 4; ++x) {
    gt.at(0, x) = 1.0f;
    gt.at(1, x) = 1.0f;
    half.at(0, x) = 1.0f;
    other.at(3, x) = 1.0f;
  }
  CHECK(metrics::mask_iou(gt, gt) == 1.0);
  CHECK(metrics::mask_iou(half, gt) == 0.5);
  CHECK(metrics::mask_iou(other, gt) == 0.0);
  CHECK(metrics::mask_iou(Tensor(4, 4, 1), Tensor(4, 4, 1)) == 1.0);
}

TEST_CASE("metrics JSON uses the fixed key names") {
  const auto m = metrics::depth_metrics(Tensor::full(2, 2, 1, 2.0f),
                                        Tensor::full(2, 2, 1, 2.0f),
                                        Tensor::full(2, 2, 1, 1.0f), 0.1, 10.0);
  const std::string j = m.to_json();
  for (const char* key : {"abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2",
                          "a3"}) {
    CHECK(j.find(key) != std::string::npos);
  }
}

TEST_CASE("empty valid set is rejected") {
  CHECK_THROWS_AS(metrics::depth_metrics(Tensor(2, 2, 1), Tensor(2, 2, 1),
                                         Tensor(2, 2, 1), 0.1, 10.0),
                  std::invalid_argument);
}

}  // TEST_SUITE
