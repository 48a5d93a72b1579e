#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "refldepth/reflection.hpp"
#include "test_support.hpp"

using namespace refldepth;
using testutil::random_mask;
using testutil::random_tensor;
using testutil::uniform;

namespace {

// Brute-force quantile oracle, written independently of the library path:
// sort ascending, position q*(n-1), interpolate between the two
// surrounding order statistics.
double quantile_oracle(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

refl::ErrorPair make_pair(const Tensor& pos, const Tensor& neg,
                          const Tensor& validity) {
  return {pos, neg, validity};
}

}  // namespace

TEST_SUITE("reflection") {

TEST_CASE("adaptive_margin quartile example") {
  Tensor pos(2, 2, 1), neg(2, 2, 1);
  const float pv[] = {1, 2, 3, 4};
  const float nv[] = {5, 6, 7, 8};
  for (int i = 0; i < 4; ++i) {
    pos[i] = pv[i];
    neg[i] = nv[i];
  }
  const auto mr = refl::adaptive_margin(
      make_pair(pos, neg, Tensor::full(2, 2, 1, 1.0f)));
  CHECK_FALSE(mr.used_fallback);
  // Q1 = 1.75, Q3 = 7.25
  CHECK(mr.delta == doctest::Approx(5.5).epsilon(1e-12));
}

TEST_CASE("adaptive_margin degenerate and clamped cases") {
  const Tensor c = Tensor::full(3, 3, 1, 0.25f);
  const Tensor ones = Tensor::full(3, 3, 1, 1.0f);
  CHECK(refl::adaptive_margin(make_pair(c, c, ones)).delta == 0.0);

  // Q3(neg) < Q1(pos) clamps to zero.
  const Tensor lo = Tensor::full(3, 3, 1, 0.1f);
  const Tensor hi = Tensor::full(3, 3, 1, 0.9f);
  CHECK(refl::adaptive_margin(make_pair(hi, lo, ones)).delta == 0.0);
}

TEST_CASE("adaptive_margin falls back under 4 valid pixels") {
  Tensor validity(2, 2, 1);
  validity[0] = 1.0f;
  const Tensor x = Tensor::full(2, 2, 1, 0.5f);
  const auto mr = refl::adaptive_margin(make_pair(x, x, validity), 0.07);
  CHECK(mr.used_fallback);
  CHECK(mr.delta == doctest::Approx(0.07));
}

TEST_CASE("adaptive_margin matches the brute-force oracle on random inputs") {
  std::mt19937 rng(41);
  for (int trial = 0; trial < 60; ++trial) {
    const int h = 3 + static_cast<int>(rng() % 6);
    const int w = 3 + static_cast<int>(rng() % 6);
    const Tensor pos = random_tensor(rng, h, w, 1, 0.0, 1.0);
    const Tensor neg = random_tensor(rng, h, w, 1, 0.0, 2.0);
    Tensor validity = random_mask(rng, h, w, 0.8);
    std::vector<double> pv, nv;
    for (std::size_t i = 0; i < validity.size(); ++i) {
      if (validity[i] != 0.0f) {
        pv.push_back(pos[i]);
        nv.push_back(neg[i]);
      }
    }
    if (pv.size() < 4) continue;
    const double want =
        std::max(0.0, quantile_oracle(nv, 0.75) - quantile_oracle(pv, 0.25));
    const auto mr = refl::adaptive_margin(make_pair(pos, neg, validity));
    CHECK(mr.delta == doctest::Approx(want).epsilon(1e-6));
  }
}

TEST_CASE("reflective_mask threshold cases") {
  Tensor pos(1, 3, 1), neg(1, 3, 1);
  const Tensor ones = Tensor::full(1, 3, 1, 1.0f);
  // (pos, neg): diff 0, diff 0.4, diff exactly delta
  pos[0] = 0.1f;
  neg[0] = 0.1f;
  pos[1] = 0.1f;
  neg[1] = 0.5f;
  pos[2] = 0.2f;
  neg[2] = 0.25f;
  const auto m =
      refl::reflective_mask(make_pair(pos, neg, ones), 0.05000000074505806);
  CHECK(m.mask[0] == 1.0f);  // 0 <= delta
  CHECK(m.mask[1] == 0.0f);  // 0.4 > delta
  CHECK(m.mask[2] == 1.0f);  // boundary: inclusive <=

  Tensor validity = ones;
  validity[0] = 0.0f;
  const auto m2 = refl::reflective_mask(make_pair(pos, neg, validity), 1.0);
  CHECK(m2.mask[0] == 0.0f);  // invalid pixels forced to 0

  CHECK_THROWS_AS(refl::reflective_mask(make_pair(pos, neg, ones), -0.1),
                  std::invalid_argument);
}

TEST_CASE("triplet_loss arithmetic cases") {
  auto run_one = [](float pos, float neg, float mask, double delta) {
    diff::Graph g;
    refl::CrossViewNodes nodes;
    nodes.pos_error = {&g, g.constant(Tensor::full(1, 1, 1, pos))};
    nodes.neg_error = {&g, g.constant(Tensor::full(1, 1, 1, neg))};
    nodes.validity = Tensor::full(1, 1, 1, 1.0f);
    refl::ReflectiveMask m{Tensor::full(1, 1, 1, mask), delta};
    auto [map, scalar] = refl::triplet_loss(nodes, m);
    return scalar.scalar();
  };
  CHECK(run_one(0.5f, 0.2f, 1.0f, 0.1) == doctest::Approx(0.4));
  CHECK(run_one(0.3f, 0.9f, 0.0f, 0.5) == doctest::Approx(0.3));
  CHECK(run_one(0.1f, 0.9f, 1.0f, 0.1) == doctest::Approx(0.0));
}

TEST_CASE("triplet map equals pos_error bit-exactly where the mask is 0") {
  std::mt19937 rng(17);
  diff::Graph g;
  const Tensor pos_t = random_tensor(rng, 6, 6, 1, 0.0, 1.0);
  const Tensor neg_t = random_tensor(rng, 6, 6, 1, 0.0, 1.0);
  refl::CrossViewNodes nodes;
  nodes.pos_error = {&g, g.constant(pos_t)};
  nodes.neg_error = {&g, g.constant(neg_t)};
  nodes.validity = Tensor::full(6, 6, 1, 1.0f);

  refl::ReflectiveMask m{random_mask(rng, 6, 6), 0.25};
  auto [map, scalar] = refl::triplet_loss(nodes, m);
  const Tensor& mt = map.tensor();
  for (std::size_t i = 0; i < mt.size(); ++i) {
    if (m.mask[i] == 0.0f) {
      CHECK(mt[i] == pos_t[i]);
    }
  }
  CHECK(scalar.scalar() >= 0.0);

  // All-zero mask reproduces the plain photometric map bit for bit.
  refl::ReflectiveMask zero{Tensor(6, 6, 1), 0.0};
  auto [map0, scalar0] = refl::triplet_loss(nodes, zero);
  CHECK(bitwise_equal(map0.tensor(), pos_t));
}

TEST_CASE("triplet gradient pushes the negative error up on hinge pixels") {
  diff::Graph g;
  const auto pos_id = g.parameter(Tensor::full(2, 2, 1, 0.5f));
  const auto neg_id = g.parameter(Tensor::full(2, 2, 1, 0.2f));
  refl::CrossViewNodes nodes;
  nodes.pos_error = {&g, pos_id};
  nodes.neg_error = {&g, neg_id};
  nodes.validity = Tensor::full(2, 2, 1, 1.0f);
  refl::ReflectiveMask m{Tensor::full(2, 2, 1, 1.0f), 0.1};
  auto [map, scalar] = refl::triplet_loss(nodes, m);
  const auto grads = g.backward(scalar.id());
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(grads.at(neg_id)[i] < 0.0f);  // loss decreases as neg grows
    CHECK(grads.at(pos_id)[i] > 0.0f);
  }
}

TEST_CASE("cross_view_errors degenerate pose gives equal error maps") {
  std::mt19937 rng(29);
  const Tensor ref = random_tensor(rng, 10, 12, 3, 0.0, 1.0);
  const Tensor src = random_tensor(rng, 10, 12, 3, 0.0, 1.0);
  const Tensor depth = Tensor::full(10, 12, 1, 2.0f);
  const geom::Intrinsics K{16.0, 16.0, 5.5, 4.5};
  const auto pair =
      refl::cross_view_errors(ref, src, depth, depth, K,
                              geom::Pose::identity(), {}, false);
  CHECK(bitwise_equal(pair.pos_error, pair.neg_error));
}

TEST_CASE("multi_source_combine idempotence and disjoint validity") {
  std::mt19937 rng(53);
  const Tensor map_t = random_tensor(rng, 6, 8, 1, 0.0, 1.0);
  const Tensor ones = Tensor::full(6, 8, 1, 1.0f);

  diff::Graph g;
  diff::Value map{&g, g.constant(map_t)};
  const diff::Value single[] = {map};
  const Tensor vsingle[] = {ones};
  const double one_src =
      refl::multi_source_combine(single, vsingle).scalar();
  const double dup = refl::multi_source_combine(
                         std::vector<diff::Value>{map, map},
                         std::vector<Tensor>{ones, ones})
                         .scalar();
  CHECK(one_src == doctest::Approx(dup).epsilon(1e-12));

  // Disjoint validity: each pixel takes whichever source covers it.
  const Tensor map2_t = random_tensor(rng, 6, 8, 1, 0.0, 1.0);
  Tensor left(6, 8, 1), right(6, 8, 1);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 8; ++x) {
      (x < 4 ? left : right).at(y, x) = 1.0f;
    }
  }
  diff::Value map2{&g, g.constant(map2_t)};
  const double got = refl::multi_source_combine(
                         std::vector<diff::Value>{map, map2},
                         std::vector<Tensor>{left, right})
                         .scalar();
  double want = 0.0;
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 8; ++x) {
      want += x < 4 ? map_t.at(y, x) : map2_t.at(y, x);
    }
  }
  want /= 48.0;
  CHECK(got == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("scalar triplet loss is zero when both branches are satisfied") {
  diff::Graph g;
  refl::CrossViewNodes nodes;
  nodes.pos_error = {&g, g.constant(Tensor(3, 3, 1))};  // pos = 0
  nodes.neg_error = {&g, g.constant(Tensor::full(3, 3, 1, 1.0f))};
  nodes.validity = Tensor::full(3, 3, 1, 1.0f);
  Tensor half = Tensor(3, 3, 1);
  for (int i = 0; i < 4; ++i) half[i] = 1.0f;
  refl::ReflectiveMask m{half, 0.5};
  auto [map, scalar] = refl::triplet_loss(nodes, m);
  CHECK(scalar.scalar() == doctest::Approx(0.0));
}

}  // TEST_SUITE
