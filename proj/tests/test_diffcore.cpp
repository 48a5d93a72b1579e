#include <doctest.h>

#include <cmath>
#include <random>

#include "refldepth/autodiff.hpp"
#include "test_support.hpp"

using namespace refldepth;
using testutil::check_gradient;
using testutil::random_mask;
using testutil::random_tensor;

namespace {

diff::Value param_value(diff::Graph& g, diff::NodeId id) { return {&g, id}; }

void expect_gradcheck(
    const std::function<Tensor(std::mt19937&)>& make_point,
    const std::function<diff::NodeId(diff::Graph&, diff::NodeId)>& build,
    int seeds = 20, double tol = 1e-3) {
  for (int s = 1; s <= seeds; ++s) {
    const auto r = check_gradient(make_point, build, s);
    REQUIRE(r.found_instance);
    CHECK_MESSAGE(r.max_rel_error < tol, "seed ", s, " error ",
                  r.max_rel_error);
  }
}

}  // namespace

TEST_SUITE("diffcore") {

TEST_CASE("record validates shapes and names the op") {
  diff::Graph g;
  const auto a = g.constant(Tensor(2, 2, 1));
  const auto b = g.constant(Tensor(3, 2, 1));
  CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("op add"),
                       std::invalid_argument);
  CHECK_THROWS_AS(g.add(a, 994), std::invalid_argument);
}

TEST_CASE("trivial forward values") {
  diff::Graph g;
  const auto zeros = g.constant(Tensor(2, 2, 1));
  const auto sum = g.add(zeros, zeros);
  CHECK(g.value(sum).max_value() == 0.0f);

  const auto ones = g.constant(Tensor::full(2, 2, 1, 1.0f));
  const auto prod = g.mul(ones, ones);
  CHECK(g.value(prod).min_value() == 1.0f);
  CHECK(g.value(prod).max_value() == 1.0f);

  const auto e = g.constant(Tensor::full(2, 2, 1, static_cast<float>(M_E)));
  const Tensor logs = g.value(g.log(e));
  for (std::size_t i = 0; i < logs.size(); ++i) {
    CHECK(logs[i] == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("backward of mean is 1/N and of mean(|x|) is sign/N") {
  std::mt19937 rng(3);
  diff::Graph g;
  const auto x = g.parameter(random_tensor(rng, 4, 4, 1, 0.1, 1.0));
  const auto loss = g.mean(x);
  const auto grads = g.backward(loss);
  for (std::size_t i = 0; i < grads.at(x).size(); ++i) {
    CHECK(grads.at(x)[i] == doctest::Approx(1.0 / 16.0));
  }

  diff::Graph g2;
  const auto y = g2.parameter(Tensor::full(4, 4, 1, -1.0f));
  const auto loss2 = g2.mean(g2.abs(y));
  const auto grads2 = g2.backward(loss2);
  for (std::size_t i = 0; i < grads2.at(y).size(); ++i) {
    CHECK(grads2.at(y)[i] == doctest::Approx(-1.0 / 16.0));
  }
}

TEST_CASE("backward rejects non-scalar loss") {
  diff::Graph g;
  const auto x = g.parameter(Tensor(2, 2, 1));
  CHECK_THROWS_AS(g.backward(x), std::invalid_argument);
}

TEST_CASE("backward is deterministic across repeated runs") {
  std::mt19937 rng(7);
  diff::Graph g;
  const auto x = g.parameter(random_tensor(rng, 6, 5, 1, -1.0, 1.0));
  const auto y = g.constant(random_tensor(rng, 6, 5, 1, 0.5, 1.5));
  const auto loss = g.mean(g.mul(g.sigmoid(x), g.div(x, y)));
  const auto g1 = g.backward(loss);
  const auto g2 = g.backward(loss);
  CHECK(bitwise_equal(g1.at(x), g2.at(x)));
}

TEST_CASE("masked mean times count equals masked sum") {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor(rng, 7, 6, 1, -2.0, 2.0);
    const Tensor m = random_mask(rng, 7, 6);
    diff::Graph g;
    const double got =
        g.scalar_value(g.masked_mean(g.constant(x), m));
    double want = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (m[i] != 0.0f) {
        want += x[i];
        ++count;
      }
    }
    if (count == 0) {
      CHECK(got == 0.0);
    } else {
      CHECK(got * static_cast<double>(count) ==
            doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("masked mean of empty mask is zero with zero gradient") {
  diff::Graph g;
  const auto x = g.parameter(Tensor::full(3, 3, 1, 5.0f));
  const auto loss = g.masked_mean(x, Tensor(3, 3, 1));
  CHECK(g.scalar_value(loss) == 0.0);
  const auto grads = g.backward(loss);
  CHECK(grads.at(x).max_value() == 0.0f);
}

TEST_CASE("finite_diff_check on plain double functions") {
  // Sum of squares: analytic gradient 2x.
  const Tensor point = Tensor::full(3, 3, 1, 1.0f);
  Tensor grad(3, 3, 1);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = 2.0f * point[i];
  auto f = [](const Tensor& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      s += static_cast<double>(x[i]) * x[i];
    }
    return s;
  };
  const auto rep = diff::finite_diff_check(f, grad, point, 1e-4);
  CHECK(rep.finite);
  CHECK(rep.max_rel_error < 1e-5);

  // Constant function: both sides are exactly zero.
  auto c = [](const Tensor&) { return 3.5; };
  const auto rep2 =
      diff::finite_diff_check(c, Tensor(3, 3, 1), point, 1e-4);
  CHECK(rep2.max_rel_error == 0.0);
}

TEST_CASE("per-op gradients match central differences") {
  auto plain = [](std::mt19937& rng) {
    return random_tensor(rng, 5, 4, 1, -1.5, 1.5);
  };
  auto positive = [](std::mt19937& rng) {
    return random_tensor(rng, 5, 4, 1, 0.3, 2.0);
  };

  SUBCASE("add") {
    expect_gradcheck(plain, [](diff::Graph& g, diff::NodeId p) {
      const auto c = g.constant(Tensor::full(5, 4, 1, 0.7f));
      return g.mean(g.mul(g.add(p, c), g.add(p, c)));
    });
  }
  SUBCASE("sub and neg") {
    expect_gradcheck(plain, [](diff::Graph& g, diff::NodeId p) {
      const auto c = g.constant(Tensor::full(5, 4, 1, 0.2f));
      return g.mean(g.mul(g.sub(p, c), g.neg(p)));
    });
  }
  SUBCASE("mul") {
    expect_gradcheck(plain, [](diff::Graph& g, diff::NodeId p) {
      return g.mean(g.mul(p, g.mul(p, p)));
    });
  }
  SUBCASE("div by tensor") {
    expect_gradcheck(positive, [](diff::Graph& g, diff::NodeId p) {
      const auto c = g.constant(Tensor::full(5, 4, 1, 1.3f));
      return g.mean(g.div(c, p));
    });
  }
  SUBCASE("div by graph scalar") {
    expect_gradcheck(positive, [](diff::Graph& g, diff::NodeId p) {
      return g.mean(g.div(p, g.mean(p)));
    });
  }
  SUBCASE("abs") {
    expect_gradcheck(plain, [](diff::Graph& g, diff::NodeId p) {
      return g.mean(g.abs(p));
    });
  }
  SUBCASE("log") {
    expect_gradcheck(positive, [](diff::Graph& g, diff::NodeId p) {
      return g.mean(g.log(p));
    });
  }
  SUBCASE("hinge") {
    expect_gradcheck(plain, [](diff::Graph& g, diff::NodeId p) {
      return g.mean(g.hinge(p));
    });
  }
  SUBCASE("sigmoid") {
    expect_gradcheck(plain, [](diff::Graph& g, diff::NodeId p) {
      return g.mean(g.sigmoid(p));
    });
  }
  SUBCASE("clamp") {
    expect_gradcheck(plain, [](diff::Graph& g, diff::NodeId p) {
      return g.mean(g.mul(g.clamp(p, -1.0f, 1.0f), p));
    });
  }
  SUBCASE("scale") {
    expect_gradcheck(plain, [](diff::Graph& g, diff::NodeId p) {
      return g.mean(g.scale(p, 2.5f));
    });
  }
  SUBCASE("channel_mean") {
    auto multi = [](std::mt19937& rng) {
      return random_tensor(rng, 5, 4, 3, -1.0, 1.0);
    };
    expect_gradcheck(multi, [](diff::Graph& g, diff::NodeId p) {
      return g.mean(g.mul(g.channel_mean(p), g.channel_mean(p)));
    });
  }
  SUBCASE("pixel_min") {
    expect_gradcheck(plain, [](diff::Graph& g, diff::NodeId p) {
      std::mt19937 rng(99);
      const auto a = g.constant(random_tensor(rng, 5, 4, 1, -1.5, 1.5));
      const auto b = g.constant(random_tensor(rng, 5, 4, 1, -1.5, 1.5));
      const diff::NodeId ops[] = {p, a, b};
      return g.mean(g.pixel_min(ops));
    });
  }
  SUBCASE("masked_mean") {
    expect_gradcheck(plain, [](diff::Graph& g, diff::NodeId p) {
      std::mt19937 rng(123);
      return g.masked_mean(g.mul(p, p), random_mask(rng, 5, 4));
    });
  }
  SUBCASE("box_filter3") {
    expect_gradcheck(plain, [](diff::Graph& g, diff::NodeId p) {
      return g.mean(g.mul(g.box_filter3(p), p));
    });
  }
  SUBCASE("select") {
    expect_gradcheck(plain, [](diff::Graph& g, diff::NodeId p) {
      std::mt19937 rng(5);
      const auto other = g.constant(random_tensor(rng, 5, 4, 1, -1.0, 1.0));
      return g.mean(g.select(random_mask(rng, 5, 4), p, other));
    });
  }
  SUBCASE("bilinear w.r.t. source") {
    auto img = [](std::mt19937& rng) {
      return random_tensor(rng, 8, 6, 1, 0.0, 1.0);
    };
    expect_gradcheck(img, [](diff::Graph& g, diff::NodeId p) {
      std::mt19937 rng(42);
      const auto u = g.constant(random_tensor(rng, 8, 6, 1, 0.1, 4.9));
      const auto v = g.constant(random_tensor(rng, 8, 6, 1, 0.1, 6.9));
      return g.mean(g.bilinear(p, u, v));
    });
  }
}

TEST_CASE("bilinear gather coordinate gradients match central differences") {
  // Loss over a random 8x6 image, differentiated w.r.t. sample coordinates.
  std::mt19937 img_rng(2024);
  const Tensor img = random_tensor(img_rng, 8, 6, 1, 0.0, 1.0);
  auto coords = [](std::mt19937& rng) {
    return random_tensor(rng, 8, 6, 1, 0.15, 4.85);
  };
  expect_gradcheck(coords, [&img](diff::Graph& g, diff::NodeId p) {
    std::mt19937 rng(7);
    const auto src = g.constant(img);
    const auto v = g.constant(random_tensor(rng, 8, 6, 1, 0.15, 6.85));
    return g.mean(g.bilinear(src, p, v));
  });
}

TEST_CASE("gradients of non-parameter leaves are discarded") {
  diff::Graph g;
  const auto x = g.parameter(Tensor::full(2, 2, 1, 1.0f));
  const auto c = g.constant(Tensor::full(2, 2, 1, 2.0f));
  const auto loss = g.mean(g.mul(x, c));
  const auto grads = g.backward(loss);
  CHECK(grads.size() == 1);
  CHECK(grads.count(x) == 1);
}

TEST_CASE("exported values stay finite") {
  std::mt19937 rng(31);
  diff::Graph g;
  const auto x = g.constant(random_tensor(rng, 6, 6, 3, 0.0, 1.0));
  const auto y = g.constant(random_tensor(rng, 6, 6, 3, 0.2, 1.0));
  const diff::NodeId nodes[] = {
      g.add(x, y),           g.mul(x, y),
      g.div(x, y),           g.box_filter3(x),
      g.sigmoid(g.neg(x)),   g.channel_mean(g.abs(g.sub(x, y)))};
  for (const auto id : nodes) {
    CHECK(g.value(id).all_finite());
  }
}

TEST_CASE("Value operators compose") {
  diff::Graph g;
  diff::Value x{&g, g.parameter(Tensor::full(3, 3, 1, 2.0f))};
  diff::Value loss = mean((x * 3.0 - 1.0) * x + 0.5);
  CHECK(loss.scalar() == doctest::Approx(10.5));
}

}  // TEST_SUITE
