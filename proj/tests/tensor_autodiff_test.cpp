#include <cmath>
#include <numeric>

#include "cvfc/gradcheck.hpp"
#include "cvfc/ops.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cvfc;
using cvfc::test::Gen;

namespace {

using Args = std::span<const Var>;

// Independent window average for adaptive pooling.
double brute_pool(const Tensor& x, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow, std::size_t i,
                  std::size_t j) {
  const std::size_t y0 = i * h / oh, y1 = ((i + 1) * h + oh - 1) / oh;
  const std::size_t x0 = j * w / ow, x1 = ((j + 1) * w + ow - 1) / ow;
  double s = 0.0;
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t xx = x0; xx < x1; ++xx) s += x.at(y * w + xx);
  }
  return s / static_cast<double>((y1 - y0) * (x1 - x0));
}

// Bilinear sample with src = (dst + 0.5) * in/out - 0.5, clamped.
double brute_bilinear(const Tensor& x, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow, std::size_t i,
                      std::size_t j) {
  auto coord = [](std::size_t d, std::size_t in, std::size_t out) {
    double s = (static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  const double sy = coord(i, h, oh), sx = coord(j, w, ow);
  const auto y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  auto at = [&](std::size_t y, std::size_t xx) { return x.at(y * w + xx); };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

}  // namespace

TEST_CASE("tensor extents and buffer length agree") {
  Gen gen(1);
  for (int trial = 0; trial < 50; ++trial) {
    Shape s;
    const std::size_t nd = gen.index(1, 4);
    for (std::size_t d = 0; d < nd; ++d) s.push_back(gen.index(1, 5));
    const Tensor t(s, gen.coin() ? DType::f32 : DType::f64);
    CHECK(t.numel() == shape_numel(s));
    CHECK(t.to_vector().size() == t.numel());
  }
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST_CASE("conv2d examples") {
  Graph g;
  Var x = g.input(Tensor::full({1, 1, 3, 3}, 1.0));
  Var w = g.input(Tensor::full({1, 1, 3, 3}, 1.0));
  CHECK(conv2d(x, w, std::nullopt).value().item() == doctest::Approx(9.0));

  Gen gen(2);
  Var xr = g.input(gen.tensor({2, 3, 5, 5}, -2, 2, DType::f32));
  Tensor idw = Tensor::zeros({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) idw.set(c * 3 + c, 1.0);
  Var out = conv2d(xr, g.input(idw), g.input(Tensor::zeros({3})));
  CHECK(out.value().identical(xr.value()));

  const Tensor y = conv2d(g.input(Tensor::full({1, 1, 7, 6}, 1.0)), g.input(Tensor::full({2, 1, 3, 2}, 1.0)),
                          std::nullopt, {2, 1})
                       .value();
  CHECK(y.shape() == Shape{1, 2, 4, 4});  // floor((7+2-3)/2)+1, floor((6+2-2)/2)+1

  CHECK_THROWS_AS(conv2d(g.input(Tensor::zeros({1, 2, 4, 4})), g.input(Tensor::zeros({1, 3, 3, 3})), std::nullopt),
                  DimensionError);
}

TEST_CASE("conv2d weight gradient matches central differences") {
  Gen gen(3);
  const auto r = grad_check(
      "conv2d", {gen.tensor({2, 3, 5, 5}), gen.tensor({4, 3, 3, 3}), gen.tensor({4})},
      [](Graph&, Args a) { return sum(conv2d(a[0], a[1], a[2], {1, 1})); }, {}, {false, true, true});
  CHECK(r.passed);
  CHECK(r.max_rel_err <= 1e-4);
}

TEST_CASE("conv1x1 examples") {
  Graph g;
  Tensor x({1, 2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    x.set(i, 1.0);
    x.set(4 + i, 2.0);
  }
  const Tensor y = conv1x1(g.input(x), g.input(Tensor::from({1, 2}, {0.5, 0.25})), g.input(Tensor::zeros({1})))
                       .value();
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.at(i) == doctest::Approx(1.0));

  Gen gen(4);
  const Tensor xr = gen.tensor({2, 3, 4, 4}, -2, 2, DType::f32);
  Tensor eye = Tensor::zeros({3, 3});
  for (std::size_t c = 0; c < 3; ++c) eye.set(c * 3 + c, 1.0);
  CHECK(conv1x1(g.input(xr), g.input(eye), g.input(Tensor::zeros({3}))).value().identical(xr));
  CHECK_THROWS_AS(conv1x1(g.input(xr), g.input(Tensor::zeros({2, 4})), std::nullopt), DimensionError);

  const auto r = grad_check("conv1x1", {gen.tensor({2, 3, 2, 2}), gen.tensor({4, 3}), gen.tensor({4})},
                            [](Graph&, Args a) { return conv1x1(a[0], a[1], a[2]); });
  CHECK(r.passed);
}

TEST_CASE("adaptive_avg_pool examples") {
  Graph g;
  const Tensor c = adaptive_avg_pool(g.input(Tensor::full({1, 1, 5, 7}, 3.0)), 2, 3).value();
  for (std::size_t i = 0; i < c.numel(); ++i) CHECK(c.at(i) == 3.0);
  CHECK(adaptive_avg_pool(g.input(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4})), 1, 1).value().item() == 2.5);
  CHECK_THROWS_AS(adaptive_avg_pool(g.input(Tensor::zeros({1, 1, 2, 2})), 3, 1), DimensionError);
}

TEST_CASE("adaptive_avg_pool matches brute-force window averages") {
  Gen gen(5);
  for (auto [h, w, oh, ow] : {std::array<std::size_t, 4>{4, 4, 2, 2}, {5, 5, 3, 2}, {7, 3, 4, 3}, {6, 6, 4, 5}}) {
    Graph g;
    Tensor ramp({1, 1, h, w}, DType::f64);
    for (std::size_t i = 0; i < ramp.numel(); ++i) ramp.set(i, static_cast<double>(i) + gen.uniform(0, 0.5));
    const Tensor y = adaptive_avg_pool(g.input(ramp), oh, ow).value();
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        CHECK(y.at(i * ow + j) == doctest::Approx(brute_pool(ramp, h, w, oh, ow, i, j)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("property: pooling to 1x1 is the spatial mean") {
  Gen gen(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = gen.index(1, 9), w = gen.index(1, 9);
    const Tensor x = gen.tensor({1, 1, h, w});
    Graph g;
    const double pooled = adaptive_avg_pool(g.input(x), 1, 1).value().item();
    const auto v = x.to_vector();
    CHECK(std::abs(pooled - std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size())) <= 1e-12);
  }
}

TEST_CASE("softmax examples") {
  Graph g;
  const Tensor a = softmax(g.input(Tensor::from({2}, {0.0, 0.0}, DType::f64)), 0).value();
  CHECK(a.at(0) == 0.5);
  CHECK(a.at(1) == 0.5);
  const Tensor b = softmax(g.input(Tensor::from({2}, {std::log(2.0), 0.0}, DType::f64)), 0).value();
  CHECK(b.at(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(b.at(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  Gen gen(7);
  const Tensor x = gen.tensor({6});
  const Tensor y = softmax(g.input(x), 0).value();
  double z = 0.0;
  for (std::size_t i = 0; i < 6; ++i) z += std::exp(x.at(i));
  double total = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::abs(y.at(i) - std::exp(x.at(i)) / z) <= 1e-12);
    total += y.at(i);
  }
  CHECK(std::abs(total - 1.0) <= 1e-6);
}

TEST_CASE("property: softmax is a distribution and shift invariant") {
  Gen gen(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = gen.index(1, 4), cols = gen.index(1, 8);
    const Tensor x = gen.tensor({rows, cols}, -20, 20);
    Tensor shifted = x;
    for (std::size_t r = 0; r < rows; ++r) {
      const double c = gen.uniform(-50, 50);
      for (std::size_t k = 0; k < cols; ++k) shifted.set(r * cols + k, x.at(r * cols + k) + c);
    }
    Graph g;
    const Tensor y = softmax(g.input(x), 1).value();
    const Tensor ys = softmax(g.input(shifted), 1).value();
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < cols; ++k) {
        CHECK(y.at(r * cols + k) >= 0.0);
        s += y.at(r * cols + k);
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
    CHECK(cvfc::test::max_abs_diff(y, ys) <= 1e-9);
  }
}

TEST_CASE("elementwise and resize examples") {
  Graph g;
  CHECK(sigmoid(g.input(Tensor::scalar(0.0))).value().item() == 0.5);
  const Tensor r = bilinear_resize(g.input(Tensor::full({1, 2, 3, 5}, 0.7)), 8, 4).value();
  for (std::size_t i = 0; i < r.numel(); ++i) CHECK(r.at(i) == doctest::Approx(0.7));
  CHECK(relu(g.input(Tensor::from({3}, {-1.0, 0.0, 2.0}))).value().to_vector() == std::vector<double>{0, 0, 2});
}

TEST_CASE("bilinear_resize matches the coordinate-map oracle") {
  Gen gen(9);
  for (auto [h, w, oh, ow] : {std::array<std::size_t, 4>{3, 3, 6, 6}, {4, 5, 7, 3}, {6, 6, 24, 24}, {5, 2, 2, 9}}) {
    Graph g;
    const Tensor x = gen.tensor({1, 1, h, w});
    const Tensor y = bilinear_resize(g.input(x), oh, ow).value();
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        CHECK(std::abs(y.at(i * ow + j) - brute_bilinear(x, h, w, oh, ow, i, j)) <= 1e-12);
      }
    }
  }
}

TEST_CASE("gradient checks of individual ops") {
  Gen gen(10);
  const auto add_r = grad_check("add", {gen.tensor({2, 3}), gen.tensor({2, 3})},
                                [](Graph&, Args a) { return add(a[0], a[1]); });
  CHECK(add_r.max_rel_err <= 1e-10);

  Tensor away = gen.tensor({3, 4});
  for (std::size_t i = 0; i < away.numel(); ++i) {
    const double v = away.at(i);
    if (std::abs(v) < 1e-2) away.set(i, v < 0 ? -0.5 : 0.5);
  }
  CHECK(grad_check("relu", {away}, [](Graph&, Args a) { return relu(a[0]); }).passed);

  Tensor rm = gen.tensor({3}, -0.5, 0.5), rv = gen.tensor({3}, 0.5, 1.5);
  const auto bn = grad_check(
      "batchnorm2d", {gen.tensor({2, 3, 2, 2}), gen.tensor({3}), gen.tensor({3})},
      [&](Graph&, Args a) { return batchnorm2d(a[0], a[1], a[2], rm, rv, Mode::eval); });
  CHECK(bn.passed);
  CHECK(bn.max_rel_err <= 1e-4);

  const auto sm = grad_check("softmax", {gen.tensor({2, 5})}, [](Graph&, Args a) { return softmax(a[0], 1); });
  CHECK(sm.passed);
  const auto rs = grad_check("bilinear_resize", {gen.tensor({1, 2, 3, 3})},
                             [](Graph&, Args a) { return bilinear_resize(a[0], 5, 4); });
  CHECK(rs.passed);
}

TEST_CASE("gradcheck catches a corrupted backward") {
  Gen gen(11);
  testing::set_backward_fault("mul");
  const auto r = grad_check("mul", {gen.tensor({2, 3}), gen.tensor({2, 3})},
                            [](Graph&, Args a) { return mul(a[0], a[1]); });
  testing::set_backward_fault("");
  CHECK_FALSE(r.passed);
  CHECK(r.max_rel_err > 0.1);
}

TEST_CASE("batchnorm running statistics use momentum 0.9") {
  Gen gen(12);
  const Tensor x = gen.tensor({2, 1, 2, 2});
  Tensor rm = Tensor::zeros({1}, DType::f64), rv = Tensor::full({1}, 1.0, DType::f64);
  Graph g;
  batchnorm2d(g.input(x), g.input(Tensor::full({1}, 1.0, DType::f64)), g.input(Tensor::zeros({1}, DType::f64)), rm,
              rv, Mode::train);
  const auto v = x.to_vector();
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / 8.0;
  double ss = 0.0;
  for (double e : v) ss += (e - mu) * (e - mu);
  CHECK(rm.at(0) == doctest::Approx(0.1 * mu).epsilon(1e-12));
  CHECK(rv.at(0) == doctest::Approx(0.9 + 0.1 * ss / 7.0).epsilon(1e-12));

  const Tensor before = rm;
  Graph g2;
  batchnorm2d(g2.input(x), g2.input(Tensor::full({1}, 1.0, DType::f64)), g2.input(Tensor::zeros({1}, DType::f64)), rm,
              rv, Mode::eval);
  CHECK(rm.identical(before));
}

TEST_CASE("property: fan-out gradients add up") {
  Gen gen(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = gen.index(1, 5);
    const Tensor x = gen.tensor({3, 2});
    Graph g1;
    Var a = g1.input(x);
    g1.backward(sum(square(a)));
    Graph gk;
    Var b = gk.input(x);
    Var total = sum(square(b));
    for (std::size_t i = 1; i < k; ++i) total = add(total, sum(square(b)));
    gk.backward(total);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      CHECK(b.grad().at(i) == doctest::Approx(static_cast<double>(k) * a.grad().at(i)).epsilon(1e-12));
    }
  }
}

TEST_CASE("property: ops leave their inputs untouched and are deterministic") {
  Gen gen(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = gen.tensor({2, 3, 4, 4});
    const Tensor w = gen.tensor({2, 3, 3, 3});
    auto run = [&](Graph& g, Var& xv) {
      xv = g.input(x);
      Var y = conv2d(xv, g.input(w), std::nullopt, {1, 1});
      y = bilinear_resize(relu(y), 6, 6);
      y = softmax(flatten_spatial(adaptive_avg_pool(y, 3, 3)), 2);
      return sum(mul(y, y));
    };
    Graph g1, g2;
    Var x1, x2;
    Var l1 = run(g1, x1), l2 = run(g2, x2);
    g1.backward(l1);
    CHECK(x1.value().identical(x));
    CHECK(l1.value().identical(l2.value()));
  }
}

TEST_CASE("non-finite op outputs raise NumericError") {
  Graph g;
  Var big = g.input(Tensor::full({2}, 3e38));
  CHECK_THROWS_AS(add(big, big), NumericError);
  Graph unchecked(false);
  Var b2 = unchecked.input(Tensor::full({2}, 3e38));
  CHECK_FALSE(add(b2, b2).value().all_finite());
}

TEST_CASE("backward runs once and needs a scalar root") {
  Graph g;
  Var x = g.input(Tensor::full({2, 2}, 1.0));
  CHECK_THROWS_AS(g.backward(square(x)), DimensionError);
  Var s = sum(x);
  g.backward(s);
  CHECK_THROWS_AS(g.backward(s), ArgumentError);
}
