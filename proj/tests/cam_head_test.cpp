#include <cmath>

#include "cvfc/cam_head.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cvfc;
using cvfc::test::Gen;

namespace {

double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

TapSet make_taps(Graph& g, Gen& gen, std::vector<Shape> shapes) {
  TapSet taps;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    taps.push_back({"t" + std::to_string(i), g.constant(gen.tensor(shapes[i], -1, 1, DType::f64))});
  }
  return taps;
}

}  // namespace

TEST_CASE("integrate_taps examples") {
  Gen gen(1);
  Graph g;
  const TapSet taps = make_taps(g, gen, {{1, 64, 8, 8}, {1, 128, 4, 4}});
  CHECK(integrate_taps(taps).shape() == Shape{1, 192, 8, 8});

  TapSet constant = {{"a", g.constant(Tensor::full({1, 2, 4, 4}, 0.25))}, {"b", g.constant(Tensor::full({1, 1, 2, 2}, -3.0))}};
  const Tensor c = integrate_taps(constant).value();
  for (std::size_t i = 0; i < 32; ++i) CHECK(c.at(i) == doctest::Approx(0.25));
  for (std::size_t i = 32; i < 48; ++i) CHECK(c.at(i) == doctest::Approx(-3.0));

  CHECK_THROWS_AS(integrate_taps(TapSet{}), ArgumentError);
}

TEST_CASE("property: permuting taps permutes the channel blocks") {
  Gen gen(2);
  for (int trial = 0; trial < 10; ++trial) {
    Graph g;
    const std::size_t c0 = gen.index(1, 4), c1 = gen.index(1, 4), c2 = gen.index(1, 4);
    const TapSet taps = make_taps(g, gen, {{1, c0, 8, 8}, {1, c1, 4, 4}, {1, c2, 2, 2}});
    const TapSet perm = {taps[2], taps[0], taps[1]};
    const Tensor a = integrate_taps(taps).value();
    const Tensor b = integrate_taps(perm).value();
    CHECK(a.dim(1) == c0 + c1 + c2);
    const std::size_t plane = 64;
    auto block_equal = [&](std::size_t a_off, std::size_t b_off, std::size_t channels) {
      for (std::size_t i = 0; i < channels * plane; ++i) {
        if (a.at(a_off * plane + i) != b.at(b_off * plane + i)) return false;
      }
      return true;
    };
    CHECK(block_equal(0, c2, c0));
    CHECK(block_equal(c0, c2 + c0, c1));
    CHECK(block_equal(c0 + c1, 0, c2));
  }
}

TEST_CASE("cam_forward examples") {
  Graph g;
  Tensor feat({1, 2, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) {
    feat.set(i, 1.0);
    feat.set(9 + i, 2.0);
  }
  const CamOutput out =
      cam_forward(g.constant(feat), g.constant(Tensor::from({1, 2}, {0.5, 0.25})), g.constant(Tensor::zeros({1})));
  for (std::size_t i = 0; i < 9; ++i) CHECK(out.maps.value().at(i) == doctest::Approx(1.0));
  CHECK(out.scores.value().item() == doctest::Approx(0.73106).epsilon(1e-5));

  const CamOutput zero = cam_forward(g.constant(Tensor::zeros({2, 4, 2, 2})), g.constant(Tensor::full({3, 4}, 0.3)),
                                     g.constant(Tensor::zeros({3})));
  for (std::size_t i = 0; i < 6; ++i) CHECK(zero.scores.value().at(i) == 0.5);

  const CamOutput constant = cam_forward(g.constant(Tensor::zeros({1, 1, 2, 2})), g.constant(Tensor::zeros({1, 1})),
                                         g.constant(Tensor::full({1}, -1.3)));
  CHECK(constant.scores.value().item() == doctest::Approx(sigmoid_ref(-1.3)));
  CHECK_THROWS_AS(cam_forward(g.constant(Tensor::zeros({1, 3, 2, 2})), g.constant(Tensor::zeros({2, 4})), std::nullopt),
                  DimensionError);
}

TEST_CASE("property: scores are the sigmoid of the spatial mean") {
  Gen gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    Graph g;
    const std::size_t cf = gen.index(1, 6), c = gen.index(1, 4), h = gen.index(1, 6), w = gen.index(1, 6);
    const CamOutput out = cam_forward(g.constant(gen.tensor({2, cf, h, w}, -2, 2, DType::f32)),
                                      g.constant(gen.tensor({c, cf}, -1, 1, DType::f32)),
                                      g.constant(gen.tensor({c}, -1, 1, DType::f32)));
    for (std::size_t k = 0; k < 2 * c; ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < h * w; ++i) mean += out.maps.value().at(k * h * w + i);
      mean /= static_cast<double>(h * w);
      CHECK(std::abs(out.scores.value().at(k) - sigmoid_ref(mean)) <= 1e-6);
      CHECK(out.scores.value().at(k) > 0.0);
      CHECK(out.scores.value().at(k) < 1.0);
    }
  }
}

TEST_CASE("normalize_cam examples") {
  Graph g;
  const Tensor c = normalize_cam(g.constant(Tensor::full({1, 2, 3, 3}, 4.2))).value();
  for (std::size_t i = 0; i < c.numel(); ++i) CHECK(c.at(i) == 0.0);

  const Tensor r = normalize_cam(g.constant(Tensor::from({1, 1, 1, 2}, {0.0, 2.0}, DType::f64))).value();
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == doctest::Approx(2.0 / (2.0 + 1e-5)).epsilon(1e-14));

  const Tensor u = normalize_cam(g.constant(Tensor::from({1, 1, 2, 2}, {0.0, 1.0, 0.25, 0.5}, DType::f64))).value();
  const double s = 1.0 / (1.0 + 1e-5);
  CHECK(u.to_vector() == std::vector<double>{0.0, s, 0.25 * s, 0.5 * s});

  CamStack bad{Tensor::zeros({1, 2, 2, 2}), {"tumor"}};
  CHECK_THROWS_AS(bad.validate(), DimensionError);
}

TEST_CASE("property: normalize_cam is near-idempotent, in range, and keeps the argmax") {
  Gen gen(4);
  for (int trial = 0; trial < 100; ++trial) {
    Graph g;
    const std::size_t c = gen.index(1, 3), h = gen.index(2, 6), w = gen.index(2, 6);
    const Tensor m = gen.tensor({1, c, h, w}, -5, 5);
    const Tensor once = normalize_cam(g.constant(m)).value();
    const Tensor twice = normalize_cam(g.constant(once)).value();
    CHECK(cvfc::test::max_abs_diff(once, twice) <= 2e-5);
    for (std::size_t k = 0; k < c; ++k) {
      std::size_t am = 0, an = 0;
      for (std::size_t i = 0; i < h * w; ++i) {
        const double v = once.at(k * h * w + i);
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
        if (m.at(k * h * w + i) > m.at(k * h * w + am)) am = i;
        if (v > once.at(k * h * w + an)) an = i;
      }
      CHECK(am == an);
    }
  }
}

TEST_CASE("CamHead registers a [C, Cf] weight and a bias") {
  ParameterStore store;
  std::mt19937_64 rng(5);
  CamHead head(store, "h", 7, 3, rng, DType::f32);
  CHECK(head.in_channels() == 7);
  CHECK(head.classes() == 3);
  CHECK(store.size() == 2);
}
