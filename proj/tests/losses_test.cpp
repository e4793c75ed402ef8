#include <cmath>

#include "cvfc/losses.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cvfc;
using cvfc::test::Gen;

namespace {

double soft_margin_ref(double x, double y) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return -(y * std::log(s) + (1.0 - y) * std::log(1.0 - s));
}

double msm(Graph& g, const Tensor& x, const Tensor& y) { return multilabel_soft_margin(g.constant(x), y).value().item(); }

double dist(const Tensor& a, const Tensor& b) {
  Graph g;
  return consistency_loss(g.constant(a), g.constant(b)).value().item();
}

}  // namespace

TEST_CASE("multilabel_soft_margin examples") {
  Graph g;
  Gen gen(1);
  CHECK(std::abs(msm(g, Tensor::zeros({2, 3}, DType::f64), gen.binary({2, 3})) - std::log(2.0)) <= 1e-9);
  const double v = msm(g, Tensor::from({1, 3}, {2, -2, 0}, DType::f64), Tensor::from({1, 3}, {1, 0, 1}, DType::f64));
  CHECK(v == doctest::Approx(0.315668).epsilon(1e-6));
  CHECK(v == doctest::Approx((soft_margin_ref(2, 1) + soft_margin_ref(-2, 0) + soft_margin_ref(0, 1)) / 3).epsilon(1e-12));
  const double sat =
      msm(g, Tensor::from({1, 4}, {30, -30, 30, -30}, DType::f64), Tensor::from({1, 4}, {1, 0, 1, 0}, DType::f64));
  CHECK(sat < 1e-12);
  CHECK(sat >= 0.0);
  CHECK_THROWS_AS(msm(g, Tensor::zeros({1, 2}), Tensor::from({1, 2}, {0.5, 1.0})), ArgumentError);
  CHECK_THROWS_AS(msm(g, Tensor::zeros({1, 2}), Tensor::zeros({1, 3})), DimensionError);
}

TEST_CASE("property: soft margin is non-negative, stable, and monotone in the logit") {
  Gen gen(2);
  for (int trial = 0; trial < 200; ++trial) {
    const double x = gen.uniform(-60, 60);
    const double y = gen.coin() ? 1.0 : 0.0;
    Graph g;
    const double l = msm(g, Tensor::from({1, 1}, {x}, DType::f64), Tensor::from({1, 1}, {y}, DType::f64));
    const double l2 = msm(g, Tensor::from({1, 1}, {x + 0.1}, DType::f64), Tensor::from({1, 1}, {y}, DType::f64));
    CHECK(std::isfinite(l));
    CHECK(l >= 0.0);
    if (y == 1.0) {
      CHECK(l2 <= l);
    } else {
      CHECK(l2 >= l);
    }
    if (std::abs(x) < 15) CHECK(l == doctest::Approx(soft_margin_ref(x, y)).epsilon(1e-10));
  }
}

TEST_CASE("classification_loss examples") {
  Graph g;
  const Tensor y = Tensor::from({2, 3}, {1, 0, 1, 0, 1, 0}, DType::f64);
  Var zero = g.constant(Tensor::zeros({2, 3}, DType::f64));
  CHECK(classification_loss(zero, zero, zero, y).value().item() == doctest::Approx(3 * std::log(2.0)).epsilon(1e-12));

  Gen gen(3);
  const Tensor x = gen.tensor({2, 3});
  Var xv = g.constant(x);
  CHECK(classification_loss(xv, xv, xv, y).value().item() == doctest::Approx(3 * msm(g, x, y)).epsilon(1e-12));

  const Tensor a = gen.tensor({2, 3}), b = gen.tensor({2, 3}), c = gen.tensor({2, 3});
  const double total = classification_loss(g.constant(a), g.constant(b), g.constant(c), y).value().item();
  CHECK(std::abs(total - (msm(g, a, y) + msm(g, b, y) + msm(g, c, y))) <= 1e-12);
}

TEST_CASE("consistency_loss examples") {
  Gen gen(4);
  const Tensor a = gen.tensor({2, 3, 2, 2}, 0, 1);
  CHECK(dist(a, a) == 0.0);
  Tensor shifted = a;
  for (std::size_t i = 0; i < a.numel(); ++i) shifted.set(i, a.at(i) + 0.2);
  CHECK(dist(a, shifted) == doctest::Approx(0.2).epsilon(1e-12));
  const Tensor b = gen.tensor({2, 3, 2, 2}, 0, 1);
  CHECK(dist(a, b) == dist(b, a));

  Graph g;
  const double sq = consistency_loss(g.constant(a), g.constant(shifted), CamDistance::mean_squared).value().item();
  CHECK(sq == doctest::Approx(0.04).epsilon(1e-12));
  CHECK_THROWS_AS(consistency_loss(g.constant(a), g.constant(Tensor::zeros({2, 3, 2, 1}, DType::f64))),
                  DimensionError);
}

TEST_CASE("property: the consistency distance is a pseudo-metric") {
  Gen gen(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Shape s{gen.index(1, 2), 3, gen.index(1, 4), gen.index(1, 4)};
    const Tensor a = gen.tensor(s, 0, 1), b = gen.tensor(s, 0, 1), c = gen.tensor(s, 0, 1);
    CHECK(dist(a, b) >= 0.0);
    CHECK(dist(a, b) == dist(b, a));
    CHECK(dist(a, a) == 0.0);
    CHECK(dist(a, c) <= dist(a, b) + dist(b, c) + 1e-9);
  }
}

TEST_CASE("cross_loss examples") {
  Gen gen(6);
  const Tensor a = gen.tensor({1, 3, 2, 2}, 0, 1), b = gen.tensor({1, 3, 2, 2}, 0, 1), c = gen.tensor({1, 3, 2, 2}, 0, 1);
  Graph g;
  CHECK(cross_loss(g.constant(a), g.constant(a), g.constant(a)).value().item() == 0.0);
  CHECK(cross_loss(g.constant(a), g.constant(b), g.constant(a)).value().item() == doctest::Approx(dist(a, b)).epsilon(1e-14));
  const double r = cross_loss(g.constant(a), g.constant(b), g.constant(c)).value().item();
  CHECK(std::abs(r - (dist(a, c) + dist(c, b))) <= 1e-12);

  LossOptions alt;
  alt.cross_pairing = CrossPairing::cam1_cam2;
  const double r2 = cross_loss(g.constant(a), g.constant(b), g.constant(c), alt).value().item();
  CHECK(std::abs(r2 - (dist(a, c) + dist(a, b))) <= 1e-12);
}

TEST_CASE("total_loss examples") {
  Graph g;
  auto s = [&](double v) { return g.constant(Tensor::scalar(v, DType::f64)); };
  CHECK(total_loss(s(0), s(0), s(0), s(0), s(0)).breakdown().total == 0.0);
  const LossBreakdown b = total_loss(s(2.0794), s(0), s(0), s(0), s(0)).breakdown();
  CHECK(b.total == 2.0794);
  CHECK(b.l_cls_total == 2.0794);
  const LossBreakdown partial = total_loss(s(0.5), s(0.25), s(0.125), Var{}, Var{}).breakdown();
  CHECK(partial.total == 0.875);
  CHECK(partial.l_cons == 0.0);
  CHECK(partial.l_cross == 0.0);
}

TEST_CASE("property: total equals its components bit for bit") {
  Gen gen(7);
  for (int trial = 0; trial < 1000; ++trial) {
    Graph g;
    auto s = [&] { return g.constant(Tensor::scalar(gen.uniform(0, 3))); };
    const LossBreakdown b = total_loss(s(), s(), s(), s(), s()).breakdown();
    const float cls = static_cast<float>(static_cast<float>(b.l_cls_1) + static_cast<float>(b.l_cls_2)) +
                      static_cast<float>(b.l_cls_3);
    CHECK(static_cast<float>(b.l_cls_total) == cls);
    CHECK(static_cast<float>(b.total) ==
          static_cast<float>(static_cast<float>(cls + static_cast<float>(b.l_cons)) + static_cast<float>(b.l_cross)));
    CHECK(b.all_finite());
  }
}

TEST_CASE("consistency gradients reach both inputs") {
  Gen gen(8);
  Graph g;
  Var a = g.input(gen.tensor({1, 3, 3, 3}, 0, 1));
  Var b = g.input(gen.tensor({1, 3, 3, 3}, 0, 1));
  g.backward(consistency_loss(a, b));
  double na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < 27; ++i) {
    na += std::abs(a.grad().at(i));
    nb += std::abs(b.grad().at(i));
  }
  CHECK(na > 0.0);
  CHECK(nb > 0.0);
}

TEST_CASE("option names round-trip") {
  CHECK(cam_distance_from_string(to_string(CamDistance::mean_squared)) == CamDistance::mean_squared);
  CHECK(cross_pairing_from_string(to_string(CrossPairing::cam1_cam2)) == CrossPairing::cam1_cam2);
  CHECK_THROWS_AS(cam_distance_from_string("l3"), ConfigError);
}
