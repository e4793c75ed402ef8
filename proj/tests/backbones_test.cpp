#include "cvfc/backbone.hpp"
#include "cvfc/gradcheck.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cvfc;
using cvfc::test::Gen;

namespace {

std::vector<Parameter*> block_parameters(const ResidualBlock& b) {
  std::vector<Parameter*> ps;
  for (const auto& c : b.convs) ps.push_back(&c.weight());
  for (const auto& n : b.norms) {
    ps.push_back(&n.gamma());
    ps.push_back(&n.beta());
  }
  return ps;
}

}  // namespace

TEST_CASE("mini38 tap shapes on a 32x32 input") {
  ParameterStore store;
  Backbone bb(BackboneConfig::preset("mini38"), 1, store, "b");
  Graph g;
  const TapSet taps = bb.forward(g, g.constant(Tensor::zeros({1, 3, 32, 32})), Mode::eval);
  REQUIRE(taps.size() == 3);
  CHECK(taps[0].feature.shape() == Shape{1, 32, 16, 16});
  CHECK(taps[1].feature.shape() == Shape{1, 64, 8, 8});
  CHECK(taps[2].feature.shape() == Shape{1, 128, 4, 4});
  CHECK(bb.tap_channels() == std::vector<std::size_t>{32, 64, 128});
}

TEST_CASE("mini50 builds with bottleneck taps c2, c3, c4") {
  ParameterStore store;
  Backbone bb(BackboneConfig::preset("mini50"), 2, store, "b");
  CHECK(bb.config().tap_names == std::vector<std::string>{"c2", "c3", "c4"});
  Graph g;
  const TapSet taps = bb.forward(g, g.constant(Tensor::zeros({2, 3, 16, 16})), Mode::train);
  CHECK(taps[2].name == "c4");
  CHECK(taps[2].feature.shape() == Shape{2, 256, 2, 2});
  CHECK(bb.stages()[0][0].kind == BlockKind::bottleneck);
}

TEST_CASE("same seed gives bitwise-identical parameters") {
  ParameterStore s1, s2, s3;
  Backbone a(BackboneConfig::preset("mini38"), 7, s1, "b");
  Backbone b(BackboneConfig::preset("mini38"), 7, s2, "b");
  Backbone c(BackboneConfig::preset("mini38"), 8, s3, "b");
  auto pa = s1.all(), pb = s2.all(), pc = s3.all();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->value.identical(pb[i]->value));
    any_diff = any_diff || !pa[i]->value.identical(pc[i]->value);
  }
  CHECK(any_diff);
}

TEST_CASE("config validation") {
  BackboneConfig cfg = BackboneConfig::preset("mini38");
  cfg.stages.pop_back();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = BackboneConfig::preset("mini38");
  cfg.tap_names.push_back("conv9");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = BackboneConfig::preset("mini38");
  cfg.stages[1].stride = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(BackboneConfig::preset("resnet101"), ConfigError);
}

TEST_CASE("input size must divide by the stride product") {
  ParameterStore store;
  Backbone bb(BackboneConfig::preset("mini38"), 1, store, "b");
  Graph g;
  CHECK_THROWS_AS(bb.forward(g, g.constant(Tensor::zeros({1, 3, 20, 20})), Mode::eval), DimensionError);
}

TEST_CASE("zero input with zero-initialized residual scales stays finite") {
  BackboneConfig cfg = BackboneConfig::preset("mini50");
  cfg.zero_init_residual = true;
  ParameterStore store;
  Backbone bb(cfg, 3, store, "b");
  Graph g;
  for (const auto& t : bb.forward(g, g.constant(Tensor::zeros({2, 3, 16, 16})), Mode::train)) {
    CHECK(t.feature.value().all_finite());
  }
}

TEST_CASE("eval-mode forward is pure") {
  ParameterStore store;
  Backbone bb(BackboneConfig::preset("mini38"), 4, store, "b");
  Gen gen(4);
  const Tensor x = gen.tensor({2, 3, 16, 16}, -2, 2, DType::f32);
  Graph g1, g2;
  const TapSet a = bb.forward(g1, g1.constant(x), Mode::eval);
  const TapSet b = bb.forward(g2, g2.constant(x), Mode::eval);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].feature.value().identical(b[i].feature.value()));
}

TEST_CASE("property: residual block with zero final scale passes the shortcut through") {
  BackboneConfig cfg = BackboneConfig::preset("mini38");
  cfg.zero_init_residual = true;
  ParameterStore store;
  Backbone bb(cfg, 5, store, "b");
  const ResidualBlock& block = bb.stages()[0][1];  // stride 1, identity shortcut
  REQUIRE_FALSE(block.shortcut.has_value());
  Gen gen(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = gen.tensor({2, 32, 4, 4}, 0.0, 3.0, DType::f32);
    for (Mode mode : {Mode::train, Mode::eval}) {
      Graph g;
      CHECK(block.forward(g, g.constant(x), mode).value().identical(x));
    }
  }
}

TEST_CASE("property: tap shapes depend only on config and input shape") {
  Gen gen(6);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t side = 8 * gen.index(1, 4);
    ParameterStore s1, s2;
    Backbone a(BackboneConfig::preset("mini38"), gen.index(0, 1000), s1, "b");
    Backbone b(BackboneConfig::preset("mini38"), gen.index(0, 1000), s2, "b");
    Graph g;
    const TapSet ta = a.forward(g, g.constant(gen.tensor({1, 3, side, side}, -1, 1, DType::f32)), Mode::eval);
    const TapSet tb = b.forward(g, g.constant(gen.tensor({1, 3, side, side}, -1, 1, DType::f32)), Mode::eval);
    for (std::size_t i = 0; i < ta.size(); ++i) {
      CHECK(ta[i].feature.shape() == tb[i].feature.shape());
      if (i > 0) CHECK(ta[i].feature.shape()[2] <= ta[i - 1].feature.shape()[2]);
    }
  }
}

TEST_CASE("basic block gradient with frozen batchnorm") {
  ParameterStore store;
  Backbone bb(BackboneConfig::preset("tiny38"), 6, store, "b", DType::f64);
  const ResidualBlock& block = bb.stages()[0][0];
  Gen gen(7);
  const Tensor x = gen.tensor({2, 3, 4, 4});
  const Tensor w = gen.tensor({2, 4, 2, 2});
  auto params = block_parameters(block);
  const auto r = grad_check_parameters(
      "basic_block", params,
      [&](Graph& g) { return sum(mul(block.forward(g, g.constant(x), Mode::eval), g.constant(w))); }, 64);
  CHECK(r.passed);
  CHECK(r.max_rel_err <= 1e-4);
}
