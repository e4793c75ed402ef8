#include "cvfc/gradcheck_suite.hpp"

#include <algorithm>
#include <random>

#include "cvfc/attention.hpp"
#include "cvfc/losses.hpp"
#include "cvfc/model.hpp"
#include "cvfc/rng.hpp"

namespace cvfc {

const std::vector<std::string>& primitive_op_names() {
  static const std::vector<std::string> names = {
      "add",     "sub",     "mul",        "scale",    "relu",    "sigmoid",
      "abs",     "square",  "sum",        "mean",     "reshape", "matmul",
      "softmax", "conv2d",  "adaptive_avg_pool", "bilinear_resize", "concat_channels", "batchnorm2d",
      "minmax_normalize", "multilabel_soft_margin"};
  return names;
}

namespace {

using Args = std::span<const Var>;

struct Case {
  std::vector<Tensor> inputs;
  GradCheckFn fn;
};

class Inputs {
 public:
  explicit Inputs(std::uint64_t seed) : rng_(seed) {}
  Tensor uniform(const Shape& s, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(s, DType::f64);
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, u(rng_));
    return t;
  }
  // Magnitudes in [0.1, 1] so no element sits near a kink at zero.
  Tensor away_from_zero(const Shape& s) {
    Tensor t = uniform(s);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double v = t.at(i);
      t.set(i, (v < 0 ? -1.0 : 1.0) * (0.1 + 0.9 * std::abs(v)));
    }
    return t;
  }
  Tensor binary(const Shape& s) {
    std::bernoulli_distribution b(0.5);
    Tensor t(s, DType::f64);
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, b(rng_) ? 1.0 : 0.0);
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

std::vector<Case> cases_for(const std::string& op, Inputs& in) {
  const Shape s{2, 3, 4};
  if (op == "add") return {{{in.uniform(s), in.uniform(s)}, [](Graph&, Args a) { return add(a[0], a[1]); }}};
  if (op == "sub") return {{{in.uniform(s), in.uniform(s)}, [](Graph&, Args a) { return sub(a[0], a[1]); }}};
  if (op == "mul") return {{{in.uniform(s), in.uniform(s)}, [](Graph&, Args a) { return mul(a[0], a[1]); }}};
  if (op == "scale") return {{{in.uniform(s)}, [](Graph&, Args a) { return scale(a[0], -1.7); }}};
  if (op == "relu") return {{{in.away_from_zero(s)}, [](Graph&, Args a) { return relu(a[0]); }}};
  if (op == "sigmoid") return {{{in.uniform(s, -4, 4)}, [](Graph&, Args a) { return sigmoid(a[0]); }}};
  if (op == "abs") return {{{in.away_from_zero(s)}, [](Graph&, Args a) { return abs(a[0]); }}};
  if (op == "square") return {{{in.uniform(s)}, [](Graph&, Args a) { return square(a[0]); }}};
  if (op == "sum") return {{{in.uniform(s)}, [](Graph&, Args a) { return sum(a[0]); }}};
  if (op == "mean") return {{{in.uniform(s)}, [](Graph&, Args a) { return mean(a[0]); }}};
  if (op == "reshape") {
    return {{{in.uniform({2, 3, 2, 2})}, [](Graph&, Args a) { return flatten_spatial(a[0]); }},
            {{in.uniform(s)}, [](Graph&, Args a) { return reshape(a[0], {4, 6}); }}};
  }
  if (op == "matmul") {
    std::vector<Case> cs;
    for (int ta = 0; ta < 2; ++ta) {
      for (int tb = 0; tb < 2; ++tb) {
        const Shape a2 = ta ? Shape{4, 3} : Shape{3, 4};
        const Shape b2 = tb ? Shape{5, 4} : Shape{4, 5};
        cs.push_back({{in.uniform(a2), in.uniform(b2)},
                      [ta, tb](Graph&, Args a) { return matmul(a[0], a[1], ta, tb); }});
        Shape a3 = a2, b3 = b2;
        a3.insert(a3.begin(), 2);
        b3.insert(b3.begin(), 2);
        cs.push_back({{in.uniform(a3), in.uniform(b3)},
                      [ta, tb](Graph&, Args a) { return matmul(a[0], a[1], ta, tb); }});
      }
    }
    return cs;
  }
  if (op == "softmax") {
    std::vector<Case> cs;
    for (std::size_t axis = 0; axis < 3; ++axis) {
      cs.push_back({{in.uniform(s, -2, 2)}, [axis](Graph&, Args a) { return softmax(a[0], axis); }});
    }
    return cs;
  }
  if (op == "conv2d") {
    return {{{in.uniform({2, 3, 6, 6}), in.uniform({4, 3, 3, 3}), in.uniform({4})},
             [](Graph&, Args a) { return conv2d(a[0], a[1], a[2], {1, 1}); }},
            {{in.uniform({1, 2, 7, 7}), in.uniform({3, 2, 3, 3})},
             [](Graph&, Args a) { return conv2d(a[0], a[1], std::nullopt, {2, 0}); }},
            {{in.uniform({2, 3, 4, 4}), in.uniform({5, 3}), in.uniform({5})},
             [](Graph&, Args a) { return conv1x1(a[0], a[1], a[2]); }}};
  }
  if (op == "adaptive_avg_pool") {
    return {{{in.uniform({1, 2, 7, 5})}, [](Graph&, Args a) { return adaptive_avg_pool(a[0], 3, 2); }},
            {{in.uniform({2, 2, 4, 4})}, [](Graph&, Args a) { return adaptive_avg_pool(a[0], 1, 1); }}};
  }
  if (op == "bilinear_resize") {
    return {{{in.uniform({1, 2, 3, 5})}, [](Graph&, Args a) { return bilinear_resize(a[0], 7, 4); }},
            {{in.uniform({1, 2, 6, 6})}, [](Graph&, Args a) { return bilinear_resize(a[0], 2, 3); }}};
  }
  if (op == "concat_channels") {
    return {{{in.uniform({2, 2, 3, 3}), in.uniform({2, 3, 3, 3})},
             [](Graph&, Args a) { return concat_channels(a); }}};
  }
  if (op == "batchnorm2d") {
    std::vector<Case> cs;
    for (Mode mode : {Mode::train, Mode::eval}) {
      Tensor rm = in.uniform({3}, -0.5, 0.5);
      Tensor rv = in.uniform({3}, 0.5, 1.5);
      cs.push_back({{in.uniform({2, 3, 3, 3}), in.uniform({3}, 0.5, 1.5), in.uniform({3})},
                    [mode, rm, rv](Graph&, Args a) {
                      Tensor m = rm, v = rv;
                      return batchnorm2d(a[0], a[1], a[2], m, v, mode);
                    }});
    }
    return cs;
  }
  if (op == "minmax_normalize") {
    return {{{in.uniform({2, 3, 3, 4})}, [](Graph&, Args a) { return minmax_normalize(a[0], kCamNormEps); }}};
  }
  if (op == "multilabel_soft_margin") {
    const Tensor y = in.binary({3, 4});
    return {{{in.uniform({3, 4}, -3, 3)}, [y](Graph&, Args a) { return multilabel_soft_margin(a[0], y); }}};
  }
  throw ArgumentError("no gradient-check case for op '" + op + "'");
}

GradCheckReport merge(const std::string& op, const std::vector<GradCheckReport>& parts) {
  GradCheckReport r;
  r.op = op;
  r.passed = true;
  for (const auto& p : parts) {
    r.max_rel_err = std::max(r.max_rel_err, p.max_rel_err);
    r.probes += p.probes;
    r.passed = r.passed && p.passed;
    if (!p.failure.empty() && r.failure.empty()) r.failure = p.failure;
  }
  return r;
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed, const GradCheckOptions& base) {
  std::vector<GradCheckReport> out;
  std::uint64_t index = 0;
  for (const auto& op : primitive_op_names()) {
    Inputs in(derive_seed(seed, {++index}));
    std::vector<GradCheckReport> parts;
    for (auto& c : cases_for(op, in)) {
      GradCheckOptions o = base;
      o.seed = derive_seed(seed, {index, parts.size()});
      parts.push_back(grad_check(op, std::move(c.inputs), c.fn, o));
    }
    out.push_back(merge(op, parts));
  }

  {
    Inputs in(derive_seed(seed, {++index}));
    GradCheckOptions o = base;
    o.seed = derive_seed(seed, {index});
    out.push_back(grad_check("attention_refine",
                             {in.uniform({2, 5, 3, 3}), in.uniform({4, 5}), in.uniform({4, 5}),
                              in.uniform({2, 3, 3, 3})},
                             [](Graph&, Args a) {
                               const Var att = attention_matrix(project_qk(a[0], a[1], a[2]));
                               return normalize_cam(attend_cam(a[3], att, 3, 3));
                             },
                             o));
  }

  {
    ++index;
    ModelConfig mc;
    mc.branch_presets = {"tiny38", "tiny50", "tiny38"};
    mc.dtype = DType::f64;
    mc.seed = derive_seed(seed, {index});
    CvfcModel model(mc);
    Inputs in(derive_seed(seed, {index, 1}));
    const Tensor images = in.uniform({2, 3, 16, 16});
    Tensor targets({2, 3}, DType::f64);
    for (std::size_t i = 0; i < 6; ++i) targets.set(i, (i % 4 == 0 || i == 3) ? 1.0 : 0.0);
    auto params = model.store().trainable();
    GradCheckOptions o = base;
    o.seed = derive_seed(seed, {index, 2});
    out.push_back(grad_check_parameters(
        "cvfc_objective", params,
        [&](Graph& g) { return model.losses(model.forward_all(g, g.constant(images), Mode::train), targets).total; },
        o.max_probes_per_input, o));
  }
  return out;
}

}  // namespace cvfc
