#include <cmath>

#include "ops_internal.hpp"

namespace cvfc {

using detail::common_graph;

namespace {

// Unary op with derivative expressed through (input, output).
template <class Fwd, class Deriv>
Var unary(const char* name, const Var& x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape(), xv.dtype());
  visit_dtype(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = xv.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = fwd(in[i]);
  });
  const NodeId xi = x.id();
  Graph& g = x.graph();
  // record() appends exactly one node, so the output id is known up front.
  const NodeId oi = g.size();
  return g.record(name, std::move(out), {xi}, [xi, oi, deriv](Graph& gr, const Tensor& gout) {
    const Tensor& xin = gr.value(xi);
    const Tensor& yout = gr.value(oi);
    Tensor gx(xin.shape(), xin.dtype());
    visit_dtype(xin.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto in = xin.data<T>();
      auto y = yout.data<T>();
      auto go = gout.data<T>();
      auto d = gx.data<T>();
      for (std::size_t i = 0; i < in.size(); ++i) d[i] = go[i] * deriv(in[i], y[i]);
    });
    gr.accumulate(xi, gx);
  });
}

template <class Op>
Tensor binary_values(const Tensor& a, const Tensor& b, const char* name, Op op) {
  detail::require_same_shape(a, b, name);
  detail::require_same_dtype(a, b, name);
  Tensor out(a.shape(), a.dtype());
  visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = op(x[i], y[i]);
  });
  return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Graph& g = common_graph(a, b, "add");
  Tensor out = binary_values(a.value(), b.value(), "add", [](auto x, auto y) { return x + y; });
  const NodeId ai = a.id(), bi = b.id();
  return g.record("add", std::move(out), {ai, bi}, [ai, bi](Graph& gr, const Tensor& gout) {
    gr.accumulate(ai, gout);
    gr.accumulate(bi, gout);
  });
}

Var sub(const Var& a, const Var& b) {
  Graph& g = common_graph(a, b, "sub");
  Tensor out = binary_values(a.value(), b.value(), "sub", [](auto x, auto y) { return x - y; });
  const NodeId ai = a.id(), bi = b.id();
  return g.record("sub", std::move(out), {ai, bi}, [ai, bi](Graph& gr, const Tensor& gout) {
    gr.accumulate(ai, gout);
    Tensor neg = gout;
    detail::scale_inplace(neg, -1.0);
    gr.accumulate(bi, neg);
  });
}

Var mul(const Var& a, const Var& b) {
  Graph& g = common_graph(a, b, "mul");
  Tensor out = binary_values(a.value(), b.value(), "mul", [](auto x, auto y) { return x * y; });
  const NodeId ai = a.id(), bi = b.id();
  return g.record("mul", std::move(out), {ai, bi}, [ai, bi](Graph& gr, const Tensor& gout) {
    auto times = [](auto x, auto y) { return x * y; };
    gr.accumulate(ai, binary_values(gout, gr.value(bi), "mul", times));
    gr.accumulate(bi, binary_values(gout, gr.value(ai), "mul", times));
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  detail::scale_inplace(out, factor);
  const NodeId xi = x.id();
  return x.graph().record("scale", std::move(out), {xi}, [xi, factor](Graph& gr, const Tensor& gout) {
    Tensor gx = gout;
    detail::scale_inplace(gx, factor);
    gr.accumulate(xi, gx);
  });
}

Var relu(const Var& x) {
  return unary(
      "relu", x, [](auto v) { return v > 0 ? v : decltype(v){0}; },
      [](auto v, auto) { return v > 0 ? decltype(v){1} : decltype(v){0}; });
}

Var sigmoid(const Var& x) {
  return unary(
      "sigmoid", x,
      [](auto v) {
        using T = decltype(v);
        if (v >= 0) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](auto, auto y) { return y * (decltype(y){1} - y); });
}

Var abs(const Var& x) {
  return unary(
      "abs", x, [](auto v) { return std::abs(v); },
      [](auto v, auto) {
        using T = decltype(v);
        return v > 0 ? T{1} : (v < 0 ? T{-1} : T{0});
      });
}

Var square(const Var& x) {
  return unary(
      "square", x, [](auto v) { return v * v; }, [](auto v, auto) { return v + v; });
}

Var sum(const Var& x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  visit_dtype(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (T v : xv.data<T>()) acc += static_cast<double>(v);
  });
  const NodeId xi = x.id();
  return x.graph().record("sum", Tensor::scalar(acc, xv.dtype()), {xi}, [xi](Graph& gr, const Tensor& gout) {
    const Tensor& in = gr.value(xi);
    gr.accumulate(xi, Tensor::full(in.shape(), gout.item(), in.dtype()));
  });
}

Var mean(const Var& x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  visit_dtype(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (T v : xv.data<T>()) acc += static_cast<double>(v);
  });
  const double n = static_cast<double>(xv.numel());
  const NodeId xi = x.id();
  return x.graph().record("mean", Tensor::scalar(acc / n, xv.dtype()), {xi}, [xi, n](Graph& gr, const Tensor& gout) {
    const Tensor& in = gr.value(xi);
    gr.accumulate(xi, Tensor::full(in.shape(), gout.item() / n, in.dtype()));
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const NodeId xi = x.id();
  return x.graph().record("reshape", std::move(out), {xi}, [xi](Graph& gr, const Tensor& gout) {
    gr.accumulate(xi, gout.reshaped(gr.value(xi).shape()));
  });
}

Var flatten_spatial(const Var& x) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 4, "flatten_spatial", "input");
  return reshape(x, {xv.dim(0), xv.dim(1), xv.dim(2) * xv.dim(3)});
}

}  // namespace cvfc
