#include <algorithm>
#include <cmath>
#include <vector>

#include "ops_internal.hpp"

namespace cvfc {

using detail::common_graph;

namespace {

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

struct Window {
  std::size_t begin, end;
};

// [floor(i*in/out), ceil((i+1)*in/out))
Window pool_window(std::size_t i, std::size_t in, std::size_t out) {
  return {(i * in) / out, ((i + 1) * in + out - 1) / out};
}

struct Tap {
  std::size_t i0, i1;
  double frac;  // weight of i1
};

Tap bilinear_tap(std::size_t dst, std::size_t in, std::size_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in - 1));
  const auto i0 = static_cast<std::size_t>(std::floor(src));
  const std::size_t i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, src - static_cast<double>(i0)};
}

}  // namespace

Var softmax(const Var& x, std::size_t axis) {
  const Tensor& xv = x.value();
  if (axis >= xv.ndim()) throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range");
  const auto s = split_axis(xv.shape(), axis);
  Tensor out(xv.shape(), xv.dtype());
  visit_dtype(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = xv.data<T>();
    auto o = out.data<T>();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t c = 0; c < s.inner; ++c) {
        const std::size_t base = a * s.extent * s.inner + c;
        T mx = in[base];
        for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, in[base + k * s.inner]);
        T total{0};
        for (std::size_t k = 0; k < s.extent; ++k) {
          const T e = std::exp(in[base + k * s.inner] - mx);
          o[base + k * s.inner] = e;
          total += e;
        }
        for (std::size_t k = 0; k < s.extent; ++k) o[base + k * s.inner] /= total;
      }
    }
  });
  const NodeId xi = x.id();
  const NodeId oi = x.graph().size();
  return x.graph().record("softmax", std::move(out), {xi}, [xi, oi, s](Graph& gr, const Tensor& gout) {
    const Tensor& y = gr.value(oi);
    Tensor gx(y.shape(), y.dtype());
    visit_dtype(y.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto py = y.data<T>();
      auto pg = gout.data<T>();
      auto pd = gx.data<T>();
      for (std::size_t a = 0; a < s.outer; ++a) {
        for (std::size_t c = 0; c < s.inner; ++c) {
          const std::size_t base = a * s.extent * s.inner + c;
          T dot{0};
          for (std::size_t k = 0; k < s.extent; ++k) dot += pg[base + k * s.inner] * py[base + k * s.inner];
          for (std::size_t k = 0; k < s.extent; ++k) {
            const std::size_t i = base + k * s.inner;
            pd[i] = py[i] * (pg[i] - dot);
          }
        }
      }
    });
    gr.accumulate(xi, gx);
  });
}

Var adaptive_avg_pool(const Var& x, std::size_t out_h, std::size_t out_w) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 4, "adaptive_avg_pool", "input");
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (out_h < 1 || out_w < 1 || out_h > h || out_w > w) {
    throw DimensionError("adaptive_avg_pool: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " must lie within input " + std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor out({n, c, out_h, out_w}, xv.dtype());
  visit_dtype(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = xv.data<T>();
    auto o = out.data<T>();
    for (std::size_t p = 0; p < n * c; ++p) {
      const T* src = in.data() + p * h * w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const auto wy = pool_window(i, h, out_h);
        for (std::size_t j = 0; j < out_w; ++j) {
          const auto wx = pool_window(j, w, out_w);
          double acc = 0.0;
          for (std::size_t y = wy.begin; y < wy.end; ++y) {
            for (std::size_t xx = wx.begin; xx < wx.end; ++xx) acc += static_cast<double>(src[y * w + xx]);
          }
          const double count = static_cast<double>((wy.end - wy.begin) * (wx.end - wx.begin));
          o[(p * out_h + i) * out_w + j] = static_cast<T>(acc / count);
        }
      }
    }
  });
  const NodeId xi = x.id();
  return x.graph().record("adaptive_avg_pool", std::move(out), {xi},
                          [xi, n, c, h, w, out_h, out_w](Graph& gr, const Tensor& gout) {
                            const Tensor& xv = gr.value(xi);
                            Tensor gx(xv.shape(), xv.dtype());
                            visit_dtype(xv.dtype(), [&](auto tag) {
                              using T = decltype(tag);
                              auto pg = gout.data<T>();
                              auto pd = gx.data<T>();
                              for (std::size_t p = 0; p < n * c; ++p) {
                                T* dst = pd.data() + p * h * w;
                                for (std::size_t i = 0; i < out_h; ++i) {
                                  const auto wy = pool_window(i, h, out_h);
                                  for (std::size_t j = 0; j < out_w; ++j) {
                                    const auto wx = pool_window(j, w, out_w);
                                    const T share = pg[(p * out_h + i) * out_w + j] /
                                                    static_cast<T>((wy.end - wy.begin) * (wx.end - wx.begin));
                                    for (std::size_t y = wy.begin; y < wy.end; ++y) {
                                      for (std::size_t xx = wx.begin; xx < wx.end; ++xx) dst[y * w + xx] += share;
                                    }
                                  }
                                }
                              }
                            });
                            gr.accumulate(xi, gx);
                          });
}

Var bilinear_resize(const Var& x, std::size_t out_h, std::size_t out_w) {
  const Tensor& xv = x.value();
  detail::require_rank(xv, 4, "bilinear_resize", "input");
  if (out_h < 1 || out_w < 1) throw DimensionError("bilinear_resize: output extents must be positive");
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  std::vector<Tap> ty(out_h), tx(out_w);
  for (std::size_t i = 0; i < out_h; ++i) ty[i] = bilinear_tap(i, h, out_h);
  for (std::size_t j = 0; j < out_w; ++j) tx[j] = bilinear_tap(j, w, out_w);

  Tensor out({n, c, out_h, out_w}, xv.dtype());
  visit_dtype(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = xv.data<T>();
    auto o = out.data<T>();
    for (std::size_t p = 0; p < n * c; ++p) {
      const T* src = in.data() + p * h * w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const auto& a = ty[i];
        for (std::size_t j = 0; j < out_w; ++j) {
          const auto& b = tx[j];
          const T fy = static_cast<T>(a.frac), fx = static_cast<T>(b.frac);
          const T top = src[a.i0 * w + b.i0] * (T{1} - fx) + src[a.i0 * w + b.i1] * fx;
          const T bot = src[a.i1 * w + b.i0] * (T{1} - fx) + src[a.i1 * w + b.i1] * fx;
          o[(p * out_h + i) * out_w + j] = top * (T{1} - fy) + bot * fy;
        }
      }
    }
  });
  const NodeId xi = x.id();
  return x.graph().record("bilinear_resize", std::move(out), {xi},
                          [xi, n, c, h, w, out_h, out_w, ty, tx](Graph& gr, const Tensor& gout) {
                            const Tensor& xv = gr.value(xi);
                            Tensor gx(xv.shape(), xv.dtype());
                            visit_dtype(xv.dtype(), [&](auto tag) {
                              using T = decltype(tag);
                              auto pg = gout.data<T>();
                              auto pd = gx.data<T>();
                              for (std::size_t p = 0; p < n * c; ++p) {
                                T* dst = pd.data() + p * h * w;
                                for (std::size_t i = 0; i < out_h; ++i) {
                                  const auto& a = ty[i];
                                  for (std::size_t j = 0; j < out_w; ++j) {
                                    const auto& b = tx[j];
                                    const T g = pg[(p * out_h + i) * out_w + j];
                                    const T fy = static_cast<T>(a.frac), fx = static_cast<T>(b.frac);
                                    dst[a.i0 * w + b.i0] += g * (T{1} - fy) * (T{1} - fx);
                                    dst[a.i0 * w + b.i1] += g * (T{1} - fy) * fx;
                                    dst[a.i1 * w + b.i0] += g * fy * (T{1} - fx);
                                    dst[a.i1 * w + b.i1] += g * fy * fx;
                                  }
                                }
                              }
                            });
                            gr.accumulate(xi, gx);
                          });
}

Var concat_channels(std::span<const Var> xs) {
  if (xs.empty()) throw ArgumentError("concat_channels: no inputs");
  Graph& g = xs.front().graph();
  const Tensor& first = xs.front().value();
  detail::require_rank(first, 4, "concat_channels", "input");
  std::vector<NodeId> ids;
  std::vector<std::size_t> channels;
  std::size_t total = 0;
  for (const auto& v : xs) {
    common_graph(xs.front(), v, "concat_channels");
    const Tensor& t = v.value();
    detail::require_rank(t, 4, "concat_channels", "input");
    detail::require_same_dtype(first, t, "concat_channels");
    if (t.dim(0) != first.dim(0) || t.dim(2) != first.dim(2) || t.dim(3) != first.dim(3)) {
      throw DimensionError("concat_channels: batch/spatial extents differ: " + shape_string(first.shape()) + " vs " +
                           shape_string(t.shape()));
    }
    ids.push_back(v.id());
    channels.push_back(t.dim(1));
    total += t.dim(1);
  }
  const std::size_t n = first.dim(0), hw = first.dim(2) * first.dim(3);
  Tensor out({n, total, first.dim(2), first.dim(3)}, first.dtype());
  visit_dtype(first.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto o = out.data<T>();
    std::size_t offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      auto in = xs[k].value().template data<T>();
      for (std::size_t b = 0; b < n; ++b) {
        std::copy_n(in.data() + b * channels[k] * hw, channels[k] * hw, o.data() + (b * total + offset) * hw);
      }
      offset += channels[k];
    }
  });
  return g.record("concat_channels", std::move(out), ids,
                  [ids, channels, total, n, hw](Graph& gr, const Tensor& gout) {
                    std::size_t offset = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      const Tensor& in = gr.value(ids[k]);
                      Tensor gx(in.shape(), in.dtype());
                      visit_dtype(in.dtype(), [&](auto tag) {
                        using T = decltype(tag);
                        auto pg = gout.data<T>();
                        auto pd = gx.data<T>();
                        for (std::size_t b = 0; b < n; ++b) {
                          std::copy_n(pg.data() + (b * total + offset) * hw, channels[k] * hw,
                                      pd.data() + b * channels[k] * hw);
                        }
                      });
                      offset += channels[k];
                      gr.accumulate(ids[k], gx);
                    }
                  });
}

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var, Mode mode,
                BatchNormOptions opt) {
  Graph& g = common_graph(x, gamma, "batchnorm2d");
  common_graph(x, beta, "batchnorm2d");
  const Tensor& xv = x.value();
  detail::require_rank(xv, 4, "batchnorm2d", "input");
  const std::size_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  const Shape cshape{c};
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma.value(), &beta.value(), &running_mean, &running_var}) {
    if (t->shape() != cshape) throw DimensionError("batchnorm2d: per-channel tensors must have shape [C]");
  }
  const std::size_t count = n * hw;
  if (mode == Mode::train && count < 2) throw DimensionError("batchnorm2d: train mode needs more than one value");

  // Per-channel statistics used for normalization, in f64.
  std::vector<double> mu(c), inv_std(c);
  visit_dtype(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = xv.data<T>();
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (mode == Mode::train) {
        double s = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const T* p = in.data() + (b * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) s += static_cast<double>(p[i]);
        }
        const double m = s / static_cast<double>(count);
        double ss = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const T* p = in.data() + (b * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const double d = static_cast<double>(p[i]) - m;
            ss += d * d;
          }
        }
        const double var = ss / static_cast<double>(count);
        mu[ch] = m;
        inv_std[ch] = 1.0 / std::sqrt(var + opt.eps);
        const double unbiased = ss / static_cast<double>(count - 1);
        running_mean.set(ch, opt.momentum * running_mean.at(ch) + (1.0 - opt.momentum) * m);
        running_var.set(ch, opt.momentum * running_var.at(ch) + (1.0 - opt.momentum) * unbiased);
      } else {
        mu[ch] = running_mean.at(ch);
        inv_std[ch] = 1.0 / std::sqrt(running_var.at(ch) + opt.eps);
      }
    }
  });

  Tensor out(xv.shape(), xv.dtype());
  visit_dtype(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = xv.data<T>();
    auto o = out.data<T>();
    auto gm = gamma.value().data<T>();
    auto bt = beta.value().data<T>();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T m = static_cast<T>(mu[ch]);
        const T is = static_cast<T>(inv_std[ch]);
        const T* p = in.data() + (b * c + ch) * hw;
        T* q = o.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) q[i] = gm[ch] * ((p[i] - m) * is) + bt[ch];
      }
    }
  });

  const NodeId xi = x.id(), gi = gamma.id(), bi = beta.id();
  const bool train = mode == Mode::train;
  return g.record("batchnorm2d", std::move(out), {xi, gi, bi},
                  [xi, gi, bi, n, c, hw, count, mu, inv_std, train](Graph& gr, const Tensor& gout) {
                    const Tensor& xv = gr.value(xi);
                    Tensor gx(xv.shape(), xv.dtype());
                    Tensor ggamma({c}, xv.dtype());
                    Tensor gbeta({c}, xv.dtype());
                    visit_dtype(xv.dtype(), [&](auto tag) {
                      using T = decltype(tag);
                      auto in = xv.data<T>();
                      auto pg = gout.data<T>();
                      auto pd = gx.data<T>();
                      auto gm = gr.value(gi).template data<T>();
                      for (std::size_t ch = 0; ch < c; ++ch) {
                        double sum_g = 0.0, sum_gx = 0.0;
                        for (std::size_t b = 0; b < n; ++b) {
                          const std::size_t off = (b * c + ch) * hw;
                          for (std::size_t i = 0; i < hw; ++i) {
                            const double xh = (static_cast<double>(in[off + i]) - mu[ch]) * inv_std[ch];
                            sum_g += static_cast<double>(pg[off + i]);
                            sum_gx += static_cast<double>(pg[off + i]) * xh;
                          }
                        }
                        ggamma.set(ch, sum_gx);
                        gbeta.set(ch, sum_g);
                        const double gmv = static_cast<double>(gm[ch]);
                        for (std::size_t b = 0; b < n; ++b) {
                          const std::size_t off = (b * c + ch) * hw;
                          for (std::size_t i = 0; i < hw; ++i) {
                            const double gy = static_cast<double>(pg[off + i]);
                            double d;
                            if (train) {
                              const double xh = (static_cast<double>(in[off + i]) - mu[ch]) * inv_std[ch];
                              const double m = static_cast<double>(count);
                              d = gmv * inv_std[ch] * (gy - sum_g / m - xh * sum_gx / m);
                            } else {
                              d = gmv * inv_std[ch] * gy;
                            }
                            pd[off + i] = static_cast<T>(d);
                          }
                        }
                      }
                    });
                    gr.accumulate(xi, gx);
                    gr.accumulate(gi, ggamma);
                    gr.accumulate(bi, gbeta);
                  });
}

Var minmax_normalize(const Var& x, double eps) {
  const Tensor& xv = x.value();
  if (xv.ndim() < 2) throw DimensionError("minmax_normalize: need at least two axes");
  const std::size_t plane = xv.dim(xv.ndim() - 2) * xv.dim(xv.ndim() - 1);
  const std::size_t slices = xv.numel() / plane;
  std::vector<std::size_t> arg_min(slices), arg_max(slices);
  std::vector<double> denom(slices);
  Tensor out(xv.shape(), xv.dtype());
  visit_dtype(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = xv.data<T>();
    auto o = out.data<T>();
    for (std::size_t s = 0; s < slices; ++s) {
      const T* p = in.data() + s * plane;
      std::size_t lo = 0, hi = 0;
      for (std::size_t i = 1; i < plane; ++i) {
        if (p[i] < p[lo]) lo = i;
        if (p[i] > p[hi]) hi = i;
      }
      arg_min[s] = lo;
      arg_max[s] = hi;
      const T d = p[hi] - p[lo] + static_cast<T>(eps);
      denom[s] = static_cast<double>(d);
      for (std::size_t i = 0; i < plane; ++i) o[s * plane + i] = (p[i] - p[lo]) / d;
    }
  });
  const NodeId xi = x.id();
  const NodeId oi = x.graph().size();
  return x.graph().record("minmax_normalize", std::move(out), {xi},
                          [xi, oi, plane, slices, arg_min, arg_max, denom](Graph& gr, const Tensor& gout) {
                            const Tensor& y = gr.value(oi);
                            Tensor gx(y.shape(), y.dtype());
                            visit_dtype(y.dtype(), [&](auto tag) {
                              using T = decltype(tag);
                              auto py = y.data<T>();
                              auto pg = gout.data<T>();
                              auto pd = gx.data<T>();
                              for (std::size_t s = 0; s < slices; ++s) {
                                const std::size_t off = s * plane;
                                const double d = denom[s];
                                double to_min = 0.0, to_max = 0.0;
                                for (std::size_t i = 0; i < plane; ++i) {
                                  const double gi = static_cast<double>(pg[off + i]);
                                  const double yi = static_cast<double>(py[off + i]);
                                  pd[off + i] = static_cast<T>(gi / d);
                                  to_min += gi * (yi - 1.0) / d;
                                  to_max -= gi * yi / d;
                                }
                                pd[off + arg_min[s]] += static_cast<T>(to_min);
                                pd[off + arg_max[s]] += static_cast<T>(to_max);
                              }
                            });
                            gr.accumulate(xi, gx);
                          });
}

}  // namespace cvfc
