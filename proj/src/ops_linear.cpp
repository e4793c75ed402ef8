#include <vector>

#include "ops_internal.hpp"

namespace cvfc {

using detail::common_graph;
using detail::gemm;

namespace {

struct MatmulDims {
  std::size_t batch, m, k, n;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  if (a.ndim() != b.ndim() || (a.ndim() != 2 && a.ndim() != 3)) {
    throw DimensionError("matmul: expected two 2-D or two 3-D tensors, got " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t off = a.ndim() - 2;
  const std::size_t batch = off ? a.dim(0) : 1;
  if (off && b.dim(0) != batch) throw DimensionError("matmul: batch extents differ");
  const std::size_t m = ta ? a.dim(off + 1) : a.dim(off);
  const std::size_t ka = ta ? a.dim(off) : a.dim(off + 1);
  const std::size_t kb = tb ? b.dim(off + 1) : b.dim(off);
  const std::size_t n = tb ? b.dim(off) : b.dim(off + 1);
  if (ka != kb) {
    throw DimensionError("matmul: inner extents differ (" + shape_string(a.shape()) + " x " + shape_string(b.shape()) +
                         ")");
  }
  return {batch, m, ka, n};
}

template <class T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            Conv2dOptions opt, std::size_t ho, std::size_t wo, T* col) {
  const auto pad = static_cast<std::ptrdiff_t>(opt.padding);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* row = col + ((ci * kh + ky) * kw + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * opt.stride + ky) - pad;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            for (std::size_t ox = 0; ox < wo; ++ox) dst[ox] = T{0};
            continue;
          }
          const T* src = x + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * opt.stride + kx) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            Conv2dOptions opt, std::size_t ho, std::size_t wo, T* dx) {
  const auto pad = static_cast<std::ptrdiff_t>(opt.padding);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* row = col + ((ci * kh + ky) * kw + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * opt.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = dx + (ci * h + static_cast<std::size_t>(iy)) * w;
          const T* src = row + oy * wo;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * opt.stride + kx) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo;
  bool direct() const { return kh == 1 && kw == 1; }
};

}  // namespace

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  Graph& g = common_graph(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_same_dtype(av, bv, "matmul");
  const auto d = matmul_dims(av, bv, trans_a, trans_b);
  Shape out_shape = av.ndim() == 3 ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
  Tensor out(out_shape, av.dtype());
  visit_dtype(av.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto pa = av.data<T>().data();
    auto pb = bv.data<T>().data();
    auto pc = out.data<T>().data();
    for (std::size_t i = 0; i < d.batch; ++i) {
      gemm<T>(trans_a, trans_b, d.m, d.n, d.k, pa + i * d.m * d.k, pb + i * d.k * d.n, pc + i * d.m * d.n, false);
    }
  });
  const NodeId ai = a.id(), bi = b.id();
  return g.record("matmul", std::move(out), {ai, bi}, [ai, bi, trans_a, trans_b, d](Graph& gr, const Tensor& gout) {
    const Tensor& av = gr.value(ai);
    const Tensor& bv = gr.value(bi);
    Tensor ga(av.shape(), av.dtype());
    Tensor gb(bv.shape(), bv.dtype());
    visit_dtype(av.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pa = av.data<T>().data();
      auto pb = bv.data<T>().data();
      auto pg = gout.data<T>().data();
      auto pga = ga.data<T>().data();
      auto pgb = gb.data<T>().data();
      for (std::size_t i = 0; i < d.batch; ++i) {
        const T* A = pa + i * d.m * d.k;
        const T* B = pb + i * d.k * d.n;
        const T* G = pg + i * d.m * d.n;
        T* GA = pga + i * d.m * d.k;
        T* GB = pgb + i * d.k * d.n;
        if (!trans_a) {
          gemm<T>(false, !trans_b, d.m, d.k, d.n, G, B, GA, false);  // G op(B)^T
        } else {
          gemm<T>(trans_b, true, d.k, d.m, d.n, B, G, GA, false);  // op(B) G^T
        }
        if (!trans_b) {
          gemm<T>(!trans_a, false, d.k, d.n, d.m, A, G, GB, false);  // op(A)^T G
        } else {
          gemm<T>(true, trans_a, d.n, d.k, d.m, G, A, GB, false);  // G^T op(A)
        }
      }
    });
    gr.accumulate(ai, ga);
    gr.accumulate(bi, gb);
  });
}

Var conv2d(const Var& x, const Var& w, const std::optional<Var>& b, Conv2dOptions opt) {
  Graph& g = common_graph(x, w, "conv2d");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::require_rank(xv, 4, "conv2d", "input");
  detail::require_rank(wv, 4, "conv2d", "weight");
  detail::require_same_dtype(xv, wv, "conv2d");
  if (opt.stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  ConvGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), wv.dim(3), 0, 0};
  if (wv.dim(1) != geo.cin) {
    throw DimensionError("conv2d: input has " + std::to_string(geo.cin) + " channels, weight expects " +
                         std::to_string(wv.dim(1)));
  }
  if (geo.h + 2 * opt.padding < geo.kh || geo.w + 2 * opt.padding < geo.kw) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  geo.ho = (geo.h + 2 * opt.padding - geo.kh) / opt.stride + 1;
  geo.wo = (geo.w + 2 * opt.padding - geo.kw) / opt.stride + 1;
  const bool direct = geo.direct() && opt.stride == 1 && opt.padding == 0;

  std::vector<NodeId> inputs{x.id(), w.id()};
  if (b) {
    common_graph(x, *b, "conv2d");
    const Tensor& bv = b->value();
    detail::require_same_dtype(xv, bv, "conv2d");
    if (bv.ndim() != 1 || bv.dim(0) != geo.cout) throw DimensionError("conv2d: bias must have shape [Cout]");
    inputs.push_back(b->id());
  }

  Tensor out({geo.n, geo.cout, geo.ho, geo.wo}, xv.dtype());
  const std::size_t ckk = geo.cin * geo.kh * geo.kw;
  const std::size_t hw_out = geo.ho * geo.wo;
  visit_dtype(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = xv.data<T>().data();
    auto pw = wv.data<T>().data();
    auto po = out.data<T>().data();
    std::vector<T> col(direct ? 0 : ckk * hw_out);
    for (std::size_t n = 0; n < geo.n; ++n) {
      const T* xn = px + n * geo.cin * geo.h * geo.w;
      const T* src = xn;
      if (!direct) {
        im2col(xn, geo.cin, geo.h, geo.w, geo.kh, geo.kw, opt, geo.ho, geo.wo, col.data());
        src = col.data();
      }
      T* on = po + n * geo.cout * hw_out;
      gemm<T>(false, false, geo.cout, hw_out, ckk, pw, src, on, false);
      if (b) {
        auto pb = b->value().data<T>();
        for (std::size_t c = 0; c < geo.cout; ++c) {
          for (std::size_t i = 0; i < hw_out; ++i) on[c * hw_out + i] += pb[c];
        }
      }
    }
  });

  const NodeId xi = x.id(), wi = w.id();
  const std::optional<NodeId> bi = b ? std::optional<NodeId>(b->id()) : std::nullopt;
  return g.record("conv2d", std::move(out), std::move(inputs),
                  [xi, wi, bi, geo, opt, direct, ckk, hw_out](Graph& gr, const Tensor& gout) {
                    const Tensor& xv = gr.value(xi);
                    const Tensor& wv = gr.value(wi);
                    const bool need_x = gr.requires_grad(xi);
                    const bool need_w = gr.requires_grad(wi);
                    Tensor gx = need_x ? Tensor(xv.shape(), xv.dtype()) : Tensor();
                    Tensor gw = need_w ? Tensor(wv.shape(), wv.dtype()) : Tensor();
                    Tensor gb = bi ? Tensor({geo.cout}, xv.dtype()) : Tensor();
                    visit_dtype(xv.dtype(), [&](auto tag) {
                      using T = decltype(tag);
                      auto px = xv.data<T>().data();
                      auto pw = wv.data<T>().data();
                      auto pg = gout.data<T>().data();
                      std::vector<T> col(direct ? 0 : ckk * hw_out);
                      std::vector<T> dcol(direct || !need_x ? 0 : ckk * hw_out);
                      for (std::size_t n = 0; n < geo.n; ++n) {
                        const T* xn = px + n * geo.cin * geo.h * geo.w;
                        const T* gn = pg + n * geo.cout * hw_out;
                        if (need_w) {
                          const T* src = xn;
                          if (!direct) {
                            im2col(xn, geo.cin, geo.h, geo.w, geo.kh, geo.kw, opt, geo.ho, geo.wo, col.data());
                            src = col.data();
                          }
                          gemm<T>(false, true, geo.cout, ckk, hw_out, gn, src, gw.data<T>().data(), true);
                        }
                        if (need_x) {
                          T* dxn = gx.data<T>().data() + n * geo.cin * geo.h * geo.w;
                          if (direct) {
                            gemm<T>(true, false, ckk, hw_out, geo.cout, pw, gn, dxn, false);
                          } else {
                            gemm<T>(true, false, ckk, hw_out, geo.cout, pw, gn, dcol.data(), false);
                            col2im(dcol.data(), geo.cin, geo.h, geo.w, geo.kh, geo.kw, opt, geo.ho, geo.wo, dxn);
                          }
                        }
                        if (bi) {
                          auto pgb = gb.data<T>();
                          for (std::size_t c = 0; c < geo.cout; ++c) {
                            T acc{0};
                            for (std::size_t i = 0; i < hw_out; ++i) acc += gn[c * hw_out + i];
                            pgb[c] += acc;
                          }
                        }
                      }
                    });
                    if (need_x) gr.accumulate(xi, gx);
                    if (need_w) gr.accumulate(wi, gw);
                    if (bi) gr.accumulate(*bi, gb);
                  });
}

Var conv1x1(const Var& x, const Var& w, const std::optional<Var>& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::require_rank(xv, 4, "conv1x1", "input");
  detail::require_rank(wv, 2, "conv1x1", "weight");
  if (wv.dim(1) != xv.dim(1)) {
    throw DimensionError("conv1x1: input has " + std::to_string(xv.dim(1)) + " channels, weight expects " +
                         std::to_string(wv.dim(1)));
  }
  Var w4 = reshape(w, {wv.dim(0), wv.dim(1), 1, 1});
  return conv2d(x, w4, b, {});
}

}  // namespace cvfc
