#pragma once

// Differentiable tensor ops. Every op reads its inputs, records one node on
// the inputs' graph, and never mutates an input value. Inputs of one op
// must share a graph and a dtype.

#include <optional>
#include <span>

#include "cvfc/autodiff.hpp"

namespace cvfc {

enum class Mode { train, eval };

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var relu(const Var& x);  // subgradient 0 at x == 0
Var sigmoid(const Var& x);
Var abs(const Var& x);  // subgradient 0 at x == 0
Var square(const Var& x);

// Reductions to a {1} scalar.
Var sum(const Var& x);
Var mean(const Var& x);

Var reshape(const Var& x, Shape shape);
/// [N,C,H,W] -> [N,C,H*W]
Var flatten_spatial(const Var& x);

/// op(a) * op(b) for 2-D [M,K]x[K,N] or batched 3-D [B,M,K]x[B,K,N];
/// transposes act on the last two axes.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

/// Numerically stable softmax along `axis` (max subtracted first).
Var softmax(const Var& x, std::size_t axis);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation of x [N,Cin,H,W] with w [Cout,Cin,kh,kw] plus optional
/// bias [Cout]; output [N,Cout,(H+2p-kh)/s+1,(W+2p-kw)/s+1].
Var conv2d(const Var& x, const Var& w, const std::optional<Var>& b, Conv2dOptions opt = {});

/// Per-pixel linear map: x [N,C,H,W], w [K,C], optional b [K] -> [N,K,H,W].
Var conv1x1(const Var& x, const Var& w, const std::optional<Var>& b);

/// Cell (i,j) averages rows [floor(iH/oh), ceil((i+1)H/oh)) and the
/// analogous columns. 1x1 output is the global spatial mean.
Var adaptive_avg_pool(const Var& x, std::size_t out_h, std::size_t out_w);

/// Bilinear resize with src = (dst + 0.5) * in/out - 0.5, clamped at edges.
Var bilinear_resize(const Var& x, std::size_t out_h, std::size_t out_w);

/// Concatenates [N,Ci,H,W] tensors along the channel axis in order.
Var concat_channels(std::span<const Var> xs);

struct BatchNormOptions {
  double eps = 1e-5;
  /// running <- momentum * running + (1 - momentum) * batch statistic
  double momentum = 0.9;
};

/// Per-channel batch normalization of x [N,C,H,W]. Train mode normalizes
/// with batch statistics and updates the running buffers; eval mode uses
/// the running buffers and leaves them untouched.
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var, Mode mode,
                BatchNormOptions opt = {});

/// Per (leading index) min-max normalization over the last two axes:
/// (x - min) / (max - min + eps).
Var minmax_normalize(const Var& x, double eps);

}  // namespace cvfc
