#include "cvfc/attention.hpp"

#include <cmath>

namespace cvfc {

std::string to_string(QkInit q) { return q == QkInit::identity ? "identity" : "uniform"; }

QkInit qk_init_from_string(const std::string& s) {
  if (s == "uniform") return QkInit::uniform;
  if (s == "identity") return QkInit::identity;
  throw ConfigError("unknown qk_init '" + s + "' (expected uniform or identity)");
}

QueryKey project_qk(const Var& feat, const Var& w_query, const Var& w_key) {
  const Tensor& f = feat.value();
  if (f.ndim() != 4) throw DimensionError("project_qk: features must be [N,Cf,H,W]");
  if (w_query.shape() != w_key.shape()) throw DimensionError("project_qk: W_Q and W_K shapes differ");
  return {flatten_spatial(conv1x1(feat, w_query, std::nullopt)), flatten_spatial(conv1x1(feat, w_key, std::nullopt))};
}

Var attention_matrix(const QueryKey& qk, double logit_scale) {
  const Tensor& q = qk.query.value();
  const Tensor& k = qk.key.value();
  if (q.ndim() != 3 || q.shape() != k.shape()) {
    throw DimensionError("attention_matrix: Q and K must share shape [N,Ck,P], got " + shape_string(q.shape()) +
                         " and " + shape_string(k.shape()));
  }
  if (!(logit_scale > 0.0) || !std::isfinite(logit_scale)) {
    throw ConfigError("attention_matrix: logit scale must be positive and finite");
  }
  Var logits = matmul(qk.query, qk.key, true, false);
  return softmax(logit_scale == 1.0 ? logits : scale(logits, logit_scale), 2);
}

Var attend_cam(const Var& maps, const Var& attention, std::size_t out_h, std::size_t out_w) {
  const Tensor& m = maps.value();
  const Tensor& a = attention.value();
  if (m.ndim() != 4) throw DimensionError("attend_cam: maps must be [N,C,H,W]");
  const std::size_t p = out_h * out_w;
  if (a.ndim() != 3 || a.dim(0) != m.dim(0) || a.dim(1) != p || a.dim(2) != p) {
    throw DimensionError("attend_cam: attention " + shape_string(a.shape()) + " does not match " +
                         std::to_string(m.dim(0)) + " samples at " + std::to_string(out_h) + "x" +
                         std::to_string(out_w));
  }
  Var pooled = (m.dim(2) == out_h && m.dim(3) == out_w) ? maps : adaptive_avg_pool(maps, out_h, out_w);
  Var mixed = matmul(flatten_spatial(pooled), attention, false, true);
  return reshape(mixed, {m.dim(0), m.dim(1), out_h, out_w});
}

Tensor suppress_non_max(const Tensor& maps) {
  if (maps.ndim() != 4) throw DimensionError("suppress_non_max: maps must be [N,C,H,W]");
  const std::size_t n = maps.dim(0), c = maps.dim(1), hw = maps.dim(2) * maps.dim(3);
  Tensor out = Tensor::zeros(maps.shape(), maps.dtype());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      std::size_t best = 0;
      double best_v = maps.at(b * c * hw + i);
      for (std::size_t k = 1; k < c; ++k) {
        const double v = maps.at((b * c + k) * hw + i);
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      out.set((b * c + best) * hw + i, best_v);
    }
  }
  return out;
}

CamStack refine_cam(const CamStack& cs, const Tensor& attention, std::size_t out_h, std::size_t out_w) {
  cs.validate();
  Graph g;
  Var refined = normalize_cam(attend_cam(g.constant(cs.maps), g.constant(attention), out_h, out_w));
  return {suppress_non_max(refined.value()), cs.class_names};
}

QKProjection::QKProjection(ParameterStore& store, const std::string& name, std::size_t in_channels,
                           std::size_t proj_dim, std::mt19937_64& rng, DType dtype, QkInit qk_init) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels));
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto init = [&] {
    Tensor t({proj_dim, in_channels}, dtype);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      if (qk_init == QkInit::identity) {
        t.set(i, i / in_channels == i % in_channels ? 1.0 : 0.0);
      } else {
        t.set(i, dist(rng));
      }
    }
    return t;
  };
  w_query_ = &store.add(name + ".w_query", init());
  w_key_ = &store.add(name + ".w_key", init());
}

QueryKey QKProjection::forward(Graph& g, const Var& feat) const {
  return project_qk(feat, g.parameter(*w_query_), g.parameter(*w_key_));
}

}  // namespace cvfc
