#include "cvfc/losses.hpp"

#include <cmath>

#include "tensor_math.hpp"

namespace cvfc {

std::string to_string(CamDistance d) { return d == CamDistance::mean_abs ? "mean_abs" : "mean_squared"; }
std::string to_string(CrossPairing p) { return p == CrossPairing::cam3_cam2 ? "cam3_cam2" : "cam1_cam2"; }

CamDistance cam_distance_from_string(const std::string& s) {
  if (s == "mean_abs") return CamDistance::mean_abs;
  if (s == "mean_squared") return CamDistance::mean_squared;
  throw ConfigError("unknown cam distance '" + s + "' (expected mean_abs or mean_squared)");
}

CrossPairing cross_pairing_from_string(const std::string& s) {
  if (s == "cam3_cam2") return CrossPairing::cam3_cam2;
  if (s == "cam1_cam2") return CrossPairing::cam1_cam2;
  throw ConfigError("unknown cross pairing '" + s + "' (expected cam3_cam2 or cam1_cam2)");
}

bool LossBreakdown::all_finite() const {
  for (double v : {l_cls_1, l_cls_2, l_cls_3, l_cls_total, l_cons, l_cross, total}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Var multilabel_soft_margin(const Var& logits, const Tensor& targets) {
  const Tensor& x = logits.value();
  if (x.ndim() != 2) throw DimensionError("multilabel_soft_margin: logits must be [N,C]");
  if (targets.shape() != x.shape()) {
    throw DimensionError("multilabel_soft_margin: targets " + shape_string(targets.shape()) + " vs logits " +
                         shape_string(x.shape()));
  }
  for (std::size_t i = 0; i < targets.numel(); ++i) {
    const double y = targets.at(i);
    if (y != 0.0 && y != 1.0) throw ArgumentError("multilabel_soft_margin: targets must be 0 or 1");
  }
  const double count = static_cast<double>(x.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x.at(i);
    acc += std::max(v, 0.0) - v * targets.at(i) + std::log1p(std::exp(-std::abs(v)));
  }
  const Tensor y = targets.to(DType::f64);
  const NodeId xi = logits.id();
  return logits.graph().record("multilabel_soft_margin", Tensor::scalar(acc / count, x.dtype()), {xi},
                               [xi, y, count](Graph& gr, const Tensor& gout) {
                                 const Tensor& xv = gr.value(xi);
                                 Tensor gx(xv.shape(), xv.dtype());
                                 const double go = gout.item();
                                 for (std::size_t i = 0; i < xv.numel(); ++i) {
                                   const double v = xv.at(i);
                                   const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
                                   gx.set(i, go * (s - y.at(i)) / count);
                                 }
                                 gr.accumulate(xi, gx);
                               });
}

Var classification_loss(const Var& logits_1, const Var& logits_2, const Var& logits_3, const Tensor& targets) {
  return add(add(multilabel_soft_margin(logits_1, targets), multilabel_soft_margin(logits_2, targets)),
             multilabel_soft_margin(logits_3, targets));
}

namespace {
Var distance(const Var& a, const Var& b, CamDistance d) {
  if (a.shape() != b.shape()) {
    throw DimensionError("CAM distance: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                         " differ");
  }
  Var diff = sub(a, b);
  return mean(d == CamDistance::mean_abs ? abs(diff) : square(diff));
}
}  // namespace

Var consistency_loss(const Var& cam1, const Var& cam3, CamDistance d) { return distance(cam1, cam3, d); }

Var cross_loss(const Var& cam1, const Var& cam2, const Var& cam3, const LossOptions& opts) {
  Var first = distance(cam1, cam3, opts.distance);
  Var second = opts.cross_pairing == CrossPairing::cam3_cam2 ? distance(cam3, cam2, opts.distance)
                                                             : distance(cam1, cam2, opts.distance);
  return add(first, second);
}

LossTerms total_loss(const Var& cls_1, const Var& cls_2, const Var& cls_3, const Var& cons, const Var& cross) {
  LossTerms t;
  t.cls_1 = cls_1;
  t.cls_2 = cls_2;
  t.cls_3 = cls_3;
  t.cls_total = add(add(cls_1, cls_2), cls_3);
  t.cons = cons;
  t.cross = cross;
  t.total = t.cls_total;
  if (cons.valid()) t.total = add(t.total, cons);
  if (cross.valid()) t.total = add(t.total, cross);
  return t;
}

LossBreakdown LossTerms::breakdown() const {
  LossBreakdown b;
  b.l_cls_1 = cls_1.value().item();
  b.l_cls_2 = cls_2.value().item();
  b.l_cls_3 = cls_3.value().item();
  b.l_cls_total = cls_total.value().item();
  b.l_cons = cons.valid() ? cons.value().item() : 0.0;
  b.l_cross = cross.valid() ? cross.value().item() : 0.0;
  b.total = total.value().item();
  return b;
}

}  // namespace cvfc
