#include "cvfc/cam_head.hpp"

#include "cvfc/layers.hpp"

namespace cvfc {

void CamStack::validate() const {
  if (maps.ndim() != 4) throw DimensionError("CamStack: maps must be [N,C,H,W], got " + shape_string(maps.shape()));
  if (maps.dim(1) != class_names.size()) {
    throw DimensionError("CamStack: " + std::to_string(maps.dim(1)) + " maps for " +
                         std::to_string(class_names.size()) + " class names");
  }
  if (!maps.all_finite()) throw NumericError("CamStack: non-finite activation");
}

Var integrate_taps(const TapSet& taps) {
  if (taps.empty()) throw ArgumentError("integrate_taps: empty tap set");
  std::size_t h = 0, w = 0;
  for (const auto& t : taps) {
    const Tensor& v = t.feature.value();
    if (v.ndim() != 4) throw DimensionError("integrate_taps: tap '" + t.name + "' is not [N,C,H,W]");
    if (v.dim(2) * v.dim(3) > h * w) {
      h = v.dim(2);
      w = v.dim(3);
    }
  }
  std::vector<Var> resized;
  resized.reserve(taps.size());
  for (const auto& t : taps) {
    const Tensor& v = t.feature.value();
    resized.push_back(v.dim(2) == h && v.dim(3) == w ? t.feature : bilinear_resize(t.feature, h, w));
  }
  return concat_channels(resized);
}

CamOutput cam_forward(const Var& feat, const Var& weight, const std::optional<Var>& bias) {
  CamOutput out;
  out.maps = conv1x1(feat, weight, bias);
  const Tensor& m = out.maps.value();
  out.logits = reshape(adaptive_avg_pool(out.maps, 1, 1), {m.dim(0), m.dim(1)});
  out.scores = sigmoid(out.logits);
  return out;
}

Var normalize_cam(const Var& maps) { return minmax_normalize(maps, kCamNormEps); }

CamStack normalize_cam(const CamStack& cs) {
  cs.validate();
  Graph g;
  return {normalize_cam(g.constant(cs.maps)).value(), cs.class_names};
}

CamHead::CamHead(ParameterStore& store, const std::string& name, std::size_t in_channels, std::size_t classes,
                 std::mt19937_64& rng, DType dtype) {
  weight_ = &store.add(name + ".weight", he_uniform({classes, in_channels}, in_channels, rng, dtype));
  bias_ = &store.add(name + ".bias", Tensor::zeros({classes}, dtype));
}

CamOutput CamHead::forward(Graph& g, const Var& feat) const {
  return cam_forward(feat, g.parameter(*weight_), g.parameter(*bias_));
}

}  // namespace cvfc
