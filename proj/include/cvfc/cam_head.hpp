#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cvfc/backbone.hpp"

namespace cvfc {

/// Added to (max - min) in CAM normalization so constant maps map to zero.
inline constexpr double kCamNormEps = 1e-5;

/// Per-class activation maps [N,C,H,W] with class-name semantics.
struct CamStack {
  Tensor maps;
  std::vector<std::string> class_names;

  /// Throws when the class axis disagrees with class_names or values are non-finite.
  void validate() const;
};

/// One-step CAM output: maps [N,C,H,W], logits = spatial mean [N,C],
/// scores = sigmoid(logits).
struct CamOutput {
  Var maps;
  Var logits;
  Var scores;
};

/// Resizes every tap bilinearly to the largest tap's spatial size and
/// concatenates the channels in tap order.
Var integrate_taps(const TapSet& taps);

/// maps = conv1x1(feat, weight, bias); scores = sigmoid(adaptive_avg_pool(maps, 1, 1)).
CamOutput cam_forward(const Var& feat, const Var& weight, const std::optional<Var>& bias);

/// Per sample and class: (m - min) / (max - min + kCamNormEps) over space.
Var normalize_cam(const Var& maps);
CamStack normalize_cam(const CamStack& cs);

/// The 1x1 classifier that turns integrated features into CAMs.
class CamHead {
 public:
  CamHead() = default;
  CamHead(ParameterStore& store, const std::string& name, std::size_t in_channels, std::size_t classes,
          std::mt19937_64& rng, DType dtype);

  CamOutput forward(Graph& g, const Var& feat) const;
  std::vector<Parameter*> parameters() const { return {weight_, bias_}; }
  std::size_t in_channels() const { return weight_->value.dim(1); }
  std::size_t classes() const { return weight_->value.dim(0); }

 private:
  Parameter* weight_ = nullptr;  // [C, Cf]
  Parameter* bias_ = nullptr;    // [C]
};

}  // namespace cvfc
