#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cvfc/layers.hpp"

namespace cvfc {

enum class BlockKind { basic, bottleneck };

struct StageConfig {
  std::string name;
  std::size_t blocks = 1;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  BlockKind kind = BlockKind::basic;
};

/// Stem (3x3 conv, stride 1) followed by residual stages. Every stage may
/// be exported as a named tap.
struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t stem_channels = 16;
  std::vector<StageConfig> stages;
  std::vector<std::string> tap_names;
  /// Bottleneck inner width is out_channels / expansion.
  std::size_t bottleneck_expansion = 4;
  /// Zero-initialize the last batchnorm scale of every block, so each block
  /// starts as relu(shortcut(x)).
  bool zero_init_residual = false;

  /// Throws ConfigError on fewer than three stages, unknown tap names,
  /// zero extents, or zero strides.
  void validate() const;
  std::size_t stride_product() const;

  /// "mini38" (basic blocks), "mini50" (bottleneck blocks), and the
  /// reduced-width "tiny38"/"tiny50" used by the gradient-check suite.
  static BackboneConfig preset(std::string_view name);
};

struct Tap {
  std::string name;
  Var feature;
};

/// Feature maps in tap order; spatial extents are non-increasing with depth.
using TapSet = std::vector<Tap>;

struct ResidualBlock {
  BlockKind kind = BlockKind::basic;
  std::vector<Conv2d> convs;
  std::vector<BatchNorm2d> norms;
  std::optional<Conv2d> shortcut;

  Var forward(Graph& g, const Var& x, Mode mode) const;
};

class Backbone {
 public:
  /// Registers every parameter in `store` under `prefix` and initializes
  /// them (He-uniform conv weights, zero biases, batchnorm scale 1 / shift 0)
  /// from `seed`. Identical (config, seed) give bitwise-identical parameters.
  Backbone(const BackboneConfig& cfg, std::uint64_t seed, ParameterStore& store, const std::string& prefix,
           DType dtype = DType::f32);

  /// x is [N, in_channels, H, W] with H and W divisible by the stride product.
  TapSet forward(Graph& g, const Var& x, Mode mode) const;

  const BackboneConfig& config() const { return cfg_; }
  const std::vector<Parameter*>& parameters() const { return params_; }
  /// Channel count of every tap, in tap order.
  std::vector<std::size_t> tap_channels() const;
  const std::vector<std::vector<ResidualBlock>>& stages() const { return stages_; }

 private:
  BackboneConfig cfg_;
  Conv2d stem_conv_;
  BatchNorm2d stem_norm_;
  std::vector<std::vector<ResidualBlock>> stages_;
  std::vector<Parameter*> params_;
};

}  // namespace cvfc
