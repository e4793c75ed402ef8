#include "cvfc/backbone.hpp"

#include <algorithm>

namespace cvfc {

void BackboneConfig::validate() const {
  if (in_channels == 0 || stem_channels == 0) throw ConfigError("backbone: channel counts must be positive");
  if (stages.size() < 3) throw ConfigError("backbone: at least three stages are required");
  if (bottleneck_expansion == 0) throw ConfigError("backbone: bottleneck expansion must be positive");
  for (const auto& s : stages) {
    if (s.name.empty()) throw ConfigError("backbone: stage names must be non-empty");
    if (s.blocks == 0 || s.out_channels == 0) throw ConfigError("backbone: stage '" + s.name + "' is empty");
    if (s.stride == 0) throw ConfigError("backbone: stage '" + s.name + "' has stride 0");
    if (s.kind == BlockKind::bottleneck && s.out_channels < bottleneck_expansion) {
      throw ConfigError("backbone: stage '" + s.name + "' is narrower than the bottleneck expansion");
    }
    if (std::count_if(stages.begin(), stages.end(), [&](const auto& o) { return o.name == s.name; }) > 1) {
      throw ConfigError("backbone: duplicate stage name '" + s.name + "'");
    }
  }
  if (tap_names.empty()) throw ConfigError("backbone: no tap names");
  std::size_t last = 0;
  for (std::size_t i = 0; i < tap_names.size(); ++i) {
    auto it = std::find_if(stages.begin(), stages.end(), [&](const auto& s) { return s.name == tap_names[i]; });
    if (it == stages.end()) throw ConfigError("backbone: tap '" + tap_names[i] + "' is not a stage name");
    const auto pos = static_cast<std::size_t>(it - stages.begin());
    if (i > 0 && pos <= last) throw ConfigError("backbone: taps must follow stage order");
    last = pos;
  }
}

std::size_t BackboneConfig::stride_product() const {
  std::size_t p = 1;
  for (const auto& s : stages) p *= s.stride;
  return p;
}

BackboneConfig BackboneConfig::preset(std::string_view name) {
  BackboneConfig cfg;
  if (name == "mini38") {
    cfg.stem_channels = 16;
    cfg.stages = {{"conv4", 2, 32, 2, BlockKind::basic},
                  {"conv5", 2, 64, 2, BlockKind::basic},
                  {"conv6", 2, 128, 2, BlockKind::basic}};
    cfg.tap_names = {"conv4", "conv5", "conv6"};
  } else if (name == "mini50") {
    cfg.stem_channels = 16;
    cfg.stages = {{"c2", 2, 64, 2, BlockKind::bottleneck},
                  {"c3", 2, 128, 2, BlockKind::bottleneck},
                  {"c4", 2, 256, 2, BlockKind::bottleneck}};
    cfg.tap_names = {"c2", "c3", "c4"};
  } else if (name == "tiny38") {
    cfg.stem_channels = 3;
    cfg.stages = {{"conv4", 1, 4, 2, BlockKind::basic},
                  {"conv5", 1, 4, 2, BlockKind::basic},
                  {"conv6", 1, 6, 2, BlockKind::basic}};
    cfg.tap_names = {"conv4", "conv5", "conv6"};
  } else if (name == "tiny50") {
    cfg.stem_channels = 3;
    cfg.bottleneck_expansion = 2;
    cfg.stages = {{"c2", 1, 4, 2, BlockKind::bottleneck},
                  {"c3", 1, 4, 2, BlockKind::bottleneck},
                  {"c4", 1, 6, 2, BlockKind::bottleneck}};
    cfg.tap_names = {"c2", "c3", "c4"};
  } else {
    throw ConfigError("unknown backbone preset '" + std::string(name) + "'");
  }
  return cfg;
}

Var ResidualBlock::forward(Graph& g, const Var& x, Mode mode) const {
  Var h = x;
  const std::size_t last = convs.size() - 1;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    h = norms[i].forward(g, convs[i].forward(g, h), mode);
    if (i != last) h = relu(h);
  }
  const Var skip = shortcut ? shortcut->forward(g, x) : x;
  return relu(add(h, skip));
}

Backbone::Backbone(const BackboneConfig& cfg, std::uint64_t seed, ParameterStore& store, const std::string& prefix,
                   DType dtype)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t first = store.size();
  std::mt19937_64 rng(seed);

  stem_conv_ = Conv2d(store, prefix + ".stem.conv", cfg_.in_channels, cfg_.stem_channels, 3, {1, 1}, false, rng, dtype);
  stem_norm_ = BatchNorm2d(store, prefix + ".stem.bn", cfg_.stem_channels, dtype);

  std::size_t in = cfg_.stem_channels;
  for (const auto& sc : cfg_.stages) {
    std::vector<ResidualBlock> blocks;
    for (std::size_t b = 0; b < sc.blocks; ++b) {
      const std::string base = prefix + "." + sc.name + "." + std::to_string(b);
      const std::size_t stride = b == 0 ? sc.stride : 1;
      const std::size_t out = sc.out_channels;
      ResidualBlock block;
      block.kind = sc.kind;
      if (sc.kind == BlockKind::basic) {
        block.convs.emplace_back(store, base + ".conv1", in, out, 3, Conv2dOptions{stride, 1}, false, rng, dtype);
        block.norms.emplace_back(store, base + ".bn1", out, dtype);
        block.convs.emplace_back(store, base + ".conv2", out, out, 3, Conv2dOptions{1, 1}, false, rng, dtype);
        block.norms.emplace_back(store, base + ".bn2", out, dtype);
      } else {
        const std::size_t mid = out / cfg_.bottleneck_expansion;
        block.convs.emplace_back(store, base + ".conv1", in, mid, 1, Conv2dOptions{1, 0}, false, rng, dtype);
        block.norms.emplace_back(store, base + ".bn1", mid, dtype);
        block.convs.emplace_back(store, base + ".conv2", mid, mid, 3, Conv2dOptions{stride, 1}, false, rng, dtype);
        block.norms.emplace_back(store, base + ".bn2", mid, dtype);
        block.convs.emplace_back(store, base + ".conv3", mid, out, 1, Conv2dOptions{1, 0}, false, rng, dtype);
        block.norms.emplace_back(store, base + ".bn3", out, dtype);
      }
      if (stride != 1 || in != out) {
        block.shortcut.emplace(store, base + ".shortcut", in, out, 1, Conv2dOptions{stride, 0}, true, rng, dtype);
      }
      if (cfg_.zero_init_residual) {
        auto& gamma = block.norms.back().gamma().value;
        gamma = Tensor::zeros(gamma.shape(), gamma.dtype());
      }
      blocks.push_back(std::move(block));
      in = out;
    }
    stages_.push_back(std::move(blocks));
  }

  auto all = store.all();
  params_.assign(all.begin() + static_cast<std::ptrdiff_t>(first), all.end());
}

TapSet Backbone::forward(Graph& g, const Var& x, Mode mode) const {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4 || xv.dim(1) != cfg_.in_channels) {
    throw DimensionError("backbone: expected input [N," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                         shape_string(xv.shape()));
  }
  const std::size_t stride = cfg_.stride_product();
  if (xv.dim(2) % stride != 0 || xv.dim(3) % stride != 0) {
    throw DimensionError("backbone: spatial size " + std::to_string(xv.dim(2)) + "x" + std::to_string(xv.dim(3)) +
                         " is not divisible by the stride product " + std::to_string(stride));
  }
  TapSet taps;
  Var h = relu(stem_norm_.forward(g, stem_conv_.forward(g, x), mode));
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (const auto& block : stages_[s]) h = block.forward(g, h, mode);
    const auto& name = cfg_.stages[s].name;
    if (std::find(cfg_.tap_names.begin(), cfg_.tap_names.end(), name) != cfg_.tap_names.end()) {
      taps.push_back({name, h});
    }
  }
  return taps;
}

std::vector<std::size_t> Backbone::tap_channels() const {
  std::vector<std::size_t> out;
  for (const auto& s : cfg_.stages) {
    if (std::find(cfg_.tap_names.begin(), cfg_.tap_names.end(), s.name) != cfg_.tap_names.end()) {
      out.push_back(s.out_channels);
    }
  }
  return out;
}

}  // namespace cvfc
