#include "cvfc/model.hpp"

#include <algorithm>

#include "cvfc/evaluation.hpp"
#include "cvfc/fpenv.hpp"
#include "cvfc/rng.hpp"

namespace cvfc {

std::string to_string(Architecture a) { return a == Architecture::cvfc ? "cvfc" : "single"; }

Architecture architecture_from_string(const std::string& s) {
  if (s == "cvfc") return Architecture::cvfc;
  if (s == "single") return Architecture::single;
  throw ConfigError("unknown architecture '" + s + "' (expected cvfc or single)");
}

namespace {

std::size_t integrated_channels(const Backbone& b) {
  const auto ch = b.tap_channels();
  std::size_t s = 0;
  for (std::size_t c : ch) s += c;
  return s;
}

void require_classes(const ModelConfig& cfg) {
  if (cfg.class_names.empty()) throw ConfigError("model needs at least one class");
}

void require_images(const Tensor& images) {
  if (images.ndim() != 4 || images.dim(1) != 3) {
    throw DimensionError("images must be [N,3,H,W], got " + shape_string(images.shape()));
  }
}

Tensor sample(const Tensor& batch, std::size_t n) {
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t per = shape_numel(s);
  Tensor out(s, batch.dtype());
  for (std::size_t i = 0; i < per; ++i) out.set(i, batch.at(n * per + i));
  return out;
}

}  // namespace

CvfcModel::CvfcModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  require_classes(cfg_);
  const std::size_t classes = cfg_.class_names.size();
  for (std::size_t k = 0; k < 3; ++k) {
    const std::string prefix = "b" + std::to_string(k + 1);
    const std::size_t first = store_.size();
    backbones_.push_back(std::make_unique<Backbone>(BackboneConfig::preset(cfg_.branch_presets[k]),
                                                    derive_seed(cfg_.seed, {k + 1}), store_, prefix + ".backbone",
                                                    cfg_.dtype));
    std::mt19937_64 head_rng(derive_seed(cfg_.seed, {100 + k}));
    heads_[k] = CamHead(store_, prefix + ".head", integrated_channels(*backbones_[k]), classes, head_rng, cfg_.dtype);
    if (k == 1) {
      const std::size_t cf = integrated_channels(*backbones_[1]);
      std::mt19937_64 qk_rng(derive_seed(cfg_.seed, {200}));
      qk_ = QKProjection(store_, prefix + ".qk", cf, cfg_.projection_dim ? cfg_.projection_dim : cf, qk_rng,
                         cfg_.dtype, cfg_.qk_init);
    }
    auto all = store_.all();
    branch_params_[k].assign(all.begin() + static_cast<std::ptrdiff_t>(first), all.end());
  }
}

std::pair<std::size_t, std::size_t> CvfcModel::attention_grid(std::size_t height, std::size_t width) const {
  if (cfg_.attention_size) return {cfg_.attention_size, cfg_.attention_size};
  const std::size_t s = backbones_[1]->config().stride_product();
  return {height / s, width / s};
}

BranchOutput CvfcModel::run_branch(Graph& g, std::size_t k, const Var& images, Mode mode) const {
  try {
    BranchOutput b;
    b.taps = backbones_[k]->forward(g, images, mode);
    b.features = integrate_taps(b.taps);
    b.cam = heads_[k].forward(g, b.features);
    return b;
  } catch (const DimensionError& e) {
    throw DimensionError("branch " + std::to_string(k + 1) + ": " + e.what());
  }
}

ForwardResult CvfcModel::forward_all(Graph& g, const Var& images, Mode mode, const Tensor* injected_attention) const {
  require_images(images.value());
  ForwardResult fr;
  for (std::size_t k = 0; k < 3; ++k) fr.branches[k] = run_branch(g, k, images, mode);

  const auto [ah, aw] = attention_grid(images.value().dim(2), images.value().dim(3));
  const Var& feat = fr.branches[1].features;
  if (ah == 0 || aw == 0 || ah > feat.value().dim(2) || aw > feat.value().dim(3)) {
    throw DimensionError("branch 2: attention grid " + std::to_string(ah) + "x" + std::to_string(aw) +
                         " does not fit integrated features " + shape_string(feat.shape()));
  }
  fr.attention_h = ah;
  fr.attention_w = aw;
  if (injected_attention) {
    fr.attention = g.constant(*injected_attention);
  } else {
    const bool same = feat.value().dim(2) == ah && feat.value().dim(3) == aw;
    fr.qk = qk_.forward(g, same ? feat : adaptive_avg_pool(feat, ah, aw));
    fr.attention = attention_matrix(fr.qk, cfg_.attention_scale);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    BranchOutput& b = fr.branches[k];
    try {
      b.attended = attend_cam(b.cam.maps, fr.attention, ah, aw);
    } catch (const DimensionError& e) {
      throw DimensionError("branch " + std::to_string(k + 1) + ": " + e.what());
    }
    b.refined = normalize_cam(b.attended);
  }
  return fr;
}

LossTerms CvfcModel::losses(const ForwardResult& fr, const Tensor& targets) const {
  std::array<Var, 3> cls;
  for (std::size_t k = 0; k < 3; ++k) {
    const BranchOutput& b = fr.branches[k];
    Var logits = b.cam.logits;
    if (cfg_.refined_logits && k != 1) {
      const Shape& s = b.attended.shape();
      logits = reshape(adaptive_avg_pool(b.attended, 1, 1), {s[0], s[1]});
    }
    cls[k] = multilabel_soft_margin(logits, targets);
  }
  const Var& r1 = fr.branches[0].refined;
  const Var& r2 = fr.branches[1].refined;
  const Var& r3 = fr.branches[2].refined;
  Var cons = cfg_.loss.use_consistency ? consistency_loss(r1, r3, cfg_.loss.distance) : Var{};
  Var cross = cfg_.loss.use_cross ? cross_loss(r1, r2, r3, cfg_.loss) : Var{};
  return total_loss(cls[0], cls[1], cls[2], cons, cross);
}

LossTerms CvfcModel::compute_loss(Graph& g, const Tensor& images, const Tensor& targets, Mode mode) {
  return losses(forward_all(g, g.constant(images), mode), targets);
}

PseudoCams CvfcModel::pseudo_cams(const Tensor& images) {
  Graph g;
  const ForwardResult fr = forward_all(g, g.constant(images), Mode::eval);
  return {fr.branches[1].refined.value(), fr.branches[1].cam.scores.value()};
}

SingleBranchModel::SingleBranchModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  require_classes(cfg_);
  backbone_ = std::make_unique<Backbone>(BackboneConfig::preset(cfg_.branch_presets[0]), derive_seed(cfg_.seed, {1}),
                                         store_, "b1.backbone", cfg_.dtype);
  std::mt19937_64 head_rng(derive_seed(cfg_.seed, {100}));
  head_ = CamHead(store_, "b1.head", integrated_channels(*backbone_), cfg_.class_names.size(), head_rng, cfg_.dtype);
}

CamOutput SingleBranchModel::forward(Graph& g, const Var& images, Mode mode) const {
  require_images(images.value());
  return head_.forward(g, integrate_taps(backbone_->forward(g, images, mode)));
}

LossTerms SingleBranchModel::compute_loss(Graph& g, const Tensor& images, const Tensor& targets, Mode mode) {
  const CamOutput cam = forward(g, g.constant(images), mode);
  Var zero = g.constant(Tensor::scalar(0.0, cfg_.dtype));
  return total_loss(multilabel_soft_margin(cam.logits, targets), zero, zero, Var{}, Var{});
}

PseudoCams SingleBranchModel::pseudo_cams(const Tensor& images) {
  Graph g;
  const CamOutput cam = forward(g, g.constant(images), Mode::eval);
  return {normalize_cam(cam.maps).value(), cam.scores.value()};
}

std::unique_ptr<SegmentationNet> build_model(const ModelConfig& cfg) {
  if (cfg.architecture == Architecture::cvfc) return std::make_unique<CvfcModel>(cfg);
  return std::make_unique<SingleBranchModel>(cfg);
}

std::vector<PseudoMask> infer_pseudo_labels(SegmentationNet& net, std::span<const LabeledPatch> patches,
                                            double bg_threshold, bool use_labels, std::size_t chunk) {
  if (!(bg_threshold >= 0.0 && bg_threshold < 1.0)) {
    throw ArgumentError("threshold must lie in [0,1), got " + std::to_string(bg_threshold));
  }
  chunk = std::max<std::size_t>(chunk, 1);
  const FlushDenormals ftz;
  std::vector<PseudoMask> out;
  out.reserve(patches.size());
  for (std::size_t start = 0; start < patches.size(); start += chunk) {
    const std::size_t end = std::min(patches.size(), start + chunk);
    std::vector<const LabeledPatch*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&patches[i]);
    PseudoCams pc = net.pseudo_cams(make_image_batch(ptrs, net.config().dtype));
    const std::size_t c = pc.maps.dim(1), hw = pc.maps.dim(2) * pc.maps.dim(3);
    for (std::size_t n = 0; n < ptrs.size(); ++n) {
      for (std::size_t k = 0; k < c; ++k) {
        const bool keep = use_labels && ptrs[n]->label.size() == c ? ptrs[n]->label[k] == 1
                                                                  : pc.scores.at(n * c + k) >= 0.5;
        if (keep) continue;
        for (std::size_t i = 0; i < hw; ++i) pc.maps.set((n * c + k) * hw + i, 0.0);
      }
    }
    const Tensor suppressed = suppress_non_max(pc.maps);
    for (std::size_t n = 0; n < ptrs.size(); ++n) {
      PseudoMask m = pseudo_mask(sample(suppressed, n), bg_threshold, ptrs[n]->height(), ptrs[n]->width());
      m.id = ptrs[n]->id;
      out.push_back(std::move(m));
    }
  }
  return out;
}

}  // namespace cvfc
