#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvfc/attention.hpp"
#include "cvfc/data.hpp"
#include "cvfc/losses.hpp"

namespace cvfc {

enum class Architecture { cvfc, single };

struct ModelConfig {
  Architecture architecture = Architecture::cvfc;
  std::vector<std::string> class_names = kDefaultClassNames;
  /// Backbone preset per branch. A single-branch model uses branch_presets[0].
  std::array<std::string, 3> branch_presets = {"mini38", "mini50", "mini38"};
  /// Side of the attention grid; 0 means the resolution of branch 2's deepest tap.
  std::size_t attention_size = 0;
  /// Rows of W_Q / W_K; 0 means the integrated channel count of branch 2.
  std::size_t projection_dim = 0;
  QkInit qk_init = QkInit::uniform;
  /// Multiplies Q^T K before the softmax.
  double attention_scale = 1.0;
  /// Branch-1/3 logits from the spatial mean of their attended CAMs instead
  /// of the unrefined ones.
  bool refined_logits = false;
  LossOptions loss;
  std::uint64_t seed = 0;
  DType dtype = DType::f32;
};

/// Normalized class maps for pseudo-labels plus the image-level scores.
struct PseudoCams {
  Tensor maps;    // [N,C,h,w] in [0,1], before gating and suppression
  Tensor scores;  // [N,C]
};

/// What the trainer and inference code need from a model.
class SegmentationNet {
 public:
  virtual ~SegmentationNet() = default;
  virtual const ModelConfig& config() const = 0;
  virtual ParameterStore& store() = 0;
  /// Builds every loss term on `g` for a normalized image batch [N,3,H,W].
  virtual LossTerms compute_loss(Graph& g, const Tensor& images, const Tensor& targets, Mode mode) = 0;
  /// Eval-mode forward producing the maps used for pseudo-masks.
  virtual PseudoCams pseudo_cams(const Tensor& images) = 0;
};

struct BranchOutput {
  TapSet taps;
  Var features;  // integrated taps [N,Cf,h,w]
  CamOutput cam;
  Var attended;  // attend_cam output, unnormalized [N,C,a,a]
  Var refined;   // normalize_cam(attended)
};

struct ForwardResult {
  std::array<BranchOutput, 3> branches;
  QueryKey qk;
  Var attention;  // [N,P,P]
  std::size_t attention_h = 0;
  std::size_t attention_w = 0;
};

class CvfcModel : public SegmentationNet {
 public:
  explicit CvfcModel(ModelConfig cfg);

  const ModelConfig& config() const override { return cfg_; }
  ParameterStore& store() override { return store_; }

  /// Whole three-branch forward on one graph. With `injected_attention`
  /// ([N,P,P]) the learned attention is replaced by that constant.
  ForwardResult forward_all(Graph& g, const Var& images, Mode mode,
                            const Tensor* injected_attention = nullptr) const;
  LossTerms losses(const ForwardResult& fr, const Tensor& targets) const;
  LossTerms compute_loss(Graph& g, const Tensor& images, const Tensor& targets, Mode mode) override;
  PseudoCams pseudo_cams(const Tensor& images) override;

  /// Attention grid side for a given input size.
  std::pair<std::size_t, std::size_t> attention_grid(std::size_t height, std::size_t width) const;
  /// Parameters registered for branch k (0-based), including its CAM head;
  /// branch 2 (k = 1) also owns the Q/K projection.
  const std::vector<Parameter*>& branch_parameters(std::size_t k) const { return branch_params_.at(k); }
  const QKProjection& projection() const { return qk_; }

 private:
  BranchOutput run_branch(Graph& g, std::size_t k, const Var& images, Mode mode) const;

  ModelConfig cfg_;
  ParameterStore store_;
  std::vector<std::unique_ptr<Backbone>> backbones_;
  std::array<CamHead, 3> heads_;
  QKProjection qk_;
  std::array<std::vector<Parameter*>, 3> branch_params_;
};

/// One backbone and CAM head trained with the classification loss only.
class SingleBranchModel : public SegmentationNet {
 public:
  explicit SingleBranchModel(ModelConfig cfg);

  const ModelConfig& config() const override { return cfg_; }
  ParameterStore& store() override { return store_; }

  CamOutput forward(Graph& g, const Var& images, Mode mode) const;
  LossTerms compute_loss(Graph& g, const Tensor& images, const Tensor& targets, Mode mode) override;
  PseudoCams pseudo_cams(const Tensor& images) override;

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  std::unique_ptr<Backbone> backbone_;
  CamHead head_;
};

std::unique_ptr<SegmentationNet> build_model(const ModelConfig& cfg);

/// Gates classes (by `labels` when given, else by score >= 0.5), suppresses
/// non-maximal classes and thresholds into masks at the input resolution.
/// Runs in chunks of `chunk` images. bg_threshold must lie in [0,1).
std::vector<PseudoMask> infer_pseudo_labels(SegmentationNet& net, std::span<const LabeledPatch> patches,
                                            double bg_threshold, bool use_labels = false,
                                            std::size_t chunk = 16);

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

}  // namespace cvfc
