#pragma once

#include <string>

#include "cvfc/ops.hpp"

namespace cvfc {

/// Distance between two refined CAM stacks.
enum class CamDistance { mean_abs, mean_squared };

/// Which pair fills the second term of the cross loss: the published
/// ||CAM3 - CAM2||, or ||CAM1 - CAM2|| for ablation.
enum class CrossPairing { cam3_cam2, cam1_cam2 };

struct LossOptions {
  CamDistance distance = CamDistance::mean_abs;
  CrossPairing cross_pairing = CrossPairing::cam3_cam2;
  bool use_consistency = true;
  bool use_cross = true;
};

std::string to_string(CamDistance d);
std::string to_string(CrossPairing p);
CamDistance cam_distance_from_string(const std::string& s);
CrossPairing cross_pairing_from_string(const std::string& s);

struct LossBreakdown {
  double l_cls_1 = 0.0;
  double l_cls_2 = 0.0;
  double l_cls_3 = 0.0;
  double l_cls_total = 0.0;
  double l_cons = 0.0;
  double l_cross = 0.0;
  double total = 0.0;

  bool all_finite() const;
};

/// Mean over N and C of -[y log sigmoid(x) + (1-y) log(1 - sigmoid(x))],
/// evaluated as max(x,0) - x*y + log1p(exp(-|x|)). Targets must be 0/1.
Var multilabel_soft_margin(const Var& logits, const Tensor& targets);

/// Sum of the three branch soft-margin terms.
Var classification_loss(const Var& logits_1, const Var& logits_2, const Var& logits_3, const Tensor& targets);

/// Distance between refined CAM1 and CAM3.
Var consistency_loss(const Var& cam1, const Var& cam3, CamDistance distance = CamDistance::mean_abs);

/// ||CAM1 - CAM3|| + ||CAM3 - CAM2|| (or ||CAM1 - CAM2|| as second term).
Var cross_loss(const Var& cam1, const Var& cam2, const Var& cam3, const LossOptions& opts = {});

/// Every term of the objective on one graph, plus the unweighted total.
struct LossTerms {
  Var cls_1, cls_2, cls_3, cls_total;
  Var cons, cross;  // invalid when disabled in LossOptions
  Var total;

  LossBreakdown breakdown() const;
};

/// total = (l_cls_total + l_cons) + l_cross; disabled terms are left out.
LossTerms total_loss(const Var& cls_1, const Var& cls_2, const Var& cls_3, const Var& cons, const Var& cross);

}  // namespace cvfc
