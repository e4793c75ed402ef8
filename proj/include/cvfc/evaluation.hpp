#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cvfc/image_io.hpp"
#include "cvfc/tensor.hpp"

namespace cvfc {

inline constexpr double kDefaultBgThreshold = 0.3;

/// maps [C,h,w] (or [1,C,h,w]) of normalized activations, resized
/// bilinearly to out_h x out_w. A pixel is background when its largest
/// activation is below bg_threshold, else 1 + argmax (ties to the lowest class).
PseudoMask pseudo_mask(const Tensor& maps, double bg_threshold, std::size_t out_h, std::size_t out_w);

/// (C+1) x (C+1) pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_labels = 0);

  /// Throws DimensionError on a shape mismatch and ArgumentError on an
  /// out-of-range label.
  void add(const LabelMap& pred, const LabelMap& gt);
  void merge(const ConfusionMatrix& other);

  std::size_t size() const { return n_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * n_ + pred]; }
  std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts_[gt * n_ + pred]; }
  std::uint64_t gt_count(std::size_t label) const;
  std::uint64_t pred_count(std::size_t label) const;
  std::uint64_t total() const;
  /// |pred=c and gt=c| / |pred=c or gt=c|, 1.0 when both are empty.
  double iou(std::size_t label) const;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

double iou_per_class(const LabelMap& pred, const LabelMap& gt, std::uint8_t c);

/// Arithmetic mean; empty input is an ArgumentError.
double miou(std::span<const double> per_class);

/// Sum of freq_c * iou_c. Frequencies must be >= 0 and sum to 1 within 1e-9.
double fwiou(std::span<const double> per_class, std::span<const double> gt_freq);

/// Rounds half away from zero at `decimals` places (values here are >= 0).
double round_half_up(double v, int decimals);

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<double> per_class_iou;  // foreground classes, class_names order
  double miou = 0.0;
  double fwiou = 0.0;
  ConfusionMatrix confusion;
  std::vector<std::uint64_t> gt_pixels;  // background first

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  /// Aligned plain-text table with four-decimal values.
  std::string table() const;
};

/// Metrics from one global confusion matrix. fwIoU weights are ground-truth
/// pixel shares among foreground classes (uniform when there are none).
EvalReport build_report(const ConfusionMatrix& confusion, const std::vector<std::string>& class_names);

/// Pairs *.png files by name across the two directories and accumulates one
/// confusion matrix. Unpaired files are an EvalError listing them.
EvalReport evaluate_directories(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                const std::vector<std::string>& class_names);

}  // namespace cvfc
