#include "cvfc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "cvfc/ops.hpp"
#include "json.hpp"

namespace cvfc {

namespace fs = std::filesystem;
using nlohmann::json;

PseudoMask pseudo_mask(const Tensor& maps, double bg_threshold, std::size_t out_h, std::size_t out_w) {
  if (!(bg_threshold >= 0.0 && bg_threshold < 1.0)) {
    throw ArgumentError("pseudo_mask: bg_threshold must lie in [0,1), got " + std::to_string(bg_threshold));
  }
  Tensor m = maps;
  if (m.ndim() == 3) m = m.reshaped({1, m.dim(0), m.dim(1), m.dim(2)});
  if (m.ndim() != 4 || m.dim(0) != 1) throw DimensionError("pseudo_mask: maps must be [C,h,w] or [1,C,h,w]");
  if (out_h == 0 || out_w == 0) throw DimensionError("pseudo_mask: output size must be positive");
  Tensor resized = m;
  if (m.dim(2) != out_h || m.dim(3) != out_w) {
    Graph g(false);
    resized = bilinear_resize(g.constant(m), out_h, out_w).value();
  }
  const std::size_t c = resized.dim(1), hw = out_h * out_w;
  PseudoMask out{out_h, out_w, std::vector<std::uint8_t>(hw, 0), ""};
  for (std::size_t i = 0; i < hw; ++i) {
    std::size_t best = 0;
    double best_v = resized.at(i);
    for (std::size_t k = 1; k < c; ++k) {
      const double v = resized.at(k * hw + i);
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    if (best_v >= bg_threshold) out.labels[i] = static_cast<std::uint8_t>(best + 1);
  }
  return out;
}

ConfusionMatrix::ConfusionMatrix(std::size_t num_labels) : n_(num_labels), counts_(num_labels * num_labels, 0) {}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt) {
  if (!pred.same_shape(gt)) {
    throw DimensionError("confusion: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width) +
                         (gt.id.empty() ? "" : " for " + gt.id));
  }
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const std::size_t g = gt.labels[i], p = pred.labels[i];
    if (g >= n_ || p >= n_) {
      throw ArgumentError("confusion: label " + std::to_string(std::max(g, p)) + " outside 0.." +
                          std::to_string(n_ - 1) + (gt.id.empty() ? "" : " in " + gt.id));
    }
    ++counts_[g * n_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw DimensionError("confusion: merging matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::gt_count(std::size_t label) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += at(label, p);
  return s;
}

std::uint64_t ConfusionMatrix::pred_count(std::size_t label) const {
  std::uint64_t s = 0;
  for (std::size_t g = 0; g < n_; ++g) s += at(g, label);
  return s;
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

double ConfusionMatrix::iou(std::size_t label) const {
  const std::uint64_t inter = at(label, label);
  const std::uint64_t uni = gt_count(label) + pred_count(label) - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double iou_per_class(const LabelMap& pred, const LabelMap& gt, std::uint8_t c) {
  if (!pred.same_shape(gt)) throw DimensionError("iou_per_class: masks differ in shape");
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const bool a = pred.labels[i] == c, b = gt.labels[i] == c;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double miou(std::span<const double> per_class) {
  if (per_class.empty()) throw ArgumentError("miou: no classes");
  double s = 0.0;
  for (double v : per_class) s += v;
  return s / static_cast<double>(per_class.size());
}

double fwiou(std::span<const double> per_class, std::span<const double> gt_freq) {
  if (per_class.empty() || per_class.size() != gt_freq.size()) {
    throw ArgumentError("fwiou: need one frequency per class");
  }
  double total = 0.0;
  for (double f : gt_freq) {
    if (!(f >= 0.0)) throw ArgumentError("fwiou: frequencies must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("fwiou: frequencies sum to " + std::to_string(total));
  double s = 0.0;
  for (std::size_t i = 0; i < per_class.size(); ++i) s += gt_freq[i] * per_class[i];
  return s;
}

double round_half_up(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // Nudge by a relative epsilon so decimal ties stored slightly below the
  // tie (e.g. 0.71220000000000001 vs 0.71219999999999994) round up.
  const double scaled = v * scale;
  return std::floor(scaled + 0.5 + 1e-9 * std::max(1.0, std::abs(scaled))) / scale;
}

EvalReport build_report(const ConfusionMatrix& confusion, const std::vector<std::string>& class_names) {
  if (confusion.size() != class_names.size() + 1) {
    throw DimensionError("report: confusion has " + std::to_string(confusion.size()) + " labels for " +
                         std::to_string(class_names.size()) + " classes plus background");
  }
  EvalReport r;
  r.class_names = class_names;
  r.confusion = confusion;
  std::uint64_t fg = 0;
  for (std::size_t l = 0; l < confusion.size(); ++l) {
    r.gt_pixels.push_back(confusion.gt_count(l));
    if (l > 0) fg += r.gt_pixels.back();
  }
  std::vector<double> freq;
  for (std::size_t c = 1; c < confusion.size(); ++c) {
    r.per_class_iou.push_back(confusion.iou(c));
    freq.push_back(fg == 0 ? 1.0 / static_cast<double>(class_names.size())
                           : static_cast<double>(r.gt_pixels[c]) / static_cast<double>(fg));
  }
  if (fg > 0) {
    // Renormalize against rounding so the sum-to-one check is exact enough.
    const double s = std::accumulate(freq.begin(), freq.end(), 0.0);
    for (double& f : freq) f /= s;
  }
  r.miou = miou(r.per_class_iou);
  r.fwiou = fwiou(r.per_class_iou, freq);
  return r;
}

std::string EvalReport::to_json() const {
  json per_class = json::object();
  json pixels = json::object();
  pixels["background"] = gt_pixels.empty() ? 0 : gt_pixels[0];
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    per_class[class_names[c]] = per_class_iou[c];
    pixels[class_names[c]] = gt_pixels[c + 1];
  }
  json conf = json::array();
  for (std::size_t g = 0; g < confusion.size(); ++g) {
    json row = json::array();
    for (std::size_t p = 0; p < confusion.size(); ++p) row.push_back(confusion.at(g, p));
    conf.push_back(std::move(row));
  }
  json j{{"class_names", class_names}, {"per_class_iou", per_class}, {"miou", miou},
         {"fwiou", fwiou},             {"pixels", pixels},          {"confusion", conf}};
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    const auto names = j.at("class_names").get<std::vector<std::string>>();
    const auto rows = j.at("confusion");
    ConfusionMatrix cm(names.size() + 1);
    if (rows.size() != cm.size()) throw ParseError("report: confusion has the wrong number of rows");
    for (std::size_t g = 0; g < cm.size(); ++g) {
      if (rows[g].size() != cm.size()) throw ParseError("report: confusion row has the wrong length");
      for (std::size_t p = 0; p < cm.size(); ++p) cm.at(g, p) = rows[g][p].get<std::uint64_t>();
    }
    EvalReport r = build_report(cm, names);
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (std::abs(j.at("per_class_iou").at(names[c]).get<double>() - r.per_class_iou[c]) > 1e-12) {
        throw ParseError("report: per-class IoU disagrees with the confusion matrix");
      }
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
}

std::string EvalReport::table() const {
  std::size_t width = 7;  // "overall"
  for (const auto& n : class_names) width = std::max(width, n.size());
  std::ostringstream os;
  char buf[64];
  auto row = [&](const std::string& name, const std::string& value) {
    os << name << std::string(width - name.size() + 2, ' ') << value << '\n';
  };
  row("class", "IoU");
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    std::snprintf(buf, sizeof(buf), "%.4f", round_half_up(per_class_iou[c], 4));
    row(class_names[c], buf);
  }
  std::snprintf(buf, sizeof(buf), "%.4f", round_half_up(miou, 4));
  row("mIoU", buf);
  std::snprintf(buf, sizeof(buf), "%.4f", round_half_up(fwiou, 4));
  row("fwIoU", buf);
  return os.str();
}

EvalReport evaluate_directories(const fs::path& pred_dir, const fs::path& gt_dir,
                                const std::vector<std::string>& class_names) {
  auto list = [](const fs::path& dir) {
    if (!fs::is_directory(dir)) throw EvalError("not a directory: " + dir.string());
    std::map<std::string, fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files[e.path().filename().string()] = e.path();
    }
    return files;
  };
  const auto preds = list(pred_dir);
  const auto gts = list(gt_dir);
  std::vector<std::string> unpaired;
  for (const auto& [name, _] : preds) {
    if (!gts.count(name)) unpaired.push_back("prediction " + name);
  }
  for (const auto& [name, _] : gts) {
    if (!preds.count(name)) unpaired.push_back("ground truth " + name);
  }
  if (!unpaired.empty() || gts.empty()) {
    std::string msg = gts.empty() && preds.empty() ? "no mask files to evaluate" : "unpaired masks:";
    for (const auto& u : unpaired) msg += " " + u + ";";
    throw EvalError(msg);
  }
  ConfusionMatrix cm(class_names.size() + 1);
  for (const auto& [name, gt_path] : gts) {
    LabelMap gt = read_mask_png(gt_path);
    LabelMap pred = read_mask_png(preds.at(name));
    try {
      cm.add(pred, gt);
    } catch (const Error& e) {
      throw EvalError(name + ": " + e.what());
    }
  }
  return build_report(cm, class_names);
}

}  // namespace cvfc
