#include "cvfc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "cvfc/errors.hpp"
#include "cvfc/rng.hpp"
#include "json.hpp"

namespace cvfc {

namespace fs = std::filesystem;
using nlohmann::json;

bool LabeledPatch::consistent() const {
  if (std::none_of(label.begin(), label.end(), [](std::uint8_t v) { return v == 1; })) return false;
  if (!gt_mask) return true;
  std::vector<std::uint8_t> seen(label.size(), 0);
  for (std::uint8_t v : gt_mask->labels) {
    if (v > label.size()) return false;
    if (v > 0) seen[v - 1] = 1;
  }
  return seen == label;
}

std::vector<std::uint8_t> parse_bracket_label(std::string_view filename, std::size_t classes) {
  const std::string name(filename);
  const auto open = filename.rfind('[');
  const auto close = filename.rfind(']');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    throw ParseError("no [a, b, c] label in file name '" + name + "'");
  }
  std::vector<std::uint8_t> label;
  std::string_view body = filename.substr(open + 1, close - open - 1);
  while (true) {
    const auto comma = body.find(',');
    std::string_view item = body.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (item == "0") {
      label.push_back(0);
    } else if (item == "1") {
      label.push_back(1);
    } else {
      throw ParseError("label entry '" + std::string(item) + "' is not 0 or 1 in '" + name + "'");
    }
    if (comma == std::string_view::npos) break;
    body.remove_prefix(comma + 1);
  }
  if (label.size() != classes) {
    throw ParseError("label in '" + name + "' has " + std::to_string(label.size()) + " entries, expected " +
                     std::to_string(classes));
  }
  return label;
}

std::string format_bracket_label(std::span<const std::uint8_t> label) {
  std::string s = "[";
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(label[i]);
  }
  return s + "]";
}

namespace {

std::vector<std::uint8_t> label_from_json(const json& j, std::size_t classes, const std::string& where) {
  if (!j.is_array() || j.size() != classes) {
    throw IngestError(where + ": label must be an array of " + std::to_string(classes) + " entries");
  }
  std::vector<std::uint8_t> label;
  for (const auto& v : j) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
      throw IngestError(where + ": label entries must be 0 or 1");
    }
    label.push_back(static_cast<std::uint8_t>(v.get<int>()));
  }
  return label;
}

DatasetManifest load_manifest(const fs::path& root) {
  const fs::path file = root / "manifest.json";
  std::ifstream in(file);
  if (!in) throw IngestError("cannot open " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IngestError(file.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = root;
  try {
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (m.class_names.empty()) throw IngestError(file.string() + ": class_names is empty");
    std::vector<std::string> missing;
    for (const auto& e : j.at("entries")) {
      DatasetEntry entry;
      entry.image = e.at("image").get<std::string>();
      entry.label = label_from_json(e.at("label"), m.class_names.size(), file.string());
      if (e.contains("mask")) entry.mask = fs::path(e.at("mask").get<std::string>());
      if (!fs::is_regular_file(root / entry.image)) missing.push_back(entry.image.string());
      if (entry.mask && !fs::is_regular_file(root / *entry.mask)) missing.push_back(entry.mask->string());
      m.entries.push_back(std::move(entry));
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& s : missing) list += (list.empty() ? "" : ", ") + s;
      throw IngestError(file.string() + " references missing files: " + list);
    }
  } catch (const json::exception& e) {
    throw IngestError(file.string() + ": " + e.what());
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.image < b.image; });
  return m;
}

}  // namespace

DatasetManifest load_dataset(const fs::path& root, DatasetMode mode, const std::vector<std::string>& class_names) {
  if (!fs::is_directory(root)) throw IngestError("dataset directory " + root.string() + " does not exist");
  if (mode == DatasetMode::manifest) return load_manifest(root);
  DatasetManifest m;
  m.root = root;
  m.class_names = class_names;
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().extension() != ".png") continue;
    DatasetEntry entry;
    entry.image = e.path().filename();
    entry.label = parse_bracket_label(e.path().filename().string(), class_names.size());
    m.entries.push_back(std::move(entry));
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.image < b.image; });
  return m;
}

DatasetManifest load_dataset_auto(const fs::path& root, const std::vector<std::string>& class_names) {
  return load_dataset(root, fs::exists(root / "manifest.json") ? DatasetMode::manifest : DatasetMode::bracket_names,
                      class_names);
}

Tensor from_rgb(const RgbImage& image) {
  Tensor t({3, image.height, image.width}, DType::f32);
  float* d = t.data<float>().data();
  const std::size_t hw = image.height * image.width;
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) d[c * hw + i] = static_cast<float>(image.pixels[i * 3 + c]) / 255.0f;
  }
  return t;
}

RgbImage to_rgb(const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 3) throw DimensionError("to_rgb: image must be [3,H,W]");
  RgbImage out{image.dim(1), image.dim(2), {}};
  const std::size_t hw = out.height * out.width;
  out.pixels.resize(hw * 3);
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image.at(c * hw + i), 0.0, 1.0);
      out.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return out;
}

std::vector<LabeledPatch> load_patches(const DatasetManifest& manifest, std::optional<std::size_t> expected_size) {
  std::vector<LabeledPatch> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const fs::path image_path = manifest.root / e.image;
    LabeledPatch p;
    const RgbImage rgb = read_rgb_png(image_path);
    if (expected_size && (rgb.height != *expected_size || rgb.width != *expected_size)) {
      throw IngestError(image_path.string() + ": expected " + std::to_string(*expected_size) + "x" +
                        std::to_string(*expected_size) + ", got " + std::to_string(rgb.height) + "x" +
                        std::to_string(rgb.width));
    }
    p.image = from_rgb(rgb);
    p.label = e.label;
    p.id = e.image.stem().string();
    if (e.mask) {
      const fs::path mask_path = manifest.root / *e.mask;
      LabelMap mask = read_mask_png(mask_path);
      if (mask.height != rgb.height || mask.width != rgb.width) {
        throw IngestError(mask_path.string() + ": mask size differs from its image");
      }
      for (std::uint8_t v : mask.labels) {
        if (v > manifest.class_names.size()) {
          throw IngestError(mask_path.string() + ": label " + std::to_string(v) + " out of range");
        }
      }
      mask.id = p.id;
      p.gt_mask = std::move(mask);
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_dataset(const fs::path& out, std::span<const LabeledPatch> patches,
                   const std::vector<std::string>& class_names) {
  try {
    fs::create_directories(out / "images");
    fs::create_directories(out / "masks");
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("cannot create dataset directories: ") + e.what());
  }
  const Palette palette = default_palette(class_names.size());
  json entries = json::array();
  for (const auto& p : patches) {
    json e;
    const std::string image_rel = "images/" + p.id + ".png";
    write_rgb_png(out / image_rel, to_rgb(p.image));
    e["image"] = image_rel;
    e["label"] = p.label;
    if (p.gt_mask) {
      const std::string mask_rel = "masks/" + p.id + ".png";
      write_mask_png(out / mask_rel, *p.gt_mask, palette);
      e["mask"] = mask_rel;
    }
    entries.push_back(std::move(e));
  }
  json manifest{{"class_names", class_names}, {"entries", std::move(entries)}};
  std::ofstream f(out / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + (out / "manifest.json").string());
  f << manifest.dump(2) << '\n';
  if (!f) throw IoError("short write to " + (out / "manifest.json").string());
}

AugmentDraws draw_augment(std::mt19937_64& rng, std::size_t height, std::size_t width) {
  std::bernoulli_distribution coin(0.5);
  AugmentDraws d;
  d.hflip = coin(rng);
  d.vflip = coin(rng);
  const int my = static_cast<int>(height / 10);
  const int mx = static_cast<int>(width / 10);
  d.dy = std::uniform_int_distribution<int>(-my, my)(rng);
  d.dx = std::uniform_int_distribution<int>(-mx, mx)(rng);
  return d;
}

namespace {

std::size_t reflect(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < n ? i : period - i);
}

// Source coordinate of output pixel (y, x) after flips and shift.
template <typename Fn>
void remap(std::size_t h, std::size_t w, const AugmentDraws& d, Fn&& fn) {
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t sy = reflect(static_cast<long>(y) - d.dy, static_cast<long>(h));
      std::size_t sx = reflect(static_cast<long>(x) - d.dx, static_cast<long>(w));
      if (d.vflip) sy = h - 1 - sy;
      if (d.hflip) sx = w - 1 - sx;
      fn(y * w + x, sy * w + sx);
    }
  }
}

}  // namespace

LabeledPatch apply_augment(const LabeledPatch& patch, const AugmentDraws& d) {
  if (!d.hflip && !d.vflip && d.dy == 0 && d.dx == 0) return patch;
  const std::size_t h = patch.height(), w = patch.width(), hw = h * w;
  LabeledPatch out = patch;
  const float* src = patch.image.data<float>().data();
  float* dst = out.image.data<float>().data();
  remap(h, w, d, [&](std::size_t o, std::size_t s) {
    for (std::size_t c = 0; c < 3; ++c) dst[c * hw + o] = src[c * hw + s];
  });
  if (patch.gt_mask) {
    const auto& sm = patch.gt_mask->labels;
    auto& dm = out.gt_mask->labels;
    remap(h, w, d, [&](std::size_t o, std::size_t s) { dm[o] = sm[s]; });
  }
  return out;
}

LabeledPatch augment(const LabeledPatch& patch, std::mt19937_64& rng) {
  return apply_augment(patch, draw_augment(rng, patch.height(), patch.width()));
}

namespace {

// Bilinear value noise on a lattice with `cell` pixel spacing, values in [0,1].
class ValueNoise {
 public:
  ValueNoise(std::mt19937_64& rng, std::size_t size, double cell) : cell_(cell) {
    n_ = static_cast<std::size_t>(std::ceil(static_cast<double>(size) / cell)) + 2;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    grid_.resize(n_ * n_);
    for (double& v : grid_) v = u(rng);
  }
  double operator()(double y, double x) const {
    const double fy = y / cell_, fx = x / cell_;
    const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
    const double ty = smooth(fy - static_cast<double>(y0)), tx = smooth(fx - static_cast<double>(x0));
    auto g = [&](std::size_t a, std::size_t b) { return grid_[std::min(a, n_ - 1) * n_ + std::min(b, n_ - 1)]; };
    const double top = g(y0, x0) * (1 - tx) + g(y0, x0 + 1) * tx;
    const double bottom = g(y0 + 1, x0) * (1 - tx) + g(y0 + 1, x0 + 1) * tx;
    return top * (1 - ty) + bottom * ty;
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  double cell_;
  std::size_t n_;
  std::vector<double> grid_;
};

std::array<double, 3> class_base(std::size_t k) {
  switch (k) {
    case 1: return {0.50, 0.26, 0.56};  // tumor: dense purple
    case 2: return {0.84, 0.50, 0.66};  // stroma: pink
    case 3: return {0.66, 0.58, 0.84};  // normal: lavender
    default: {
      const double hue = std::fmod(static_cast<double>(k) * 0.618034, 1.0) * 2 * std::numbers::pi;
      return {0.6 + 0.2 * std::cos(hue), 0.5 + 0.2 * std::cos(hue + 2.1), 0.6 + 0.2 * std::cos(hue + 4.2)};
    }
  }
}

LabeledPatch synth_one(std::uint64_t seed, std::size_t index, std::size_t size, std::size_t classes) {
  std::mt19937_64 rng(derive_seed(seed, {index}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t hw = size * size;
  const double s = static_cast<double>(size);

  // Which classes appear: 1-3 distinct ones.
  const std::size_t wanted = std::min<std::size_t>(classes, 1 + static_cast<std::size_t>(u(rng) * 3.0));
  std::vector<std::size_t> order(classes);
  for (std::size_t k = 0; k < classes; ++k) order[k] = k + 1;
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(wanted);

  // Foreground support: threshold a smooth field at a random quantile.
  ValueNoise support(rng, size, s / 3.0);
  ValueNoise warp_y(rng, size, s / 2.5), warp_x(rng, size, s / 2.5);
  std::vector<double> field(hw);
  for (std::size_t i = 0; i < hw; ++i) field[i] = support(static_cast<double>(i / size), static_cast<double>(i % size));
  std::vector<double> sorted = field;
  std::sort(sorted.begin(), sorted.end());
  const double bg_share = 0.1 + 0.35 * u(rng);
  const double cut = sorted[static_cast<std::size_t>(bg_share * static_cast<double>(hw - 1))];

  // Each present class owns a warped Voronoi cell of the foreground.
  std::vector<std::array<double, 2>> centers;
  for (std::size_t k = 0; k < wanted; ++k) centers.push_back({s * (0.15 + 0.7 * u(rng)), s * (0.15 + 0.7 * u(rng))});

  LabelMap mask{size, size, std::vector<std::uint8_t>(hw, 0), ""};
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t i = y * size + x;
      if (field[i] < cut) continue;
      const double fy = static_cast<double>(y), fx = static_cast<double>(x);
      const double wy = fy + (warp_y(fy, fx) - 0.5) * 0.5 * s;
      const double wx = fx + (warp_x(fy, fx) - 0.5) * 0.5 * s;
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t k = 0; k < wanted; ++k) {
        const double d = (wy - centers[k][0]) * (wy - centers[k][0]) + (wx - centers[k][1]) * (wx - centers[k][1]);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      mask.labels[i] = static_cast<std::uint8_t>(order[best]);
    }
  }

  // Textures.
  ValueNoise nuclei(rng, size, 2.5), lumen(rng, size, 5.0), fiber_warp(rng, size, s / 4.0);
  const double angle = u(rng) * std::numbers::pi;
  const double period = 4.0 + 2.0 * u(rng);
  std::array<double, 3> jitter;
  for (double& j : jitter) j = (u(rng) - 0.5) * 0.12;

  Tensor image({3, size, size}, DType::f32);
  float* d = image.data<float>().data();
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t i = y * size + x;
      const double fy = static_cast<double>(y), fx = static_cast<double>(x);
      const std::size_t k = mask.labels[i];
      std::array<double, 3> c;
      double noise_sd = 0.03;
      if (k == 0) {
        c = {0.95, 0.93, 0.96};
        noise_sd = 0.015;
      } else {
        c = class_base(k);
        double shade = 0.0;
        if (k == 1) {
          const double v = nuclei(fy, fx);
          shade = v > 0.55 ? -0.3 * std::min(1.0, (v - 0.55) / 0.15) : 0.05;
        } else if (k == 2) {
          const double phase = (fx * std::cos(angle) + fy * std::sin(angle)) / period + 1.5 * fiber_warp(fy, fx);
          shade = 0.1 * std::sin(2 * std::numbers::pi * phase);
        } else if (k == 3) {
          const double v = lumen(fy, fx);
          shade = v > 0.68 ? 0.25 : -0.04;
        } else {
          shade = 0.15 * (nuclei(fy * 0.7, fx * 0.7) - 0.5);
        }
        for (double& ch : c) ch += shade;
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(c[ch] + jitter[ch] + noise_sd * gauss(rng), 0.0, 1.0);
        d[ch * hw + i] = static_cast<float>(std::round(v * 255.0) / 255.0);
      }
    }
  }

  LabeledPatch p;
  p.image = std::move(image);
  p.label.assign(classes, 0);
  for (std::uint8_t v : mask.labels) {
    if (v > 0) p.label[v - 1] = 1;
  }
  char prefix[32];
  std::snprintf(prefix, sizeof(prefix), "synth_%05zu-", index);
  p.id = prefix + format_bracket_label(p.label);
  mask.id = p.id;
  p.gt_mask = std::move(mask);
  return p;
}

}  // namespace

std::vector<LabeledPatch> synth_generate(std::uint64_t seed, std::size_t count, std::size_t size,
                                         std::size_t class_count) {
  if (size < 16) throw ArgumentError("synth_generate: size must be at least 16");
  if (count < 1) throw ArgumentError("synth_generate: count must be at least 1");
  if (class_count < 1 || class_count > 255) throw ArgumentError("synth_generate: class_count must be in 1..255");
  std::vector<LabeledPatch> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_one(seed, i, size, class_count));
  return out;
}

namespace {
void require_uniform(std::span<const LabeledPatch* const> patches) {
  if (patches.empty()) throw ArgumentError("batch is empty");
  for (const auto* p : patches) {
    if (p->image.shape() != patches[0]->image.shape()) {
      throw DimensionError("batch mixes image sizes " + shape_string(p->image.shape()) + " and " +
                           shape_string(patches[0]->image.shape()));
    }
    if (p->label.size() != patches[0]->label.size()) throw DimensionError("batch mixes label lengths");
  }
}
}  // namespace

Tensor make_image_batch(std::span<const LabeledPatch* const> patches, DType dtype) {
  require_uniform(patches);
  const Shape& s = patches[0]->image.shape();
  Tensor out({patches.size(), s[0], s[1], s[2]}, dtype);
  const std::size_t per = patches[0]->image.numel();
  visit_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    T* d = out.data<T>().data();
    for (std::size_t n = 0; n < patches.size(); ++n) {
      const float* src = patches[n]->image.data<float>().data();
      for (std::size_t i = 0; i < per; ++i) d[n * per + i] = static_cast<T>((src[i] - kPixelMean) / kPixelStd);
    }
  });
  return out;
}

Tensor make_target_batch(std::span<const LabeledPatch* const> patches, DType dtype) {
  require_uniform(patches);
  const std::size_t c = patches[0]->label.size();
  Tensor out({patches.size(), c}, dtype);
  for (std::size_t n = 0; n < patches.size(); ++n) {
    for (std::size_t k = 0; k < c; ++k) out.set(n * c + k, patches[n]->label[k]);
  }
  return out;
}

}  // namespace cvfc
