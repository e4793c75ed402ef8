#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cvfc/image_io.hpp"
#include "cvfc/tensor.hpp"

namespace cvfc {

inline const std::vector<std::string> kDefaultClassNames = {"tumor", "stroma", "normal"};

/// Per-channel input normalization applied when batching.
inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.25;

struct LabeledPatch {
  Tensor image;  // [3,H,W] f32 in [0,1]
  std::vector<std::uint8_t> label;
  std::optional<LabelMap> gt_mask;
  std::string id;

  std::size_t height() const { return image.dim(1); }
  std::size_t width() const { return image.dim(2); }
  /// Label has a positive class and, with a mask, the mask's foreground
  /// classes equal the positive label set.
  bool consistent() const;
};

/// "p7-[1, 0, 1].png" -> {1,0,1}. Throws ParseError naming the file on a
/// missing or malformed bracket, non-binary entries, or wrong arity.
std::vector<std::uint8_t> parse_bracket_label(std::string_view filename, std::size_t classes = 3);
std::string format_bracket_label(std::span<const std::uint8_t> label);

enum class DatasetMode { bracket_names, manifest };

struct DatasetEntry {
  std::filesystem::path image;  // absolute or relative to root
  std::vector<std::uint8_t> label;
  std::optional<std::filesystem::path> mask;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;
  std::vector<std::string> class_names;
};

/// bracket_names: every *.png directly under root, labels from the names.
/// manifest: root/manifest.json. Entries are sorted by image path.
DatasetManifest load_dataset(const std::filesystem::path& root, DatasetMode mode,
                             const std::vector<std::string>& class_names = kDefaultClassNames);
/// manifest.json next to images/ and masks/ when root holds one, else bracket names.
DatasetManifest load_dataset_auto(const std::filesystem::path& root,
                                  const std::vector<std::string>& class_names = kDefaultClassNames);

/// Decodes every entry. With `expected_size`, images of any other size are
/// an IngestError.
std::vector<LabeledPatch> load_patches(const DatasetManifest& manifest,
                                       std::optional<std::size_t> expected_size = std::nullopt);

/// Writes images/, masks/ and manifest.json. Patches without masks get no
/// mask entry.
void write_dataset(const std::filesystem::path& out, std::span<const LabeledPatch> patches,
                   const std::vector<std::string>& class_names);

RgbImage to_rgb(const Tensor& image);
Tensor from_rgb(const RgbImage& image);

struct AugmentDraws {
  bool hflip = false;
  bool vflip = false;
  int dy = 0;
  int dx = 0;
};

/// Flip each axis with p=0.5, then an integer shift uniform in
/// [-floor(0.1 H), floor(0.1 H)] (likewise for W).
AugmentDraws draw_augment(std::mt19937_64& rng, std::size_t height, std::size_t width);
/// Flips, then translates with reflect padding; the mask moves identically.
LabeledPatch apply_augment(const LabeledPatch& patch, const AugmentDraws& d);
LabeledPatch augment(const LabeledPatch& patch, std::mt19937_64& rng);

/// Seeded synthetic tissue patches with pixel ground truth. Patch i depends
/// only on (seed, i).
std::vector<LabeledPatch> synth_generate(std::uint64_t seed, std::size_t count, std::size_t size,
                                         std::size_t class_count = 3);

/// [N,3,H,W] normalized with kPixelMean/kPixelStd.
Tensor make_image_batch(std::span<const LabeledPatch* const> patches, DType dtype = DType::f32);
/// [N,C] multi-hot targets.
Tensor make_target_batch(std::span<const LabeledPatch* const> patches, DType dtype = DType::f32);

}  // namespace cvfc
