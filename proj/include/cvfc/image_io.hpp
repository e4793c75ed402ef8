#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cvfc {

/// 8-bit RGB raster, row-major, interleaved (H x W x 3).
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

/// H x W map of class indices: 0 = background, 1..C = class_names order.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;
  std::string id;

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  bool same_shape(const LabelMap& o) const { return height == o.height && width == o.width; }
};

using PseudoMask = LabelMap;
using Rgb = std::array<std::uint8_t, 3>;
using Palette = std::vector<Rgb>;

/// Background white, then tumor, stroma, normal; further classes get
/// generated colors. Always `classes + 1` entries.
Palette default_palette(std::size_t classes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

RgbImage decode_rgb_png(std::span<const std::uint8_t> bytes, const std::string& what = "png");
std::vector<std::uint8_t> encode_rgb_png(const RgbImage& image);
RgbImage read_rgb_png(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const RgbImage& image);

/// Decodes an 8-bit (or packed) palette PNG to its raw indices; 8-bit
/// grayscale is accepted with gray value = index. The palette is returned
/// through `palette` when non-null.
LabelMap decode_mask_png(std::span<const std::uint8_t> bytes, Palette* palette = nullptr,
                         const std::string& what = "mask");
std::vector<std::uint8_t> encode_mask_png(const LabelMap& mask, const Palette& palette);
LabelMap read_mask_png(const std::filesystem::path& path, Palette* palette = nullptr);
void write_mask_png(const std::filesystem::path& path, const LabelMap& mask, const Palette& palette);

}  // namespace cvfc
