#include "cvfc/image_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstring>
#include <fstream>

#include "cvfc/errors.hpp"

namespace cvfc {

Palette default_palette(std::size_t classes) {
  Palette p = {{255, 255, 255}, {0, 64, 128}, {64, 128, 0}, {243, 152, 0}};
  for (std::size_t k = p.size(); k <= classes; ++k) {
    // Spread further colors around the wheel; distinct from the fixed ones.
    const auto v = static_cast<std::uint8_t>((k * 67) % 256);
    p.push_back({v, static_cast<std::uint8_t>(255 - v), static_cast<std::uint8_t>((k * 131) % 256)});
  }
  p.resize(classes + 1);
  return p;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("cannot read " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

namespace {

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

void read_from_span(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + n > cur->bytes.size()) png_error(png, "unexpected end of data");
  std::memcpy(out, cur->bytes.data() + cur->pos, n);
  cur->pos += n;
}

void write_to_vector(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_noop(png_structp) {}

struct ErrorSink {
  char message[256] = {0};
};

void on_png_error(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<ErrorSink*>(png_get_error_ptr(png));
  std::strncpy(sink->message, msg, sizeof(sink->message) - 1);
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

enum class Kind { rgb, indexed };

// Decodes into `out` (rows of `channels` bytes per pixel). Returns false with
// sink.message set on failure; C++ objects are all created by the caller so
// longjmp never skips a destructor.
bool decode_png(std::span<const std::uint8_t> bytes, Kind kind, std::vector<std::uint8_t>& out,
                std::size_t& height, std::size_t& width, Palette* palette, ErrorSink& sink,
                std::vector<png_bytep>& rows) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    std::strcpy(sink.message, "not a PNG file");
    return false;
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &sink, on_png_error, on_png_warning);
  if (!png) {
    std::strcpy(sink.message, "png_create_read_struct failed");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{bytes, 0};
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (!sink.message[0]) std::strcpy(sink.message, "libpng failure");
    return false;
  }
  png_set_read_fn(png, &cursor, read_from_span);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (kind == Kind::rgb) {
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
      if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
      png_set_gray_to_rgb(png);
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
  } else {
    if (color == PNG_COLOR_TYPE_PALETTE) {
      if (depth < 8) png_set_packing(png);
      if (palette) {
        png_colorp entries = nullptr;
        int count = 0;
        if (png_get_PLTE(png, info, &entries, &count) == PNG_INFO_PLTE) {
          for (int i = 0; i < count; ++i) palette->push_back({entries[i].red, entries[i].green, entries[i].blue});
        }
      }
    } else if (color == PNG_COLOR_TYPE_GRAY && depth == 8) {
      // gray value is the class index
    } else {
      std::strcpy(sink.message, "mask must be an 8-bit palette or grayscale PNG");
      png_destroy_read_struct(&png, &info, nullptr);
      return false;
    }
  }
  png_read_update_info(png, info);
  const std::size_t channels = kind == Kind::rgb ? 3 : 1;
  if (png_get_rowbytes(png, info) != w * channels) {
    std::strcpy(sink.message, "unsupported PNG layout");
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  out.resize(static_cast<std::size_t>(w) * h * channels);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = out.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  height = h;
  width = w;
  return true;
}

bool encode_png(const std::uint8_t* data, std::size_t height, std::size_t width, Kind kind, const Palette* palette,
                std::vector<std::uint8_t>& out, ErrorSink& sink, std::vector<png_bytep>& rows,
                std::vector<png_color>& plte) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &sink, on_png_error, on_png_warning);
  if (!png) {
    std::strcpy(sink.message, "png_create_write_struct failed");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    if (!sink.message[0]) std::strcpy(sink.message, "libpng failure");
    return false;
  }
  png_set_write_fn(png, &out, write_to_vector, flush_noop);
  const std::size_t channels = kind == Kind::rgb ? 3 : 1;
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               kind == Kind::rgb ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (kind == Kind::indexed) {
    for (const Rgb& c : *palette) plte.push_back({c[0], c[1], c[2]});
    png_set_PLTE(png, info, plte.data(), static_cast<int>(plte.size()));
  }
  png_write_info(png, info);
  rows.resize(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(data + y * width * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

RgbImage decode_rgb_png(std::span<const std::uint8_t> bytes, const std::string& what) {
  RgbImage img;
  ErrorSink sink;
  std::vector<png_bytep> rows;
  if (!decode_png(bytes, Kind::rgb, img.pixels, img.height, img.width, nullptr, sink, rows)) {
    throw IngestError(what + ": " + sink.message);
  }
  return img;
}

std::vector<std::uint8_t> encode_rgb_png(const RgbImage& image) {
  if (image.pixels.size() != image.height * image.width * 3 || image.height == 0 || image.width == 0) {
    throw ArgumentError("encode_rgb_png: pixel buffer does not match " + std::to_string(image.height) + "x" +
                        std::to_string(image.width));
  }
  std::vector<std::uint8_t> out;
  ErrorSink sink;
  std::vector<png_bytep> rows;
  std::vector<png_color> plte;
  if (!encode_png(image.pixels.data(), image.height, image.width, Kind::rgb, nullptr, out, sink, rows, plte)) {
    throw IoError(std::string("PNG encode failed: ") + sink.message);
  }
  return out;
}

RgbImage read_rgb_png(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const IoError& e) {
    throw IngestError(e.what());
  }
  return decode_rgb_png(bytes, path.string());
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
  write_file_bytes(path, encode_rgb_png(image));
}

LabelMap decode_mask_png(std::span<const std::uint8_t> bytes, Palette* palette, const std::string& what) {
  LabelMap m;
  ErrorSink sink;
  std::vector<png_bytep> rows;
  if (palette) palette->clear();
  if (!decode_png(bytes, Kind::indexed, m.labels, m.height, m.width, palette, sink, rows)) {
    throw IngestError(what + ": " + sink.message);
  }
  return m;
}

std::vector<std::uint8_t> encode_mask_png(const LabelMap& mask, const Palette& palette) {
  if (mask.labels.size() != mask.height * mask.width || mask.height == 0 || mask.width == 0) {
    throw ArgumentError("encode_mask_png: label buffer does not match " + std::to_string(mask.height) + "x" +
                        std::to_string(mask.width));
  }
  if (palette.empty() || palette.size() > 256) throw ArgumentError("encode_mask_png: palette needs 1..256 entries");
  for (std::uint8_t v : mask.labels) {
    if (v >= palette.size()) {
      throw ArgumentError("encode_mask_png: label " + std::to_string(v) + " outside a palette of " +
                          std::to_string(palette.size()));
    }
  }
  std::vector<std::uint8_t> out;
  ErrorSink sink;
  std::vector<png_bytep> rows;
  std::vector<png_color> plte;
  if (!encode_png(mask.labels.data(), mask.height, mask.width, Kind::indexed, &palette, out, sink, rows, plte)) {
    throw IoError(std::string("PNG encode failed: ") + sink.message);
  }
  return out;
}

LabelMap read_mask_png(const std::filesystem::path& path, Palette* palette) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const IoError& e) {
    throw IngestError(e.what());
  }
  LabelMap m = decode_mask_png(bytes, palette, path.string());
  m.id = path.stem().string();
  return m;
}

void write_mask_png(const std::filesystem::path& path, const LabelMap& mask, const Palette& palette) {
  write_file_bytes(path, encode_mask_png(mask, palette));
}

}  // namespace cvfc
