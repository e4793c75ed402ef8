#include <algorithm>
#include <fstream>
#include <set>

#include "cvfc/data.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cvfc;
namespace fs = std::filesystem;
using cvfc::test::Gen;

namespace {

LabeledPatch random_patch(Gen& gen, std::size_t h, std::size_t w, bool with_mask) {
  LabeledPatch p;
  p.image = gen.tensor({3, h, w}, 0, 1, DType::f32);
  p.label = {1, 0, 1};
  p.id = "r";
  if (with_mask) {
    LabelMap m{h, w, std::vector<std::uint8_t>(h * w), "r"};
    for (auto& v : m.labels) v = static_cast<std::uint8_t>(gen.index(0, 3));
    p.gt_mask = m;
  }
  return p;
}

bool same_patch(const LabeledPatch& a, const LabeledPatch& b) {
  if (a.image.to_vector() != b.image.to_vector() || a.label != b.label) return false;
  if (a.gt_mask.has_value() != b.gt_mask.has_value()) return false;
  return !a.gt_mask || a.gt_mask->labels == b.gt_mask->labels;
}

void touch_png(const fs::path& path, std::size_t size = 16) {
  write_rgb_png(path, RgbImage{size, size, std::vector<std::uint8_t>(size * size * 3, 200)});
}

}  // namespace

TEST_CASE("parse_bracket_label examples") {
  CHECK(parse_bracket_label("p7-[1, 0, 1].png") == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(parse_bracket_label("x-[0, 1, 0].png") == std::vector<std::uint8_t>{0, 1, 0});
  CHECK(parse_bracket_label("dir/x-[0,1,1].png") == std::vector<std::uint8_t>{0, 1, 1});
  CHECK_THROWS_WITH_AS(parse_bracket_label("x-[1,0].png"), doctest::Contains("x-[1,0].png"), ParseError);
  CHECK_THROWS_AS(parse_bracket_label("x-[1, 2, 0].png"), ParseError);
  CHECK_THROWS_AS(parse_bracket_label("x.png"), ParseError);
  CHECK_THROWS_AS(parse_bracket_label("x-[1, 0, 1.png"), ParseError);
  CHECK(format_bracket_label(std::vector<std::uint8_t>{1, 0, 1}) == "[1, 0, 1]");
}

TEST_CASE("property: bracket labels round-trip through file names") {
  Gen gen(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = gen.index(1, 6);
    std::vector<std::uint8_t> label(c);
    for (auto& v : label) v = gen.coin() ? 1 : 0;
    CHECK(parse_bracket_label("patch" + std::to_string(trial) + "-" + format_bracket_label(label) + ".png", c) == label);
  }
}

TEST_CASE("load_dataset in bracket-name mode") {
  const fs::path dir = cvfc::test::scratch_dir("data_bracket");
  CHECK(load_dataset(dir, DatasetMode::bracket_names).entries.empty());

  touch_png(dir / "c-[0, 0, 1].png");
  touch_png(dir / "a-[1, 0, 0].png");
  touch_png(dir / "b-[0, 1, 0].png");
  std::ofstream(dir / "notes.txt") << "ignored";
  const DatasetManifest m = load_dataset(dir, DatasetMode::bracket_names);
  REQUIRE(m.entries.size() == 3);
  CHECK(m.entries[0].image.filename() == "a-[1, 0, 0].png");
  CHECK(m.entries[1].image.filename() == "b-[0, 1, 0].png");
  CHECK(m.entries[2].image.filename() == "c-[0, 0, 1].png");
  CHECK(m.entries[2].label == std::vector<std::uint8_t>{0, 0, 1});

  const auto patches = load_patches(m);
  CHECK(patches[0].image.shape() == Shape{3, 16, 16});
  CHECK(patches[0].image.at(0) == doctest::Approx(200.0 / 255.0));
  CHECK_THROWS_AS(load_patches(m, 32), IngestError);
  CHECK_THROWS_AS(load_dataset(dir / "missing", DatasetMode::bracket_names), IngestError);
}

TEST_CASE("manifest datasets round-trip and report missing files") {
  const fs::path dir = cvfc::test::scratch_dir("data_manifest");
  const auto patches = synth_generate(3, 4, 24);
  write_dataset(dir, patches, kDefaultClassNames);
  const DatasetManifest m = load_dataset_auto(dir);
  REQUIRE(m.entries.size() == 4);
  CHECK(m.class_names == kDefaultClassNames);
  const auto back = load_patches(m, 24);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].label == patches[i].label);
    REQUIRE(back[i].gt_mask.has_value());
    CHECK(back[i].gt_mask->labels == patches[i].gt_mask->labels);
    // 8-bit storage quantizes the generator's values.
    CHECK(cvfc::test::max_abs_diff(back[i].image, patches[i].image) <= 0.5 / 255.0 + 1e-7);
  }

  fs::remove(dir / m.entries[1].image);
  const std::string missing = m.entries[1].image.filename().string();
  CHECK_THROWS_WITH_AS(load_dataset(dir, DatasetMode::manifest), doctest::Contains(missing.c_str()), IngestError);

  const fs::path bad = cvfc::test::scratch_dir("data_manifest_bad");
  std::ofstream(bad / "manifest.json") << R"({"class_names": ["a"], "entries": [{"image": "x.png", "label": [2]}]})";
  CHECK_THROWS_AS(load_dataset(bad, DatasetMode::manifest), IngestError);
}

TEST_CASE("palette mask PNG bytes round-trip") {
  Gen gen(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = gen.index(1, 40), w = gen.index(1, 40);
    LabelMap m{h, w, std::vector<std::uint8_t>(h * w), "m"};
    for (auto& v : m.labels) v = static_cast<std::uint8_t>(gen.index(0, 3));
    const Palette pal = default_palette(3);
    const auto bytes = encode_mask_png(m, pal);
    Palette got;
    const LabelMap decoded = decode_mask_png(bytes, &got);
    CHECK(decoded.labels == m.labels);
    CHECK(got == pal);
    CHECK(encode_mask_png(decoded, got) == bytes);
  }
  CHECK(default_palette(3).size() == 4);
  CHECK(default_palette(3)[0] == Rgb{255, 255, 255});
  CHECK(default_palette(7).size() == 8);
}

TEST_CASE("augment examples") {
  Gen gen(3);
  const LabeledPatch p = random_patch(gen, 10, 12, true);
  CHECK(same_patch(apply_augment(p, AugmentDraws{}), p));

  AugmentDraws h;
  h.hflip = true;
  const LabeledPatch once = apply_augment(p, h);
  CHECK_FALSE(same_patch(once, p));
  CHECK(once.image.at(0) == p.image.at(11));
  CHECK(same_patch(apply_augment(once, h), p));

  AugmentDraws v;
  v.vflip = true;
  CHECK(same_patch(apply_augment(apply_augment(p, v), v), p));
}

TEST_CASE("property: opposite shifts restore the interior") {
  Gen gen(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = gen.index(8, 20), w = gen.index(8, 20);
    const LabeledPatch p = random_patch(gen, h, w, true);
    AugmentDraws fwd, back;
    fwd.dy = static_cast<int>(gen.index(0, 2));
    fwd.dx = static_cast<int>(gen.index(0, 2));
    if (gen.coin()) fwd.dy = -fwd.dy;
    if (gen.coin()) fwd.dx = -fwd.dx;
    back.dy = -fwd.dy;
    back.dx = -fwd.dx;
    const LabeledPatch r = apply_augment(apply_augment(p, fwd), back);
    const std::size_t my = static_cast<std::size_t>(std::abs(fwd.dy)), mx = static_cast<std::size_t>(std::abs(fwd.dx));
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = my; y + my < h; ++y) {
        for (std::size_t x = mx; x + mx < w; ++x) {
          CHECK(r.image.at((c * h + y) * w + x) == p.image.at((c * h + y) * w + x));
          if (c == 0) CHECK(r.gt_mask->at(y, x) == p.gt_mask->at(y, x));
        }
      }
    }
  }
}

TEST_CASE("property: augmentation keeps shape, range, label, and mask alignment") {
  Gen gen(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = gen.index(4, 24), w = gen.index(4, 24);
    LabeledPatch p = random_patch(gen, h, w, true);
    // Encode pixel positions in the mask so misalignment shows up.
    for (std::size_t i = 0; i < h * w; ++i) p.gt_mask->labels[i] = static_cast<std::uint8_t>(i % 251);
    for (std::size_t i = 0; i < h * w; ++i) p.image.set(i, static_cast<double>(i % 251) / 250.0);
    const LabeledPatch a = augment(p, gen.engine());
    CHECK(a.image.shape() == p.image.shape());
    CHECK(a.label == p.label);
    REQUIRE(a.gt_mask.has_value());
    CHECK(a.gt_mask->same_shape(*p.gt_mask));
    for (std::size_t i = 0; i < a.image.numel(); ++i) {
      CHECK(a.image.at(i) >= 0.0);
      CHECK(a.image.at(i) <= 1.0);
    }
    for (std::size_t i = 0; i < h * w; ++i) {
      CHECK(a.image.at(i) == static_cast<float>(static_cast<double>(a.gt_mask->labels[i]) / 250.0));
    }
  }
}

TEST_CASE("augment draws stay within ten percent of each side") {
  std::mt19937_64 rng(6);
  int hflips = 0;
  for (int i = 0; i < 2000; ++i) {
    const AugmentDraws d = draw_augment(rng, 48, 30);
    CHECK(std::abs(d.dy) <= 4);
    CHECK(std::abs(d.dx) <= 3);
    hflips += d.hflip ? 1 : 0;
  }
  CHECK(hflips > 850);
  CHECK(hflips < 1150);
}

TEST_CASE("synth_generate is deterministic and self-consistent") {
  const auto a = synth_generate(42, 20, 32);
  const auto b = synth_generate(42, 20, 32);
  const auto c = synth_generate(43, 20, 32);
  REQUIRE(a.size() == 20);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(same_patch(a[i], b[i]));
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].consistent());
    differs = differs || !same_patch(a[i], c[i]);
  }
  CHECK(differs);

  const auto longer = synth_generate(42, 25, 32);
  CHECK(same_patch(longer[7], a[7]));

  CHECK_THROWS_AS(synth_generate(1, 1, 8), ArgumentError);
  CHECK_THROWS_AS(synth_generate(1, 0, 32), ArgumentError);
}

TEST_CASE("synthetic class frequency over 500 patches") {
  const auto patches = synth_generate(7, 500, 24);
  std::array<int, 3> present{};
  std::set<std::uint8_t> mask_values;
  for (const auto& p : patches) {
    CHECK(p.consistent());
    for (std::size_t k = 0; k < 3; ++k) present[k] += p.label[k];
    for (auto v : p.gt_mask->labels) mask_values.insert(v);
  }
  for (int count : present) CHECK(count >= 125);
  CHECK(mask_values == std::set<std::uint8_t>{0, 1, 2, 3});
}

TEST_CASE("batches normalize images and stack targets") {
  const auto patches = synth_generate(8, 2, 16);
  const LabeledPatch* ptrs[] = {&patches[0], &patches[1]};
  const Tensor x = make_image_batch(ptrs);
  CHECK(x.shape() == Shape{2, 3, 16, 16});
  CHECK(x.at(5) == doctest::Approx((patches[0].image.at(5) - kPixelMean) / kPixelStd));
  const Tensor y = make_target_batch(ptrs);
  CHECK(y.shape() == Shape{2, 3});
  CHECK(y.at(3) == patches[1].label[0]);

  const auto other = synth_generate(8, 1, 20);
  const LabeledPatch* mixed[] = {&patches[0], &other[0]};
  CHECK_THROWS_AS(make_image_batch(mixed), DimensionError);
}
