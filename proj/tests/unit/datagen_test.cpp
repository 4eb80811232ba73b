#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dmac/datagen/generate.hpp"
#include "dmac/datagen/ingest.hpp"

using namespace dmac;
using namespace dmac::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dmac_datagen_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Mask rectangle(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h, std::size_t size = kCanvas) {
  Mask m(size, size);
  for (std::size_t y = y0; y < y0 + h; ++y) {
    for (std::size_t x = x0; x < x0 + w; ++x) m.at(x, y) = 1;
  }
  return m;
}

struct Bounds {
  std::size_t x0 = SIZE_MAX, y0 = SIZE_MAX, x1 = 0, y1 = 0;
};

Bounds bounds_of(const Mask& m) {
  Bounds b;
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x + 1);
      b.y1 = std::max(b.y1, y + 1);
    }
  }
  return b;
}

}  // namespace

TEST(Synth, SameSeedSameImage) {
  const auto a = synth_base_image(11), b = synth_base_image(11);
  EXPECT_EQ(a.pixels, b.pixels);
  ASSERT_EQ(a.regions.size(), b.regions.size());
  for (std::size_t i = 0; i < a.regions.size(); ++i) EXPECT_EQ(a.regions[i], b.regions[i]);
  EXPECT_NE(synth_base_image(12).pixels, a.pixels);
}

TEST(Synth, RegionsNonDegenerateAcrossThousandSeeds) {
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto src = synth_base_image(s);
    ASSERT_GE(src.regions.size(), 2u) << "seed " << s;
    ASSERT_LE(src.regions.size(), 6u) << "seed " << s;
    for (const auto& r : src.regions) {
      ASSERT_GT(r.fraction(), 0.01) << "seed " << s;
      ASSERT_LE(r.fraction(), 0.5) << "seed " << s;
    }
  }
}

TEST(Transform, IdentityLeavesRegionUnchanged) {
  const auto src = synth_base_image(3);
  const auto out = apply_transform(src.pixels, src.regions[0], TransformSpec{});
  ASSERT_TRUE(out);
  EXPECT_EQ(out->mask, src.regions[0]);
  for (std::size_t i = 0; i < out->mask.bits.size(); ++i) {
    if (!out->mask.bits[i]) continue;
    for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(out->pixels.rgb[i * 3 + c], src.pixels.rgb[i * 3 + c]);
  }
}

TEST(Transform, ScaleTwoDoublesBoundingBox) {
  Image img(kCanvas, kCanvas, 100);
  TransformSpec t;
  t.scale = 2.0;
  const auto out = apply_transform(img, rectangle(100, 120, 20, 10), t);
  ASSERT_TRUE(out);
  const auto b = bounds_of(out->mask);
  EXPECT_NEAR(double(b.x1 - b.x0), 40.0, 1.0);
  EXPECT_NEAR(double(b.y1 - b.y0), 20.0, 1.0);
}

TEST(Transform, LuminanceClampsAt255) {
  Image img(kCanvas, kCanvas, 250);
  TransformSpec t;
  t.luminance = 32.0;
  const auto out = apply_transform(img, rectangle(10, 10, 30, 30), t);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->pixels.at(20, 20, 0), 255);
  EXPECT_EQ(out->pixels.at(20, 20, 2), 255);
}

TEST(Transform, ShiftOffCanvasIsRejected) {
  Image img(kCanvas, kCanvas, 50);
  TransformSpec t;
  t.dx = 100;
  EXPECT_FALSE(apply_transform(img, rectangle(200, 10, 20, 20), t));
  t.dx = 20;
  EXPECT_TRUE(apply_transform(img, rectangle(200, 10, 20, 20), t));
}

TEST(Transform, SampledValuesStayInIntervals) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) EXPECT_TRUE(sample_transform(SetKind::Combination, rng).within_intervals());
}

TEST(Transform, SingleKindsForceOneTransform) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    EXPECT_TRUE(sample_transform(SetKind::Raw, rng).is_identity());
    const auto r = sample_transform(SetKind::Rotation, rng);
    EXPECT_TRUE(r.rotation_deg && !r.scale && !r.luminance && !r.deform_width && r.dx == 0 && r.dy == 0);
    const auto s = sample_transform(SetKind::Shift, rng);
    EXPECT_TRUE(!s.rotation_deg && !s.scale && !s.luminance && !s.deform_width);
  }
}

TEST(Transform, JsonRoundTrip) {
  TransformSpec t;
  t.dx = -5;
  t.dy = 17;
  t.scale = 1.25;
  t.luminance = -3.5;
  EXPECT_EQ(transform_from_json(to_json(t)), t);
}

TEST(Difficulty, Buckets) {
  EXPECT_EQ(classify_difficulty(0.05), Difficulty::Difficult);
  EXPECT_EQ(classify_difficulty(0.15), Difficulty::Normal);
  EXPECT_EQ(classify_difficulty(0.30), Difficulty::Easy);
  EXPECT_EQ(classify_difficulty(0.10), Difficulty::Difficult);
  EXPECT_EQ(classify_difficulty(0.25), Difficulty::Normal);
  EXPECT_THROW(classify_difficulty(0.01), ValidationError);
  EXPECT_THROW(classify_difficulty(0.5), ValidationError);
}

TEST(Triplet, MasksFollowConstruction) {
  const auto donor = synth_base_image(21), host = synth_base_image(22);
  TransformSpec t;
  t.dx = 9;
  t.dy = -4;
  t.rotation_deg = 12.0;
  std::optional<Triplet> tr;
  for (std::size_t r = 0; r < donor.regions.size() && !tr; ++r) tr = make_triplet(donor, r, host, t);
  ASSERT_TRUE(tr);
  EXPECT_DOUBLE_EQ(tr->foreground.mask_p.fraction(), tr->area_fraction);
  EXPECT_EQ(tr->background.mask_p, complement(tr->foreground.mask_p));
  EXPECT_EQ(tr->background.mask_d, tr->background.mask_p);
  EXPECT_EQ(tr->negative.mask_p.area(), 0u);
  EXPECT_EQ(tr->negative.mask_d.area(), 0u);
  EXPECT_FALSE(tr->negative.correlated);
  EXPECT_TRUE(tr->foreground.correlated && tr->background.correlated);
  EXPECT_EQ(tr->difficulty, classify_difficulty(tr->area_fraction));
}

TEST(GenerateSet, RawIsIdentityAndSelfConsistent) {
  SetOptions opt;
  opt.kind = SetKind::Raw;
  opt.counts = {3, 3, 3};
  opt.seed = 4;
  std::array<std::size_t, 3> got{};
  generate_triplets(opt, [&](const TripletInfo&, const Triplet& t) {
    EXPECT_TRUE(t.transform.is_identity());
    ++got[static_cast<int>(t.difficulty)];
    const auto& fg = t.foreground;
    EXPECT_EQ(fg.mask_p, fg.mask_d);
    for (std::size_t i = 0; i < fg.mask_p.bits.size(); ++i) {
      if (fg.mask_p.bits[i]) {
        for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(fg.probe.rgb[i * 3 + c], fg.donor.rgb[i * 3 + c]);
      }
    }
  });
  EXPECT_EQ(got, (std::array<std::size_t, 3>{3, 3, 3}));
}

TEST(GenerateSet, TransformedRegionReproducible) {
  SetOptions opt;
  opt.counts = {2, 2, 2};
  opt.seed = 8;
  generate_triplets(opt, [&](const TripletInfo&, const Triplet& t) {
    const auto& fg = t.foreground;
    const auto again = apply_transform(fg.donor, fg.mask_d, t.transform);
    ASSERT_TRUE(again);
    EXPECT_EQ(again->mask, fg.mask_p);
    for (std::size_t i = 0; i < fg.mask_p.bits.size(); ++i) {
      if (!fg.mask_p.bits[i]) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        ASSERT_LE(std::abs(int(again->pixels.rgb[i * 3 + c]) - int(fg.probe.rgb[i * 3 + c])), 2);
      }
    }
  });
}

TEST(GenerateSet, CountsAndDeterminism) {
  SetOptions opt;
  opt.counts = {4, 3, 2};
  opt.seed = 99;
  const auto a = manifest_lines(opt), b = manifest_lines(opt);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 27u);
  std::array<std::size_t, 3> fg{};
  for (const auto& l : a) {
    const auto j = nlohmann::json::parse(l);
    if (j["kind"] == "foreground") ++fg[static_cast<int>(parse_difficulty(j["difficulty"]))];
    const double f = j["area_fraction"];
    EXPECT_GT(f, 0.01);
    EXPECT_LT(f, 0.5);
  }
  EXPECT_EQ(fg, (std::array<std::size_t, 3>{4, 3, 2}));
}

TEST(GenerateSet, WriteAndVerify) {
  const auto dir = scratch_dir("write");
  SetOptions opt;
  opt.counts = {1, 1, 1};
  opt.seed = 3;
  write_set(dir, opt);
  const auto entries = read_manifest(dir);
  ASSERT_EQ(entries.size(), 9u);
  EXPECT_TRUE(verify_set(dir).empty());
  const auto p = load_pair(dir, entries[0]);
  EXPECT_EQ(p.probe.width, kCanvas);
  EXPECT_EQ(pair_digest(p), entries[0].digest);

  write_png(dir / entries[0].paths.mask_p, complement(p.mask_p));
  const auto problems = verify_set(dir);
  ASSERT_FALSE(problems.empty());
  EXPECT_NE(problems[0].find("digest mismatch"), std::string::npos);
  fs::remove(dir / entries[3].paths.donor);
  EXPECT_GE(verify_set(dir).size(), 2u);
}

TEST(GenerateSet, ZeroCountsRejected) {
  EXPECT_THROW(generate_triplets(SetOptions{}, [](const TripletInfo&, const Triplet&) {}), ParameterError);
}

TEST(Png, RoundTrip) {
  const auto dir = scratch_dir("png");
  const auto src = synth_base_image(5);
  write_png(dir / "a.png", src.pixels);
  write_png(dir / "m.png", src.regions[0]);
  EXPECT_EQ(read_png_rgb(dir / "a.png"), src.pixels);
  EXPECT_EQ(read_png_mask(dir / "m.png"), src.regions[0]);
  EXPECT_EQ(encode_png(src.pixels), encode_png(src.pixels));
  EXPECT_THROW(read_png_rgb(dir / "missing.png"), IoError);
}

TEST(Resolution, BoxDownsampleAndMaskPooling) {
  Image img(4, 4);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>(i % 3 == 0 ? 10 : 20);
  img.at(0, 0, 0) = 14;
  const auto small = box_downsample(img, 2);
  EXPECT_EQ(small.width, 2u);
  EXPECT_EQ(small.at(0, 0, 0), 11);  // (14 + 10 + 10 + 10) / 4
  EXPECT_EQ(small.at(1, 1, 1), 20);

  Mask m(4, 4);
  m.at(0, 0) = m.at(1, 0) = 1;  // half of the top-left block
  m.at(2, 2) = 1;               // a quarter of the bottom-right block
  const auto pooled = pool_mask(m, 2);
  EXPECT_EQ(pooled.at(0, 0), 1);
  EXPECT_EQ(pooled.at(1, 1), 0);
  EXPECT_THROW(pool_mask(m, 3), DimensionError);
}

TEST(Ingest, PolygonSquareQuarterArea) {
  const auto dir = scratch_dir("ingest");
  Image img(100, 80, 90);
  write_png(dir / "a.png", img);
  std::ofstream(dir / "a.regions") << "# square over a quarter of the canvas\nsize 100 80\npolygon 0 0 50 0 50 40 0 40\n";
  const auto rep = ingest_annotations(dir);
  ASSERT_EQ(rep.images.size(), 1u);
  ASSERT_EQ(rep.images[0].regions.size(), 1u);
  EXPECT_NEAR(rep.images[0].regions[0].fraction(), 0.25, 0.01);
  EXPECT_EQ(rep.images[0].pixels.width, kCanvas);
}

TEST(Ingest, SmallRegionDroppedAndRle) {
  const auto dir = scratch_dir("ingest_small");
  Image img(100, 100, 90);
  write_png(dir / "b.png", img);
  // 60 pixels of 10000 = 0.6%; then a 30 x 100 band = 30%.
  std::ofstream(dir / "b.regions") << "size 100 100\nrle 0 60\nrle 2000 3000\n";
  const auto rep = ingest_annotations(dir);
  ASSERT_EQ(rep.images.size(), 1u);
  ASSERT_EQ(rep.images[0].regions.size(), 1u);
  EXPECT_NEAR(rep.images[0].regions[0].fraction(), 0.30, 0.01);
  bool reported = false;
  for (const auto& m : rep.messages) reported |= m.find("below 1% floor") != std::string::npos;
  EXPECT_TRUE(reported);
}

TEST(Ingest, EmptyDirectoryWarns) {
  const auto rep = ingest_annotations(scratch_dir("ingest_empty"));
  EXPECT_TRUE(rep.images.empty());
  ASSERT_EQ(rep.messages.size(), 1u);
  EXPECT_NE(rep.messages[0].find("warning"), std::string::npos);
}

TEST(Ingest, BadSidecarSkippedWithReport) {
  const auto dir = scratch_dir("ingest_bad");
  write_png(dir / "c.png", Image(10, 10, 1));
  std::ofstream(dir / "c.regions") << "size 10 10\ncircle 1 2 3\n";
  write_png(dir / "d.png", Image(10, 10, 1));
  std::ofstream(dir / "d.regions") << "size 10 10\npolygon 0 0 10 0 10 4 0 4\n";
  const auto rep = ingest_annotations(dir);
  ASSERT_EQ(rep.images.size(), 1u);
  EXPECT_EQ(rep.names[0], "d.png");
  ASSERT_FALSE(rep.messages.empty());
  EXPECT_NE(rep.messages[0].find("c.png: skipped"), std::string::npos);
}

TEST(GenerateSet, FromIngestedSources) {
  std::vector<SourceImage> pool;
  for (std::uint64_t s = 0; s < 4; ++s) pool.push_back(synth_base_image(100 + s));
  SetOptions opt;
  opt.counts = {1, 1, 1};
  opt.sources = &pool;
  std::size_t n = 0;
  generate_triplets(opt, [&](const TripletInfo& info, const Triplet&) {
    EXPECT_EQ(info.donor_source.rfind("source:", 0), 0u);
    ++n;
  });
  EXPECT_EQ(n, 3u);
}
