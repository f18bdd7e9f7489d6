#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <unistd.h>

#include "ganforge/data.hpp"
#include "ganforge/tensor_io.hpp"

using namespace ganforge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ganforge_data_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RawImage gray(std::size_t w, std::size_t h, unsigned fill) {
  RawImage r;
  r.width = w;
  r.height = h;
  r.channels = 1;
  r.samples.assign(w * h, fill);
  return r;
}

// Independent oracle: sum over every input pixel of separable kernel weights.
Tensor bicubic_oracle(const Tensor& img, std::size_t oh, std::size_t ow) {
  const int c = static_cast<int>(img.dim(0)), h = static_cast<int>(img.dim(1)), w = static_cast<int>(img.dim(2));
  double lo = img[0], hi = img[0];
  for (double v : img.values()) lo = std::min(lo, v), hi = std::max(hi, v);
  Tensor out({img.dim(0), oh, ow});
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const double sy = (y + 0.5) * h / static_cast<double>(oh) - 0.5;
        const double sx = (x + 0.5) * w / static_cast<double>(ow) - 0.5;
        double acc = 0.0;
        for (int m = -4; m < h + 4; ++m)
          for (int n = -4; n < w + 4; ++n) {
            const int mm = std::clamp(m, 0, h - 1), nn = std::clamp(n, 0, w - 1);
            acc += cubic_kernel(sy - m) * cubic_kernel(sx - n) * img[(ch * h + mm) * w + nn];
          }
        out[(ch * oh + y) * ow + x] = std::clamp(acc, lo, hi);
      }
  return out;
}

double mean_pairwise_l2(const Dataset& d, std::size_t label) {
  const auto rows = d.indices_of(label);
  const std::size_t len = d.images.numel() / d.size();
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = a + 1; b < rows.size(); ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double diff = d.images[rows[a] * len + k] - d.images[rows[b] * len + k];
        s += diff * diff;
      }
      total += std::sqrt(s);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

Dataset labeled(std::vector<std::size_t> labels, std::size_t classes) {
  Dataset d;
  d.images = Tensor({labels.size(), 1, kImageSize, kImageSize});
  for (std::size_t i = 0; i < labels.size(); ++i) d.images[i * kImageSize * kImageSize] = 0.001 * i;
  d.labels = std::move(labels);
  for (std::size_t c = 0; c < classes; ++c) d.class_names.push_back("c" + std::to_string(c));
  d.synthetic.assign(d.labels.size(), false);
  return d;
}

}  // namespace

// ---- resize ----------------------------------------------------------------

TEST(Resize, KernelValues) {
  EXPECT_DOUBLE_EQ(cubic_kernel(0.0), 1.0);
  EXPECT_DOUBLE_EQ(cubic_kernel(1.0), 0.0);
  EXPECT_DOUBLE_EQ(cubic_kernel(2.0), 0.0);
  // Catmull-Rom at half offset: (-0.5 * 0.125 ... ) hand value 0.5625 and -0.0625.
  EXPECT_NEAR(cubic_kernel(0.5), 0.5625, 1e-15);
  EXPECT_NEAR(cubic_kernel(1.5), -0.0625, 1e-15);
}

TEST(Resize, ConstantImageStaysConstant) {
  const Tensor img({2, 13, 29}, 0.37);
  const Tensor out = resize_bicubic(img);
  for (double v : out.values()) ASSERT_DOUBLE_EQ(v, 0.37);
}

TEST(Resize, SameSizeIsBitIdentityAndIdempotent) {
  Tensor img({3, 64, 64});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = std::sin(0.37 * i);
  EXPECT_EQ(resize_bicubic(img), img);
  Tensor big({1, 100, 90});
  for (std::size_t i = 0; i < big.numel(); ++i) big[i] = std::cos(0.11 * i);
  const Tensor once = resize_bicubic(big);
  EXPECT_EQ(resize_bicubic(once), once);
}

TEST(Resize, RampUpscaleMatchesDirectKernelSum) {
  Tensor ramp({1, 4, 4});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) ramp[y * 4 + x] = 0.1 * x + 0.05 * y;
  EXPECT_LT(max_abs_diff(resize_bicubic(ramp, 8, 8), bicubic_oracle(ramp, 8, 8)), 1e-9);
  Tensor rnd({2, 7, 5});
  for (std::size_t i = 0; i < rnd.numel(); ++i) rnd[i] = std::sin(1.7 * i * i);
  EXPECT_LT(max_abs_diff(resize_bicubic(rnd, 64, 64), bicubic_oracle(rnd, 64, 64)), 1e-9);
  EXPECT_LT(max_abs_diff(resize_bicubic(rnd, 3, 2), bicubic_oracle(rnd, 3, 2)), 1e-9);
}

TEST(Resize, OutputStaysWithinInputRange) {
  Tensor step({1, 6, 6}, -1.0);
  for (std::size_t i = 18; i < 36; ++i) step[i] = 1.0;
  const Tensor out = resize_bicubic(step);
  for (double v : out.values()) ASSERT_TRUE(v >= -1.0 && v <= 1.0);
}

TEST(Resize, SinglePixelAxisReplicates) {
  const Tensor row({1, 1, 3}, std::vector<double>{0.1, 0.2, 0.3});
  const Tensor out = resize_bicubic(row, 4, 3);
  EXPECT_EQ(out.shape(), (Shape{1, 4, 3}));
  for (std::size_t y = 0; y < 4; ++y) EXPECT_DOUBLE_EQ(out[y * 3 + 2], 0.3);
}

// ---- decoding and loading --------------------------------------------------

TEST(Decode, PlainAndBinaryPnm) {
  const auto dir = temp_dir("pnm");
  write_file_atomic(dir / "a.pgm", "P2\n# comment\n2 1\n15\n0 15\n");
  const RawImage a = decode_image(dir / "a.pgm");
  EXPECT_EQ(a.width, 2u);
  EXPECT_EQ(a.maxval, 15u);
  EXPECT_EQ(a.samples, (std::vector<unsigned>{0, 15}));
  RawImage rgb;
  rgb.width = 1;
  rgb.height = 2;
  rgb.channels = 3;
  rgb.maxval = 1000;
  rgb.samples = {0, 500, 1000, 1, 2, 3};
  write_pgm(dir / "b.ppm", rgb);
  const RawImage b = decode_image(dir / "b.ppm");
  EXPECT_EQ(b.samples, rgb.samples);
  EXPECT_EQ(b.channels, 3u);
  write_file_atomic(dir / "bad.pgm", "P5\n4 4\n255\nxx");
  try {
    decode_image(dir / "bad.pgm");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.pgm"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Decode, PngWhenAvailable) {
  if (!png_supported()) GTEST_SKIP() << "built without PNG support";
  static const unsigned char png[] = {
      0x89, 0x50, 0x4e, 0x47, 0xd,  0xa,  0x1a, 0xa,  0x0,  0x0,  0x0,  0xd,  0x49, 0x48, 0x44, 0x52, 0x0,
      0x0,  0x0,  0x2,  0x0,  0x0,  0x0,  0x2,  0x8,  0x0,  0x0,  0x0,  0x0,  0x57, 0xdd, 0x52, 0xf8, 0x0,
      0x0,  0x0,  0xe,  0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x60, 0xf8, 0xcf, 0xd0, 0xe0, 0x0,  0x0,
      0x5,  0x42, 0x1,  0xc0, 0x70, 0x36, 0x36, 0xd6, 0x0,  0x0,  0x0,  0x0,  0x49, 0x45, 0x4e, 0x44, 0xae,
      0x42, 0x60, 0x82};
  const auto dir = temp_dir("png");
  write_file_atomic(dir / "x.png", std::string(reinterpret_cast<const char*>(png), sizeof png));
  const RawImage r = decode_image(dir / "x.png");
  EXPECT_EQ(r.width, 2u);
  EXPECT_EQ(r.channels, 1u);
  EXPECT_EQ(r.samples, (std::vector<unsigned>{0, 255, 128, 64}));
  fs::remove_all(dir);
}

TEST(Preprocess, EndpointsMapToUnitRange) {
  RawImage r = gray(64, 64, 0);
  r.samples[1] = 255;
  const Tensor t = preprocess(r, 1);
  EXPECT_DOUBLE_EQ(t[0], -1.0);
  EXPECT_DOUBLE_EQ(t[1], 1.0);
  const Tensor rgb = preprocess(r, 3);
  EXPECT_EQ(rgb.shape(), (Shape{3, 64, 64}));
  EXPECT_DOUBLE_EQ(rgb[2 * 4096 + 1], 1.0);
}

TEST(LoadImageDir, SortedClassesAndDeterministicOrder) {
  const auto root = temp_dir("tree");
  write_pgm(root / "b" / "only.pgm", gray(10, 12, 200));
  write_pgm(root / "a" / "2.pgm", gray(64, 64, 255));
  write_pgm(root / "a" / "1.pgm", gray(64, 64, 0));
  fs::create_directories(root / "c");
  std::vector<std::string> warnings;
  const Dataset d = load_image_dir(root, {1}, &warnings);
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{0, 0, 1}));
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"a", "b", "c"}));
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("'c'"), std::string::npos);
  EXPECT_DOUBLE_EQ(d.images[0], -1.0);
  EXPECT_DOUBLE_EQ(d.images[4096], 1.0);
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(load_image_dir(root, {1}).images, d.images);
  EXPECT_EQ(load_image_dir(root, {3}).images.shape(), (Shape{3, 3, 64, 64}));
  write_file_atomic(root / "b" / "broken.pgm", "not an image");
  try {
    load_image_dir(root, {1});
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("broken.pgm"), std::string::npos);
  }
  EXPECT_THROW(load_image_dir(root / "missing"), IoError);
  fs::remove_all(root);
}

// ---- splits ----------------------------------------------------------------

TEST(Split, LargestRemainderCounts) {
  EXPECT_EQ(largest_remainder(10, {0.8, 0.1, 0.1}), (std::vector<std::size_t>{8, 1, 1}));
  EXPECT_EQ(largest_remainder(7, {1.0, 0.0, 0.0}), (std::vector<std::size_t>{7, 0, 0}));
  EXPECT_EQ(largest_remainder(10, {0.7, 0.15, 0.15}), (std::vector<std::size_t>{7, 2, 1}));
  EXPECT_EQ(largest_remainder(3, {1.0 / 3, 1.0 / 3, 1.0 / 3}), (std::vector<std::size_t>{1, 1, 1}));
}

TEST(Split, AllTrainAndSizes) {
  const Dataset d = labeled({0, 0, 0, 0, 0, 1, 1, 1, 1, 1}, 2);
  const auto all = split(d, {1, 0, 0, 3, false});
  EXPECT_EQ(all.train.size(), 10u);
  EXPECT_EQ(all.val.size(), 0u);
  const auto s = split(d, {0.8, 0.1, 0.1, 3, false});
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
  EXPECT_EQ(s.train.split, SplitTag::train);
}

TEST(Split, DisjointExhaustiveAndDeterministic) {
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 37; ++i) labels.push_back(i % 3);
  const Dataset d = labeled(labels, 3);
  for (bool strat : {false, true}) {
    const SplitSpec spec{0.6, 0.2, 0.2, 17, strat};
    const auto parts = split_indices(d, spec);
    std::multiset<std::size_t> seen;
    for (const auto& p : parts) seen.insert(p.begin(), p.end());
    EXPECT_EQ(seen.size(), 37u);
    EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 37u);
    EXPECT_EQ(split_indices(d, spec), parts);
    EXPECT_NE(split_indices(d, {0.6, 0.2, 0.2, 18, strat}), parts);
  }
}

TEST(Split, StratifiedKeepsClassBalance) {
  const Dataset d = labeled({0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1}, 2);
  const auto s = split(d, {0.5, 0.5, 0.0, 9, true});
  EXPECT_EQ(s.train.class_counts(), (std::vector<std::size_t>{3, 3}));
  EXPECT_EQ(s.val.class_counts(), (std::vector<std::size_t>{3, 3}));
  // Per-class proportions within one sample for an uneven corpus.
  std::vector<std::size_t> labels(40, 0);
  for (std::size_t i = 0; i < 9; ++i) labels[i] = 1;
  const auto u = split(labeled(labels, 2), {0.7, 0.15, 0.15, 1, true});
  EXPECT_LE(std::abs(static_cast<double>(u.train.class_counts()[1]) - 0.7 * 9), 1.0);
  EXPECT_LE(std::abs(static_cast<double>(u.val.class_counts()[0]) - 0.15 * 31), 1.0);
}

TEST(Split, InvalidSpecsRejected) {
  const Dataset d = labeled({0, 0, 1}, 2);
  EXPECT_THROW(split(d, {0.5, 0.5, 0.5, 0, false}), ValidationError);
  EXPECT_THROW(split(d, {-0.1, 0.6, 0.5, 0, false}), ValidationError);
  EXPECT_THROW(split(labeled({0, 1}, 2), {0.4, 0.3, 0.3, 0, false}), ValidationError);
  EXPECT_THROW(split(d, {0.5, 0.5, 0.0, 0, true}), ValidationError);
}

// ---- procedural corpora ----------------------------------------------------

TEST(SynthGlyphs, ShapeBalanceAndRange) {
  const Dataset d = synth_glyphs(3, 5, 0.5, 1);
  EXPECT_EQ(d.images.shape(), (Shape{15, 3, 64, 64}));
  EXPECT_EQ(d.class_counts(), (std::vector<std::size_t>{5, 5, 5}));
  EXPECT_NO_THROW(d.validate());
  double lo = 1, hi = -1;
  for (double v : d.images.values()) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_DOUBLE_EQ(lo, -1.0);
  EXPECT_GT(hi, 0.0);
}

TEST(SynthGlyphs, ZeroNoiseGivesIdenticalClassMembers) {
  const Dataset d = synth_glyphs(10, 3, 0.0, 4);
  for (std::size_t c = 0; c < 10; ++c) {
    const Tensor a = d.images.slice0(c * 3, c * 3 + 1), b = d.images.slice0(c * 3 + 2, c * 3 + 3);
    EXPECT_EQ(a, b) << "class " << c;
  }
  // Distinct classes render distinct glyphs.
  for (std::size_t c = 1; c < 10; ++c) {
    EXPECT_GT(max_abs_diff(d.images.slice0(0, 1), d.images.slice0(c * 3, c * 3 + 1)), 0.5) << c;
  }
}

TEST(SynthGlyphs, SpreadGrowsWithNoise) {
  double prev = -1.0;
  for (double noise : {0.0, 0.5, 1.0}) {
    double spread = 0.0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const Dataset d = synth_glyphs(3, 6, noise, seed);
      for (std::size_t c = 0; c < 3; ++c) spread += mean_pairwise_l2(d, c);
    }
    EXPECT_GT(spread, prev) << "noise " << noise;
    prev = spread;
  }
}

TEST(SynthLungfields, DeterministicSingleChannel) {
  const Dataset a = synth_lungfields(4, 0.0, 7), b = synth_lungfields(4, 0.0, 7);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.images.shape(), (Shape{8, 1, 64, 64}));
  EXPECT_NO_THROW(a.validate());
  EXPECT_NE(synth_lungfields(4, 0.5, 7).images, synth_lungfields(4, 0.5, 8).images);
}

TEST(SynthLungfields, OpacityClassDiffersInBlobRegion) {
  const Dataset d = synth_lungfields(40, 0.5, 3);
  Tensor m0({64, 64}), m1({64, 64});
  for (std::size_t i = 0; i < d.size(); ++i) {
    Tensor& m = d.labels[i] == 0 ? m0 : m1;
    for (std::size_t k = 0; k < 4096; ++k) m[k] += d.images[i * 4096 + k] / 40.0;
  }
  // Lower lung zones where opacities are placed.
  double mad = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 32; y < 48; ++y)
    for (std::size_t x : {16, 17, 18, 19, 20, 21, 22, 23, 40, 41, 42, 43, 44, 45, 46, 47}) {
      mad += std::abs(m1[y * 64 + x] - m0[y * 64 + x]);
      ++count;
    }
  EXPECT_GT(mad / count, 0.1);
}

// ---- cache -----------------------------------------------------------------

TEST(DatasetCache, RoundTrip) {
  const auto dir = temp_dir("cache");
  Dataset d = synth_glyphs(2, 2, 0.3, 5);
  d.synthetic[1] = true;
  save_dataset(dir, d, {{"note", "x"}});
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.images, d.images);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.class_names, d.class_names);
  EXPECT_EQ(back.synthetic, d.synthetic);
  EXPECT_EQ(back.provenance, d.provenance);
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  EXPECT_EQ(manifest["preprocessing"]["cubic_a"], -0.5);
  EXPECT_EQ(manifest["channels"], 3);
  EXPECT_THROW(load_dataset(dir / "nope"), IoError);
  fs::remove_all(dir);
}
