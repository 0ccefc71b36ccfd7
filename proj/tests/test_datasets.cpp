#include <cmath>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace idda;
namespace fs = std::filesystem;

namespace {

IdxImages random_images(std::size_t n, std::uint32_t rows, std::uint32_t cols, Rng& rng) {
  IdxImages im;
  im.rows = rows;
  im.cols = cols;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::uint8_t> px(rows * cols);
    for (auto& p : px) p = static_cast<std::uint8_t>(rng.below(256));
    im.images.push_back(std::move(px));
  }
  return im;
}

TEST(Idx, HeaderLayoutIsBigEndian) {
  IdxImages im;
  im.rows = 2;
  im.cols = 3;
  im.images = {{1, 2, 3, 4, 5, 6}};
  const auto b = serialize_idx_images(im);
  const std::vector<std::uint8_t> header{0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3};
  ASSERT_EQ(b.size(), 22u);
  EXPECT_TRUE(std::equal(header.begin(), header.end(), b.begin()));
  const auto l = serialize_idx_labels({7, 9});
  EXPECT_EQ(l, (std::vector<std::uint8_t>{0, 0, 8, 1, 0, 0, 0, 2, 7, 9}));
}

TEST(Idx, RoundTripIsByteExact) {
  Rng rng(1);
  const auto im = random_images(13, 5, 7, rng);
  std::vector<std::uint8_t> labels(13);
  for (auto& y : labels) y = static_cast<std::uint8_t>(rng.below(10));
  const auto dir = idda::testing::scratch_dir("idx");
  write_idx(dir / "i", dir / "l", im, labels);
  const auto ib = detail::read_all(dir / "i");
  const auto lb = detail::read_all(dir / "l");
  const auto back = parse_idx_images(ib);
  EXPECT_EQ(back.images, im.images);
  EXPECT_EQ(serialize_idx_images(back), ib);
  EXPECT_EQ(serialize_idx_labels(parse_idx_labels(lb)), lb);

  const LabeledSet s = load_idx(dir / "i", dir / "l");
  ASSERT_EQ(s.x.shape(), (Shape{13, 1, 5, 7}));
  EXPECT_EQ(s.num_classes, 10u);
  for (std::size_t i = 0; i < 13; ++i) {
    EXPECT_EQ(s.labels[i], labels[i]);
    for (std::size_t p = 0; p < 35; ++p) EXPECT_EQ(s.x[i * 35 + p], static_cast<float>(im.images[i][p]) / 255.0f);
  }
  EXPECT_EQ(load_idx(dir / "i", dir / "l", 4).size(), 4u);
  fs::remove_all(dir);
}

TEST(Idx, MalformedFilesAreRejected) {
  Rng rng(2);
  auto b = serialize_idx_images(random_images(3, 4, 4, rng));
  auto bad_magic = b;
  bad_magic[3] = 0x01;
  EXPECT_THROW(parse_idx_images(bad_magic), Error);
  EXPECT_THROW(parse_idx_images(std::vector<std::uint8_t>(b.begin(), b.begin() + 10)), Error);
  EXPECT_THROW(parse_idx_images(std::vector<std::uint8_t>(b.begin(), b.end() - 1)), Error);
  auto l = serialize_idx_labels({1, 2, 3});
  EXPECT_THROW(parse_idx_labels(std::vector<std::uint8_t>(l.begin(), l.end() - 1)), Error);
  EXPECT_THROW(parse_idx_labels(b), Error);

  const auto dir = idda::testing::scratch_dir("idxbad");
  detail::write_all(dir / "i", b);
  detail::write_all(dir / "l", serialize_idx_labels({1, 2}));
  EXPECT_THROW(load_idx(dir / "i", dir / "l"), Error);
  EXPECT_THROW(load_idx(dir / "missing", dir / "l"), Error);
  fs::remove_all(dir);
}

TEST(Idx, BundledMnistRoundTrips) {
  const auto images = idda::testing::mnist_images();
  if (!fs::exists(images)) GTEST_SKIP() << "no MNIST files at " << images;
  const auto ib = detail::read_all(images);
  const auto lb = detail::read_all(idda::testing::mnist_labels());
  EXPECT_EQ(serialize_idx_images(parse_idx_images(ib)), ib);
  EXPECT_EQ(serialize_idx_labels(parse_idx_labels(lb)), lb);
}

TEST(Synthetic, GaussianModesAreDeterministicAndBalanced) {
  SyntheticShiftConfig c = default_gaussian_config();
  c.seed = 5;
  const DomainPair a = gen_gaussian_modes(c);
  const DomainPair b = gen_gaussian_modes(c);
  EXPECT_EQ(a.source.x.values(), b.source.x.values());
  EXPECT_EQ(a.target.x.values(), b.target.x.values());
  c.seed = 6;
  EXPECT_NE(gen_gaussian_modes(c).source.x.values(), a.source.x.values());

  std::vector<std::size_t> count(3, 0);
  for (std::size_t y : a.source.labels) ++count[y];
  for (std::size_t k : count) EXPECT_EQ(k, 200u);
  ASSERT_TRUE(a.target.hidden_labels);
  EXPECT_EQ(a.target.hidden_labels->size(), 600u);
}

TEST(Synthetic, EachClassHasItsModes) {
  // Assign every source point to its nearest mode center: the points of a
  // class must populate all of that class's modes and no other class's.
  SyntheticShiftConfig c = default_gaussian_config();
  c.cov_scale = 0.2;
  c.seed = 1;
  const DomainPair d = gen_gaussian_modes(c);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 0; i < d.source.size(); ++i) {
    double best = 1e300;
    std::pair<std::size_t, std::size_t> arg;
    for (std::size_t k = 0; k < c.num_classes; ++k)
      for (std::size_t j = 0; j < c.modes_per_class; ++j) {
        const auto m = c.center(k, j);
        const double dx = d.source.x[2 * i] - m[0], dy = d.source.x[2 * i + 1] - m[1];
        if (dx * dx + dy * dy < best) {
          best = dx * dx + dy * dy;
          arg = {k, j};
        }
      }
    EXPECT_EQ(arg.first, d.source.labels[i]);
    seen.insert(arg);
  }
  EXPECT_EQ(seen.size(), c.num_classes * c.modes_per_class);
}

TEST(Synthetic, TargetIsRotatedAndTranslated) {
  SyntheticShiftConfig c = default_gaussian_config();
  c.cov_scale = 1e-6;
  c.rotation_deg = 90.0;
  c.translation = {1.0, -2.0};
  const DomainPair d = gen_gaussian_modes(c);
  // With near-zero spread every target point sits on a rotated, shifted center.
  for (std::size_t i = 0; i < d.target.size(); ++i) {
    const std::size_t y = (*d.target.hidden_labels)[i];
    bool hit = false;
    for (std::size_t j = 0; j < c.modes_per_class; ++j) {
      const auto m = c.center(y, j);
      const double ex = -m[1] + 1.0, ey = m[0] - 2.0;
      hit |= std::abs(d.target.x[2 * i] - ex) < 1e-4 && std::abs(d.target.x[2 * i + 1] - ey) < 1e-4;
    }
    EXPECT_TRUE(hit) << i;
  }
}

TEST(Synthetic, ConfigValidation) {
  SyntheticShiftConfig c;
  c.cov_scale = 0.0;
  EXPECT_THROW(gen_gaussian_modes(c), Error);
  c = {};
  c.centers = {{0, 0}};
  EXPECT_THROW(gen_gaussian_modes(c), Error);
  EXPECT_THROW(gen_two_moons(10, 0, 5, 0.1, 0), Error);
}

TEST(Synthetic, TwoMoonsShape) {
  const DomainPair d = gen_two_moons(0.0, 200, 100, 0.0, 3);
  EXPECT_EQ(d.source.x.shape(), (Shape{200, 2}));
  EXPECT_EQ(d.target.x.shape(), (Shape{100, 2}));
  // Noise-free moons: class 0 on the unit upper arc, class 1 on the shifted lower arc.
  for (std::size_t i = 0; i < 200; ++i) {
    const double x = d.source.x[2 * i], y = d.source.x[2 * i + 1];
    const double r = d.source.labels[i] == 0 ? std::hypot(x, y) : std::hypot(x - 1.0, y - 0.5);
    EXPECT_NEAR(r, 1.0, 1e-5);
  }
}

TEST(MnistM, BlendIsDeterministicAndInRange) {
  LabeledSet s;
  s.num_classes = 10;
  Rng rng(4);
  s.x = Tensor<float>({6, 1, 8, 8});
  for (auto& v : s.x.values()) v = static_cast<float>(rng.uniform());
  s.labels = {0, 1, 2, 3, 4, 5};
  const auto a = synth_mnist_m(s, ProceduralPatches{}, 9);
  const auto b = synth_mnist_m(s, ProceduralPatches{}, 9);
  const auto c = synth_mnist_m(s, ProceduralPatches{}, 10);
  EXPECT_EQ(a.x.shape(), (Shape{6, 3, 8, 8}));
  EXPECT_EQ(a.x.values(), b.x.values());
  EXPECT_NE(a.x.values(), c.x.values());
  EXPECT_EQ(*a.hidden_labels, s.labels);
  for (float v : a.x.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  // Per-sample streams: a prefix of the set blends identically.
  LabeledSet head = s;
  head.x = s.x.slice_rows(0, 3);
  head.labels.resize(3);
  const auto h = synth_mnist_m(head, ProceduralPatches{}, 9);
  EXPECT_TRUE(std::equal(h.x.values().begin(), h.x.values().end(), a.x.values().begin()));
}

TEST(MnistM, PhotoPatchesBlendAsAbsoluteDifference) {
  // A constant-colour photo makes the blend easy to predict.
  RgbImage img;
  img.width = 10;
  img.height = 10;
  img.pixels.assign(300, 0);
  for (std::size_t i = 0; i < 100; ++i) {
    img.pixels[3 * i] = 255;
    img.pixels[3 * i + 1] = 0;
    img.pixels[3 * i + 2] = 51;
  }
  LabeledSet s;
  s.x = Tensor<float>({1, 1, 4, 4}, 0.25f);
  s.labels = {3};
  const auto out = synth_mnist_m(s, ImagePatches{{img}}, 0);
  for (std::size_t p = 0; p < 16; ++p) {
    EXPECT_NEAR(out.x[p], 0.75f, 1e-6);
    EXPECT_NEAR(out.x[16 + p], 0.25f, 1e-6);
    EXPECT_NEAR(out.x[32 + p], 0.05f, 1e-6);
  }
  EXPECT_THROW(synth_mnist_m(s, ImagePatches{}, 0), Error);
}

TEST(MnistM, GrayToRgbAndCentering) {
  Tensor<float> g({2, 1, 2, 2}, std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7});
  auto rgb = gray_to_rgb(g);
  EXPECT_EQ(rgb.shape(), (Shape{2, 3, 2, 2}));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(rgb[(1 * 3 + c) * 4 + 2], 6.0f);
  Tensor<float> other({1, 3, 2, 2}, 1.0f);
  center_channels(rgb, other);
  // Channel mean over 12 pixels: (0+...+7 + 4) / 12 = 32/12.
  double sum = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < 4; ++p) sum += rgb[(n * 3) * 4 + p];
  for (std::size_t p = 0; p < 4; ++p) sum += other[p];
  EXPECT_NEAR(sum, 0.0, 1e-5);
  EXPECT_NEAR(other[0], 1.0 - 32.0 / 12.0, 1e-6);
}

}  // namespace
