#include <gtest/gtest.h>

#include <array>

#include "test_support.hpp"

using namespace dermo;
using dermo::testing::TempDir;

namespace {

PixelGrid<int> random_grid(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  PixelGrid<int> g(h, w, c);
  for (auto& v : g.data()) v = static_cast<int>(rng.below(1000));
  return g;
}

/// Oracle: 180 degree rotation as an explicit index permutation.
template <typename T>
PixelGrid<T> rotate180(const PixelGrid<T>& g) {
  PixelGrid<T> out(g.height(), g.width(), g.channels());
  for (std::size_t r = 0; r < g.height(); ++r)
    for (std::size_t c = 0; c < g.width(); ++c)
      for (std::size_t ch = 0; ch < g.channels(); ++ch)
        out(g.height() - 1 - r, g.width() - 1 - c, ch) = g(r, c, ch);
  return out;
}

}  // namespace

TEST(Flip, HorizontalSwapsRowEnds) {
  const PixelGrid<int> g(1, 2, 1, std::vector<int>{1, 2});
  EXPECT_EQ(flip_horizontal(g).data(), (std::vector<int>{2, 1}));
}

TEST(Flip, VerticalSwapsColumnEnds) {
  const PixelGrid<int> g(2, 1, 1, std::vector<int>{1, 2});
  EXPECT_EQ(flip_vertical(g).data(), (std::vector<int>{2, 1}));
}

TEST(Flip, BothFlipsOnThreeByThreeIsHalfTurn) {
  const PixelGrid<int> g(3, 3, 1, std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_EQ(flip_horizontal(flip_vertical(g)).data(), (std::vector<int>{9, 8, 7, 6, 5, 4, 3, 2, 1}));
}

TEST(Flip, EmptyGridRejected) {
  EXPECT_THROW(flip_horizontal(Image{}), DimensionError);
  EXPECT_THROW(flip_vertical(Image{}), DimensionError);
}

/// Property on random grids up to 128x128x3: involutions, shape preserved, h∘v = v∘h = rot180.
TEST(Flip, RandomizedProperties) {
  Rng rng(31);
  for (int trial = 0; trial < 60; ++trial) {
    const auto g = random_grid(rng, 1 + rng.below(128), 1 + rng.below(128), 1 + rng.below(3));
    const auto h = flip_horizontal(g), v = flip_vertical(g);
    EXPECT_EQ(h.height(), g.height());
    EXPECT_EQ(h.width(), g.width());
    EXPECT_EQ(h.channels(), g.channels());
    EXPECT_EQ(v.channels(), g.channels());
    EXPECT_EQ(flip_horizontal(h), g);
    EXPECT_EQ(flip_vertical(v), g);
    EXPECT_EQ(flip_horizontal(v), rotate180(g));
    EXPECT_EQ(flip_vertical(h), rotate180(g));
    for (std::size_t r = 0; r < g.height(); ++r)
      for (std::size_t c = 0; c < g.width(); ++c) {
        EXPECT_EQ(h(r, g.width() - 1 - c, 0), g(r, c, 0));
        EXPECT_EQ(v(g.height() - 1 - r, c, 0), g(r, c, 0));
      }
  }
}

TEST(PlanFlips, DeterministicForSeed) {
  EXPECT_EQ(plan_flips(500, 7), plan_flips(500, 7));
  EXPECT_NE(plan_flips(500, 7), plan_flips(500, 8));
}

/// Oracle: chi-square goodness of fit against the uniform distribution over 4 variants.
TEST(PlanFlips, UniformOverVariants) {
  for (std::uint64_t seed : {0ull, 1ull, 42ull, 0xDEADBEEFull}) {
    const auto plan = plan_flips(10000, seed);
    std::array<double, 4> counts{};
    for (auto v : plan) counts[static_cast<std::size_t>(v)] += 1.0;
    double chi2 = 0.0;
    for (double c : counts) {
      EXPECT_NEAR(c / 10000.0, 0.25, 0.02);
      chi2 += (c - 2500.0) * (c - 2500.0) / 2500.0;
    }
    EXPECT_LT(chi2, 16.27) << "seed " << seed;  // 3 dof, p = 0.001
  }
}

TEST(AugmentedStream, PreservesLabelsAndIsDeterministic) {
  const auto ds = dermo::testing::dataset_with_counts(LabelSpace({"A", "B", "C"}), {7, 5, 3});
  const auto loader = dermo::testing::synthetic_loader(16);
  AugmentedStream s1(ds, 11, loader), s2(ds, 11, loader);
  std::size_t i = 0;
  while (auto a = s1.next()) {
    auto b = s2.next();
    ASSERT_TRUE(b.has_value());
    const auto& rec = ds.records()[i++];
    EXPECT_EQ(a->label, *rec.label);
    EXPECT_EQ(a->image_id, rec.image_id);
    EXPECT_EQ(a->variant, b->variant);
    EXPECT_EQ(a->image, b->image);
    EXPECT_EQ(a->image, apply_flip(loader(rec), a->variant));
  }
  EXPECT_EQ(i, ds.size());
  EXPECT_FALSE(s2.next().has_value());
}

TEST(AugmentedStream, DisabledEmitsIdentity) {
  const auto ds = dermo::testing::dataset_with_counts(LabelSpace({"A", "B"}), {4, 4});
  AugmentedStream s(ds, 3, dermo::testing::synthetic_loader(8), false);
  for (auto v : s.plan()) EXPECT_EQ(v, FlipVariant::kIdentity);
}

TEST(AugmentedStream, DecodeErrorCarriesImageId) {
  TempDir dir("decode");
  dermo::testing::write_text(dir / "broken.jpg", "not an image");
  const Dataset ds(LabelSpace({"A", "B"}), {{"broken", dir / "broken.jpg", 0}});
  AugmentedStream s(ds, 0);
  try {
    s.next();
    FAIL() << "expected DecodeError";
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.image_id(), "broken");
  }
}

TEST(ImageIo, PngRoundTripIsLossless) {
  TempDir dir("png");
  Rng rng(2);
  Image img(9, 13, 3);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng.below(256));
  write_png(img, dir / "x.png");
  EXPECT_EQ(decode_image(dir / "x.png", "x"), img);
}

TEST(ImageIo, ResizeKeepsConstantImageConstant) {
  const Image img(40, 30, 3, std::uint8_t{77});
  const auto out = resize_bilinear(img, 64, 64);
  EXPECT_EQ(out.height(), 64u);
  EXPECT_EQ(out.width(), 64u);
  for (auto v : out.data()) EXPECT_EQ(v, 77);
  EXPECT_EQ(resize_bilinear(img, 40, 30), img);
}
