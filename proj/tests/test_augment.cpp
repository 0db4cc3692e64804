#include "geossl/augment.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace geossl;
using namespace geossl::aug;

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  Image img(h, w);
  Rng rng(seed);
  for (float& v : img.px) v = static_cast<float>(rng.uniform());
  return img;
}

SampleGroup seasonal_group(std::uint64_t seed) {
  SampleGroup group;
  group.location_id = 1;
  group.base_image = random_image(96, 96, seed);
  for (int q = 0; q < 3; ++q)
    group.seasonal_images.push_back(random_image(96, 96, seed + 1 + static_cast<std::uint64_t>(q)));
  return group;
}

double mean_luma(const Image& img) {
  double acc = 0.0;
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < n; ++i)
    acc += 0.299 * img.px[i * 3] + 0.587 * img.px[i * 3 + 1] + 0.114 * img.px[i * 3 + 2];
  return acc / static_cast<double>(n);
}

}  // namespace

TEST(RandomResizedCrop, DegenerateRangeGivesFullImage) {
  Rng rng(1);
  const Image img = random_image(64, 64, 2);
  const Image out = random_resized_crop(img, 32, 1.0f, 1.0f, rng);
  const Image direct = resize_bilinear(img, 32, 32);
  EXPECT_EQ(out.px, direct.px);
}

TEST(RandomResizedCrop, ShapeContract) {
  Rng rng(3);
  const Image img = random_image(224, 224, 4);
  const Image out = random_resized_crop(img, 70, 0.32f, 1.0f, rng);
  EXPECT_EQ(out.height, 70);
  EXPECT_EQ(out.width, 70);
  EXPECT_EQ(out.px.size(), 70u * 70u * 3u);
}

TEST(RandomResizedCrop, SeededReplayReproducesRect) {
  const Image img = random_image(96, 96, 5);
  Rng a(42), b(42);
  const CropRect ra = sample_crop_rect(img.height, img.width, 0.2f, 0.9f, a);
  const CropRect rb = sample_crop_rect(img.height, img.width, 0.2f, 0.9f, b);
  EXPECT_EQ(ra.y0, rb.y0);
  EXPECT_EQ(ra.x0, rb.x0);
  EXPECT_EQ(ra.h, rb.h);
  EXPECT_EQ(ra.w, rb.w);
}

TEST(ColorJitter, ZeroDeltasAreIdentity) {
  Rng rng(6);
  const Image img = random_image(32, 32, 7);
  JitterConfig cfg;
  cfg.brightness = cfg.contrast = cfg.saturation = 0.0f;
  const Image out = color_jitter(img, cfg, rng);
  EXPECT_EQ(out.px, img.px);
}

TEST(ColorJitter, BrightnessFactorZeroBlacksOut) {
  const Image img = random_image(16, 16, 8);
  const Image out = apply_brightness(img, 0.0f);
  for (float v : out.px) EXPECT_EQ(v, 0.0f);
}

TEST(ColorJitter, LuminanceScalesWithBrightnessFactor) {
  Image img = random_image(24, 24, 9);
  // Keep pixels in a band where no clamping can occur.
  for (float& v : img.px) v = 0.25f + 0.3f * v;
  const float factor = 1.2f;
  const Image out = apply_brightness(img, factor);
  EXPECT_NEAR(mean_luma(out), factor * mean_luma(img), 1e-5);
}

TEST(ColorJitter, InvalidDeltasThrow) {
  Rng rng(10);
  const Image img = random_image(8, 8, 11);
  JitterConfig cfg;
  cfg.brightness = 1.0f;
  EXPECT_THROW(color_jitter(img, cfg, rng), std::invalid_argument);
}

TEST(RandomFlip, DoubleHorizontalIsIdentity) {
  const Image img = random_image(20, 20, 12);
  Image flipped = img;
  // Force a deterministic horizontal flip through the seeded interface by
  // scanning for a seed whose first draw flips horizontally only.
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    Rng a(seed);
    const bool h = a.bernoulli(0.5), v = a.bernoulli(0.5);
    if (h && !v) {
      Rng b(seed), c(seed);
      flipped = random_flip(img, b);
      const Image twice = random_flip(flipped, c);
      EXPECT_EQ(twice.px, img.px);
      return;
    }
  }
  FAIL() << "no horizontal-only seed found in range";
}

TEST(RandomFlip, PreservesPixelMultiset) {
  const Image img = random_image(18, 18, 13);
  Rng rng(14);
  const Image out = random_flip(img, rng);
  auto a = img.px;
  auto b = out.px;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(RandomFlip, SeededReplay) {
  const Image img = random_image(18, 18, 15);
  Rng a(99), b(99);
  EXPECT_EQ(random_flip(img, a).px, random_flip(img, b).px);
}

TEST(BlockMask, ExplicitZeroRangeIsEmpty) {
  const Image img = random_image(56, 56, 16);
  Rng rng(17);
  const auto [masked, mask] = block_mask(img, 14, 0.0f, 0.0f, false, rng);
  EXPECT_TRUE(mask.empty());
  EXPECT_EQ(masked.px, img.px);
}

TEST(BlockMask, ExactCellCountAtFixedRatio) {
  // 70x70 at patch 14 -> 25 cells; ratio 0.2 -> exactly 5 cells.
  const Image img = random_image(70, 70, 18);
  Rng rng(19);
  const auto [masked, mask] = block_mask(img, 14, 0.2f, 0.2f, false, rng);
  EXPECT_EQ(mask.size(), 5u);
}

TEST(BlockMask, FractionStaysInRangeOverManyDraws) {
  const Image img = random_image(56, 56, 20);
  const int cells = 16;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const auto [masked, mask] = block_mask(img, 14, 0.10f, 0.50f, false, rng);
    const double fraction = static_cast<double>(mask.size()) / cells;
    EXPECT_GE(fraction, 0.10);
    EXPECT_LE(fraction, 0.50);
  }
}

TEST(BlockMask, MaskedPixelsGetFillValue) {
  const Image img = random_image(28, 28, 21);
  Rng rng(22);
  const auto [masked, mask] = block_mask(img, 14, 0.25f, 0.25f, true, rng);
  ASSERT_EQ(mask.size(), 1u);
  const int gy = mask[0] / 2, gx = mask[0] % 2;
  for (int y = gy * 14; y < (gy + 1) * 14; ++y)
    for (int x = gx * 14; x < (gx + 1) * 14; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(masked.at(y, x, c), 0.0f);
}

TEST(BlockMask, InvalidRatioRangeThrows) {
  const Image img = random_image(28, 28, 23);
  Rng rng(24);
  EXPECT_THROW(block_mask(img, 14, -0.1f, 0.5f, false, rng), std::invalid_argument);
  EXPECT_THROW(block_mask(img, 14, 0.2f, 1.0f, false, rng), std::invalid_argument);
  EXPECT_THROW(block_mask(img, 14, 0.5f, 0.2f, false, rng), std::invalid_argument);
}

TEST(ViewBundle, SeasonalGroupYields15Views) {
  AugmentConfig cfg;
  const ViewBundle bundle = build_view_bundle(seasonal_group(25), cfg, 7);
  EXPECT_EQ(bundle.view_count(), 15);
  EXPECT_EQ(bundle.teacher_globals.size(), 2u);
  EXPECT_EQ(bundle.masked_globals.size(), 2u);
  EXPECT_EQ(bundle.local_crops.size(), 8u);
  EXPECT_EQ(bundle.seasonal_views.size(), 3u);
}

TEST(ViewBundle, PlainGroupYields12Views) {
  AugmentConfig cfg;
  SampleGroup group;
  group.base_image = random_image(96, 96, 26);
  const ViewBundle bundle = build_view_bundle(group, cfg, 8);
  EXPECT_EQ(bundle.view_count(), 12);
  EXPECT_TRUE(bundle.seasonal_views.empty());
}

TEST(ViewBundle, SeededReplayIsBitwise) {
  AugmentConfig cfg;
  const SampleGroup group = seasonal_group(27);
  const ViewBundle a = build_view_bundle(group, cfg, 31);
  const ViewBundle b = build_view_bundle(group, cfg, 31);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(a.teacher_globals[static_cast<std::size_t>(i)].px,
              b.teacher_globals[static_cast<std::size_t>(i)].px);
    EXPECT_EQ(a.masked_globals[static_cast<std::size_t>(i)].image.px,
              b.masked_globals[static_cast<std::size_t>(i)].image.px);
    EXPECT_EQ(a.masked_globals[static_cast<std::size_t>(i)].mask,
              b.masked_globals[static_cast<std::size_t>(i)].mask);
  }
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_EQ(a.local_crops[i].px, b.local_crops[i].px);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_EQ(a.seasonal_views[i].px, b.seasonal_views[i].px);
}

TEST(ViewBundle, SizesAndRangeInvariants) {
  AugmentConfig cfg;
  const ViewBundle bundle = build_view_bundle(seasonal_group(28), cfg, 9);
  auto in_range = [](const Image& img) {
    for (float v : img.px)
      if (v < 0.0f || v > 1.0f) return false;
    return true;
  };
  for (const Image& img : bundle.teacher_globals) {
    EXPECT_EQ(img.height, cfg.global_size);
    EXPECT_TRUE(in_range(img));
  }
  for (const auto& mv : bundle.masked_globals) {
    EXPECT_EQ(mv.image.height, cfg.global_size);
    const int cells = (cfg.global_size / cfg.patch_size) * (cfg.global_size / cfg.patch_size);
    const double fraction = static_cast<double>(mv.mask.size()) / cells;
    EXPECT_GE(fraction, cfg.mask_ratio_lo);
    EXPECT_LE(fraction, cfg.mask_ratio_hi);
    EXPECT_TRUE(in_range(mv.image));
  }
  for (const Image& img : bundle.local_crops) {
    EXPECT_EQ(img.height, cfg.local_size);
    EXPECT_TRUE(in_range(img));
  }
  for (const Image& img : bundle.seasonal_views) EXPECT_EQ(img.height, cfg.global_size);
}

TEST(ViewBundle, MaskedTwinsShareTeacherRegions) {
  AugmentConfig cfg;
  const ViewBundle bundle = build_view_bundle(seasonal_group(29), cfg, 10);
  // Shared photometrics: the masked twin equals its teacher view outside the
  // masked cells.
  for (int i = 0; i < 2; ++i) {
    const Image& teacher = bundle.teacher_globals[static_cast<std::size_t>(i)];
    const auto& mv = bundle.masked_globals[static_cast<std::size_t>(i)];
    const int g = cfg.global_size / cfg.patch_size;
    std::set<int> masked(mv.mask.begin(), mv.mask.end());
    for (int gy = 0; gy < g; ++gy)
      for (int gx = 0; gx < g; ++gx) {
        if (masked.count(gy * g + gx)) continue;
        for (int y = gy * cfg.patch_size; y < (gy + 1) * cfg.patch_size; ++y)
          for (int x = gx * cfg.patch_size; x < (gx + 1) * cfg.patch_size; ++x)
            for (int c = 0; c < 3; ++c) ASSERT_EQ(mv.image.at(y, x, c), teacher.at(y, x, c));
      }
  }
}

TEST(ViewBundle, SmallBaseImageThrows) {
  AugmentConfig cfg;
  SampleGroup group;
  group.base_image = random_image(32, 32, 30);  // smaller than global 56
  EXPECT_THROW(build_view_bundle(group, cfg, 11), std::invalid_argument);
}
