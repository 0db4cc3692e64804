#include "geossl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace geossl::aug {

namespace {

float luminance(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

float mean_luminance(const Image& img) {
  double acc = 0.0;
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < n; ++i)
    acc += luminance(img.px[i * 3], img.px[i * 3 + 1], img.px[i * 3 + 2]);
  return static_cast<float>(acc / static_cast<double>(n));
}

}  // namespace

CropRect sample_crop_rect(int img_h, int img_w, float scale_lo, float scale_hi, Rng& rng) {
  if (!(scale_lo > 0.0f && scale_lo <= scale_hi && scale_hi <= 1.0f))
    throw std::invalid_argument("crop: scale range must satisfy 0 < lo <= hi <= 1");
  const double area = static_cast<double>(img_h) * img_w;
  const double log_lo = std::log(3.0 / 4.0);
  const double log_hi = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(scale_lo, scale_hi);
    const double ar = std::exp(rng.uniform(log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ar)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ar)));
    if (w > 0 && h > 0 && w <= img_w && h <= img_h) {
      const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(img_h - h + 1)));
      const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(img_w - w + 1)));
      return {y0, x0, h, w};
    }
  }
  const int side = std::min(img_h, img_w);
  return {(img_h - side) / 2, (img_w - side) / 2, side, side};
}

Image random_resized_crop(const Image& img, int out_size, float scale_lo,
                          float scale_hi, Rng& rng) {
  if (out_size <= 0) throw std::invalid_argument("crop: output size must be positive");
  const CropRect r = sample_crop_rect(img.height, img.width, scale_lo, scale_hi, rng);
  return resize_bilinear(crop(img, r.y0, r.x0, r.h, r.w), out_size, out_size);
}

Image apply_brightness(const Image& img, float factor) {
  if (factor == 1.0f) return img;
  Image out = img;
  for (float& v : out.px) v = std::clamp(v * factor, 0.0f, 1.0f);
  return out;
}

Image apply_contrast(const Image& img, float factor) {
  if (factor == 1.0f) return img;
  const float m = mean_luminance(img);
  Image out = img;
  for (float& v : out.px) v = std::clamp((v - m) * factor + m, 0.0f, 1.0f);
  return out;
}

Image apply_saturation(const Image& img, float factor) {
  if (factor == 1.0f) return img;
  Image out = img;
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < n; ++i) {
    const float g = luminance(img.px[i * 3], img.px[i * 3 + 1], img.px[i * 3 + 2]);
    for (int c = 0; c < 3; ++c)
      out.px[i * 3 + c] = std::clamp((img.px[i * 3 + c] - g) * factor + g, 0.0f, 1.0f);
  }
  return out;
}

Image color_jitter(const Image& img, const JitterConfig& cfg, Rng& rng) {
  if (cfg.brightness < 0.0f || cfg.brightness >= 1.0f || cfg.contrast < 0.0f ||
      cfg.contrast >= 1.0f || cfg.saturation < 0.0f || cfg.saturation >= 1.0f)
    throw std::invalid_argument("color_jitter: deltas must lie in [0, 1)");
  int order[3] = {0, 1, 2};
  rng.shuffle(order, order + 3);
  Image out = img;
  for (int op : order) {
    switch (op) {
      case 0:
        out = apply_brightness(out, static_cast<float>(rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness)));
        break;
      case 1:
        out = apply_contrast(out, static_cast<float>(rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast)));
        break;
      default:
        out = apply_saturation(out, static_cast<float>(rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation)));
        break;
    }
  }
  return out;
}

Image random_flip(const Image& img, Rng& rng) {
  const bool horizontal = rng.bernoulli(0.5);
  const bool vertical = rng.bernoulli(0.5);
  if (!horizontal && !vertical) return img;
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    const int sy = vertical ? img.height - 1 - y : y;
    for (int x = 0; x < img.width; ++x) {
      const int sx = horizontal ? img.width - 1 - x : x;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

std::pair<Image, std::vector<int>> block_mask(const Image& img, int patch_size,
                                              float ratio_lo, float ratio_hi,
                                              bool fill_zero, Rng& rng) {
  if (patch_size <= 0 || img.height % patch_size != 0 || img.width % patch_size != 0 ||
      img.height != img.width)
    throw std::invalid_argument("block_mask: square image side must be divisible by patch size");
  if (ratio_lo < 0.0f || ratio_hi >= 1.0f || ratio_lo > ratio_hi)
    throw std::invalid_argument("block_mask: ratio range must satisfy 0 <= lo <= hi < 1");
  const int g = img.height / patch_size;
  const int cells = g * g;

  const double ratio = (ratio_lo == ratio_hi) ? ratio_lo : rng.uniform(ratio_lo, ratio_hi);
  int target = static_cast<int>(std::lround(ratio * cells));
  if (ratio > 0.0 && target < 1) target = 1;
  // Keep the realized fraction inside [lo, hi] where the grid permits it.
  const int min_cells = static_cast<int>(std::ceil(static_cast<double>(ratio_lo) * cells - 1e-9));
  const int max_cells = static_cast<int>(std::floor(static_cast<double>(ratio_hi) * cells + 1e-9));
  if (target > 0 && max_cells >= std::max(min_cells, 1))
    target = std::clamp(target, std::max(min_cells, 1), max_cells);

  std::vector<int> picked;
  if (target > 0) {
    std::vector<char> taken(static_cast<std::size_t>(cells), 0);
    picked.reserve(static_cast<std::size_t>(target));
    const int max_side = std::max(1, g / 2);
    while (static_cast<int>(picked.size()) < target) {
      const int bh = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_side)));
      const int bw = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_side)));
      const int by = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(g - bh + 1)));
      const int bx = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(g - bw + 1)));
      for (int y = by; y < by + bh; ++y)
        for (int x = bx; x < bx + bw; ++x) {
          const int idx = y * g + x;
          if (!taken[static_cast<std::size_t>(idx)]) {
            taken[static_cast<std::size_t>(idx)] = 1;
            picked.push_back(idx);
          }
        }
    }
    // Trim the overshoot from the final block back to the target count.
    picked.resize(static_cast<std::size_t>(target));
    std::sort(picked.begin(), picked.end());
  }

  Image out = img;
  float fill[3] = {0.0f, 0.0f, 0.0f};
  if (!fill_zero) {
    double acc[3] = {0.0, 0.0, 0.0};
    const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) acc[c] += img.px[i * 3 + c];
    for (int c = 0; c < 3; ++c) fill[c] = static_cast<float>(acc[c] / static_cast<double>(n));
  }
  for (int idx : picked) {
    const int gy = idx / g, gx = idx % g;
    for (int y = gy * patch_size; y < (gy + 1) * patch_size; ++y)
      for (int x = gx * patch_size; x < (gx + 1) * patch_size; ++x)
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = fill[c];
  }
  return {std::move(out), std::move(picked)};
}

ViewBundle build_view_bundle(const SampleGroup& group, const AugmentConfig& cfg,
                             std::uint64_t seed) {
  if (group.base_image.height < cfg.global_size || group.base_image.width < cfg.global_size)
    throw std::invalid_argument("build_view_bundle: base image smaller than the global crop size");
  if (!group.seasonal_images.empty() && group.seasonal_images.size() != 3)
    throw std::invalid_argument("build_view_bundle: seasonal image count must be 0 or 3");

  Rng rng(seed);
  ViewBundle bundle;
  bundle.rng_seed = seed;

  for (int i = 0; i < 2; ++i) {
    const CropRect rect = sample_crop_rect(group.base_image.height, group.base_image.width,
                                           cfg.global_scale_lo, cfg.global_scale_hi, rng);
    Image region = resize_bilinear(crop(group.base_image, rect.y0, rect.x0, rect.h, rect.w),
                                   cfg.global_size, cfg.global_size);
    Image view = random_flip(color_jitter(region, cfg.jitter, rng), rng);
    bundle.teacher_globals.push_back(view);

    Image twin = cfg.shared_masked_photometrics
                     ? view
                     : random_flip(color_jitter(region, cfg.jitter, rng), rng);
    auto [masked, mask] = block_mask(twin, cfg.patch_size, cfg.mask_ratio_lo,
                                     cfg.mask_ratio_hi, cfg.mask_fill_zero, rng);
    bundle.masked_globals.push_back({std::move(masked), std::move(mask)});
  }

  for (int i = 0; i < 8; ++i) {
    Image v = random_resized_crop(group.base_image, cfg.local_size, cfg.local_scale_lo,
                                  cfg.local_scale_hi, rng);
    bundle.local_crops.push_back(random_flip(color_jitter(v, cfg.jitter, rng), rng));
  }

  for (const Image& seasonal : group.seasonal_images) {
    Image v = random_resized_crop(seasonal, cfg.global_size, cfg.global_scale_lo,
                                  cfg.global_scale_hi, rng);
    bundle.seasonal_views.push_back(random_flip(color_jitter(v, cfg.jitter, rng), rng));
  }
  return bundle;
}

}  // namespace geossl::aug
