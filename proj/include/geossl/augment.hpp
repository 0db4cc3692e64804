#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "geossl/image.hpp"
#include "geossl/rng.hpp"

namespace geossl::aug {

struct JitterConfig {
  float brightness = 0.4f;
  float contrast = 0.4f;
  float saturation = 0.2f;
};

struct AugmentConfig {
  int global_size = 56;
  int local_size = 28;
  int patch_size = 14;
  float global_scale_lo = 0.32f;
  float global_scale_hi = 1.0f;
  float local_scale_lo = 0.05f;
  float local_scale_hi = 0.32f;
  float mask_ratio_lo = 0.10f;
  float mask_ratio_hi = 0.50f;
  bool mask_fill_zero = false;  // default: per-view channel mean
  // Masked twins share the photometrics of their unmasked view; when false
  // they are re-rendered with independent jitter/flip draws.
  bool shared_masked_photometrics = true;
  JitterConfig jitter;
};

// One location: the base-quarter image plus, when available, the other three
// quarters of the same location.
struct SampleGroup {
  std::uint64_t location_id = 0;
  Image base_image;
  std::vector<Image> seasonal_images;  // size 0 or 3
};

struct MaskedView {
  Image image;
  std::vector<int> mask;  // ascending patch indices into the view's grid
};

// The augmented views of one sample: 2 teacher globals, their 2 masked
// twins, 8 local crops, and 0 or 3 seasonal views (15 or 12 total).
struct ViewBundle {
  std::vector<Image> teacher_globals;
  std::vector<MaskedView> masked_globals;
  std::vector<Image> local_crops;
  std::vector<Image> seasonal_views;
  std::uint64_t rng_seed = 0;

  int view_count() const {
    return static_cast<int>(teacher_globals.size() + masked_globals.size() +
                            local_crops.size() + seasonal_views.size());
  }
};

struct CropRect {
  int y0 = 0, x0 = 0, h = 0, w = 0;
};

// Samples an area fraction in [scale_lo, scale_hi] and an aspect ratio in
// [3/4, 4/3]; falls back to the largest centered square after 10 rejected
// attempts.
CropRect sample_crop_rect(int img_h, int img_w, float scale_lo, float scale_hi, Rng& rng);

Image random_resized_crop(const Image& img, int out_size, float scale_lo,
                          float scale_hi, Rng& rng);

// Direct-factor photometric ops (used by color_jitter; exposed for tests).
Image apply_brightness(const Image& img, float factor);
Image apply_contrast(const Image& img, float factor);
Image apply_saturation(const Image& img, float factor);

// Applies brightness/contrast/saturation in random order with factors drawn
// from [1-delta, 1+delta]; output clamped to [0, 1].
Image color_jitter(const Image& img, const JitterConfig& cfg, Rng& rng);

// Each axis independently flipped with probability 0.5.
Image random_flip(const Image& img, Rng& rng);

// Masks contiguous rectangular blocks of patch cells until a drawn target
// ratio is met, trimming the final block back to the target. Returns the
// masked image and the ascending masked-cell index set.
std::pair<Image, std::vector<int>> block_mask(const Image& img, int patch_size,
                                              float ratio_lo, float ratio_hi,
                                              bool fill_zero, Rng& rng);

ViewBundle build_view_bundle(const SampleGroup& group, const AugmentConfig& cfg,
                             std::uint64_t seed);

}  // namespace geossl::aug
