#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "geossl/augment.hpp"
#include "geossl/strata.hpp"
#include "geossl/vit.hpp"

namespace geossl {

// Flat key = value run configuration. Unknown keys are rejected; every value
// is range-validated against the module preconditions it feeds.
struct RunConfig {
  // model
  std::string model = "custom";  // small|base|large|huge|giant|custom
  int vit_layers = 4;
  int vit_embed = 32;
  int vit_hidden = 128;
  int vit_heads = 4;
  int patch_size = 14;
  int image_size = 0;  // 0: use global_size as the positional-table grid

  // crops / augmentation
  int global_size = 56;
  int local_size = 28;
  int global_size_phase2 = 0;       // 0: no second phase
  std::int64_t phase2_start_step = 0;  // 0: no second phase
  double global_scale_lo = 0.32, global_scale_hi = 1.0;
  double local_scale_lo = 0.05, local_scale_hi = 0.32;
  double mask_ratio_lo = 0.10, mask_ratio_hi = 0.50;
  std::string mask_fill = "mean";                   // mean|zero
  std::string masked_view_photometrics = "shared";  // shared|independent
  double jitter_brightness = 0.4, jitter_contrast = 0.4, jitter_saturation = 0.2;

  // heads / losses / updates
  int prototypes = 1024;
  int head_hidden = 256;
  double tau_teacher = 0.04;
  double tau_student = 0.1;
  double center_lambda = 0.9;
  double ema_momentum = 0.992;
  double w_classtoken = 1.0, w_season = 1.0, w_patch = 1.0;
  bool masked_globals_in_classtoken = true;

  // optimization
  double lr = 0.03;
  std::string lr_schedule = "constant";  // constant|cosine
  double lr_min = 0.0;
  double sgd_momentum = 0.9;
  int batch_size = 4;
  std::int64_t steps = 200;
  std::int64_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::uint64_t seed = 0;

  // stratified sampling
  int cell_size = 8;
  std::int64_t sample_count = 64;
  std::int64_t sample_count_quarterly = -1;  // -1: proportional share of sample_count
  std::int64_t sample_count_annual = -1;
  std::string class_weights;      // empty: uniform; else 7 comma-separated values
  std::string quarterly_regions;  // comma-separated region codes
  std::string raster_landcover, raster_elevation, raster_region;
  std::string images_dir;

  // evaluation / visualization
  int probe_epochs = 100;
  double probe_lr = 0.01;
  double probe_test_fraction = 0.25;
  int probe_crop = 0;  // 0: crop size recorded in the checkpoint
  int kmeans_k = 4;
  std::uint64_t kmeans_seed = 0;
  std::string eval_branch = "teacher";  // teacher|student

  void set(const std::string& key, const std::string& value);
  void load_file(const std::string& path);
  // Expands the model preset, derives defaulted fields, validates everything.
  void finalize();

  vit::ViTConfig vit_config() const;
  aug::AugmentConfig augment_config(bool phase2 = false) const;
  std::array<double, strata::kNumClasses> class_weight_array() const;
  std::function<bool(int)> quarterly_predicate() const;
};

}  // namespace geossl
