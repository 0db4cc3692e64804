#include "geossl/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "geossl/errors.hpp"

namespace geossl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::int64_t v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size() || !std::isfinite(v)) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + value + "'");
}

void check(bool cond, const std::string& message) {
  if (!cond) throw ConfigError("config: " + message);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "model") model = value;
  else if (key == "vit_layers") vit_layers = static_cast<int>(parse_int(key, value));
  else if (key == "vit_embed") vit_embed = static_cast<int>(parse_int(key, value));
  else if (key == "vit_hidden") vit_hidden = static_cast<int>(parse_int(key, value));
  else if (key == "vit_heads") vit_heads = static_cast<int>(parse_int(key, value));
  else if (key == "patch_size") patch_size = static_cast<int>(parse_int(key, value));
  else if (key == "image_size") image_size = static_cast<int>(parse_int(key, value));
  else if (key == "global_size") global_size = static_cast<int>(parse_int(key, value));
  else if (key == "local_size") local_size = static_cast<int>(parse_int(key, value));
  else if (key == "global_size_phase2") global_size_phase2 = static_cast<int>(parse_int(key, value));
  else if (key == "phase2_start_step") phase2_start_step = parse_int(key, value);
  else if (key == "global_scale_lo") global_scale_lo = parse_double(key, value);
  else if (key == "global_scale_hi") global_scale_hi = parse_double(key, value);
  else if (key == "local_scale_lo") local_scale_lo = parse_double(key, value);
  else if (key == "local_scale_hi") local_scale_hi = parse_double(key, value);
  else if (key == "mask_ratio_lo") mask_ratio_lo = parse_double(key, value);
  else if (key == "mask_ratio_hi") mask_ratio_hi = parse_double(key, value);
  else if (key == "mask_fill") mask_fill = value;
  else if (key == "masked_view_photometrics") masked_view_photometrics = value;
  else if (key == "jitter_brightness") jitter_brightness = parse_double(key, value);
  else if (key == "jitter_contrast") jitter_contrast = parse_double(key, value);
  else if (key == "jitter_saturation") jitter_saturation = parse_double(key, value);
  else if (key == "prototypes") prototypes = static_cast<int>(parse_int(key, value));
  else if (key == "head_hidden") head_hidden = static_cast<int>(parse_int(key, value));
  else if (key == "tau_teacher") tau_teacher = parse_double(key, value);
  else if (key == "tau_student") tau_student = parse_double(key, value);
  else if (key == "center_lambda") center_lambda = parse_double(key, value);
  else if (key == "ema_momentum") ema_momentum = parse_double(key, value);
  else if (key == "w_classtoken") w_classtoken = parse_double(key, value);
  else if (key == "w_season") w_season = parse_double(key, value);
  else if (key == "w_patch") w_patch = parse_double(key, value);
  else if (key == "masked_globals_in_classtoken") masked_globals_in_classtoken = parse_bool(key, value);
  else if (key == "lr") lr = parse_double(key, value);
  else if (key == "lr_schedule") lr_schedule = value;
  else if (key == "lr_min") lr_min = parse_double(key, value);
  else if (key == "sgd_momentum") sgd_momentum = parse_double(key, value);
  else if (key == "batch_size") batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "steps") steps = parse_int(key, value);
  else if (key == "checkpoint_interval") checkpoint_interval = parse_int(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "cell_size") cell_size = static_cast<int>(parse_int(key, value));
  else if (key == "sample_count") sample_count = parse_int(key, value);
  else if (key == "sample_count_quarterly") sample_count_quarterly = parse_int(key, value);
  else if (key == "sample_count_annual") sample_count_annual = parse_int(key, value);
  else if (key == "class_weights") class_weights = value;
  else if (key == "quarterly_regions") quarterly_regions = value;
  else if (key == "raster_landcover") raster_landcover = value;
  else if (key == "raster_elevation") raster_elevation = value;
  else if (key == "raster_region") raster_region = value;
  else if (key == "images_dir") images_dir = value;
  else if (key == "probe_epochs") probe_epochs = static_cast<int>(parse_int(key, value));
  else if (key == "probe_lr") probe_lr = parse_double(key, value);
  else if (key == "probe_test_fraction") probe_test_fraction = parse_double(key, value);
  else if (key == "probe_crop") probe_crop = static_cast<int>(parse_int(key, value));
  else if (key == "kmeans_k") kmeans_k = static_cast<int>(parse_int(key, value));
  else if (key == "kmeans_seed") kmeans_seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "eval_branch") eval_branch = value;
  else throw ConfigError("config: unknown key '" + key + "'");
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::finalize() {
  static const std::unordered_set<std::string> sizes = {"small", "base", "large",
                                                        "huge", "giant", "custom"};
  check(sizes.count(model) == 1, "model must be one of small|base|large|huge|giant|custom");
  if (model != "custom") {
    const vit::ViTConfig preset = vit::preset(model);
    vit_layers = preset.layers;
    vit_embed = preset.embed_dim;
    vit_hidden = preset.hidden_dim;
    vit_heads = preset.heads;
  }
  if (image_size == 0) image_size = global_size;

  check(vit_layers >= 0, "vit_layers must be nonnegative");
  check(vit_embed > 0 && vit_hidden > 0 && vit_heads > 0, "vit dimensions must be positive");
  check(vit_embed % vit_heads == 0, "vit_embed must be divisible by vit_heads");
  check(patch_size > 0, "patch_size must be positive");
  check(image_size > 0 && image_size % patch_size == 0,
        "image_size must be a positive multiple of patch_size");
  check(global_size > 0 && global_size % patch_size == 0,
        "global_size must be a positive multiple of patch_size");
  check(local_size >= patch_size && local_size % patch_size == 0,
        "local_size must be a multiple of patch_size, at least one patch");
  if (phase2_start_step > 0 || global_size_phase2 > 0) {
    check(phase2_start_step > 0, "phase2_start_step must be positive when phase 2 is enabled");
    check(global_size_phase2 > 0 && global_size_phase2 % patch_size == 0,
          "global_size_phase2 must be a positive multiple of patch_size");
  }
  check(global_scale_lo > 0 && global_scale_lo <= global_scale_hi && global_scale_hi <= 1.0,
        "global scale range must satisfy 0 < lo <= hi <= 1");
  check(local_scale_lo > 0 && local_scale_lo <= local_scale_hi && local_scale_hi <= 1.0,
        "local scale range must satisfy 0 < lo <= hi <= 1");
  check(mask_ratio_lo >= 0 && mask_ratio_lo <= mask_ratio_hi && mask_ratio_hi < 1.0,
        "mask ratio range must satisfy 0 <= lo <= hi < 1");
  check(mask_fill == "mean" || mask_fill == "zero", "mask_fill must be mean|zero");
  check(masked_view_photometrics == "shared" || masked_view_photometrics == "independent",
        "masked_view_photometrics must be shared|independent");
  for (double d : {jitter_brightness, jitter_contrast, jitter_saturation})
    check(d >= 0 && d < 1, "jitter deltas must lie in [0, 1)");
  check(prototypes >= 2, "prototypes must be at least 2");
  check(head_hidden > 0, "head_hidden must be positive");
  check(tau_teacher > 0 && tau_student > 0, "temperatures must be positive");
  check(center_lambda >= 0 && center_lambda < 1, "center_lambda must lie in [0, 1)");
  check(ema_momentum > 0 && ema_momentum < 1, "ema_momentum must lie in (0, 1)");
  check(w_classtoken >= 0 && w_season >= 0 && w_patch >= 0, "loss weights must be nonnegative");
  check(lr > 0, "lr must be positive");
  check(lr_min >= 0 && lr_min <= lr, "lr_min must lie in [0, lr]");
  check(lr_schedule == "constant" || lr_schedule == "cosine",
        "lr_schedule must be constant|cosine");
  check(sgd_momentum >= 0 && sgd_momentum < 1, "sgd_momentum must lie in [0, 1)");
  check(batch_size >= 1, "batch_size must be at least 1");
  check(steps >= 0, "steps must be nonnegative");
  check(checkpoint_interval >= 0, "checkpoint_interval must be nonnegative");
  check(cell_size > 0, "cell_size must be positive");
  check(sample_count >= 0, "sample_count must be nonnegative");
  check(probe_epochs >= 0, "probe_epochs must be nonnegative");
  check(probe_lr > 0, "probe_lr must be positive");
  check(probe_test_fraction > 0 && probe_test_fraction < 1,
        "probe_test_fraction must lie in (0, 1)");
  check(probe_crop >= 0, "probe_crop must be nonnegative");
  check(probe_crop == 0 || probe_crop % patch_size == 0,
        "probe_crop must be a multiple of patch_size");
  check(kmeans_k >= 3 && kmeans_k <= 5, "kmeans_k must lie in [3, 5]");
  check(eval_branch == "teacher" || eval_branch == "student",
        "eval_branch must be teacher|student");
  class_weight_array();  // validates the weight list
  quarterly_predicate();
}

vit::ViTConfig RunConfig::vit_config() const {
  vit::ViTConfig cfg;
  cfg.layers = vit_layers;
  cfg.embed_dim = vit_embed;
  cfg.hidden_dim = vit_hidden;
  cfg.heads = vit_heads;
  cfg.patch_size = patch_size;
  cfg.image_size = image_size;
  return cfg;
}

aug::AugmentConfig RunConfig::augment_config(bool phase2) const {
  aug::AugmentConfig cfg;
  cfg.global_size = (phase2 && global_size_phase2 > 0) ? global_size_phase2 : global_size;
  cfg.local_size = local_size;
  cfg.patch_size = patch_size;
  cfg.global_scale_lo = static_cast<float>(global_scale_lo);
  cfg.global_scale_hi = static_cast<float>(global_scale_hi);
  cfg.local_scale_lo = static_cast<float>(local_scale_lo);
  cfg.local_scale_hi = static_cast<float>(local_scale_hi);
  cfg.mask_ratio_lo = static_cast<float>(mask_ratio_lo);
  cfg.mask_ratio_hi = static_cast<float>(mask_ratio_hi);
  cfg.mask_fill_zero = mask_fill == "zero";
  cfg.shared_masked_photometrics = masked_view_photometrics == "shared";
  cfg.jitter.brightness = static_cast<float>(jitter_brightness);
  cfg.jitter.contrast = static_cast<float>(jitter_contrast);
  cfg.jitter.saturation = static_cast<float>(jitter_saturation);
  return cfg;
}

std::array<double, strata::kNumClasses> RunConfig::class_weight_array() const {
  std::array<double, strata::kNumClasses> weights;
  if (class_weights.empty()) {
    weights.fill(1.0 / strata::kNumClasses);
    return weights;
  }
  std::stringstream ss(class_weights);
  std::string token;
  int i = 0;
  double sum = 0.0;
  while (std::getline(ss, token, ',')) {
    if (i >= strata::kNumClasses) throw ConfigError("config: class_weights expects 7 values");
    const double w = parse_double("class_weights", trim(token));
    if (w < 0) throw ConfigError("config: class weights must be nonnegative");
    weights[static_cast<std::size_t>(i++)] = w;
    sum += w;
  }
  if (i != strata::kNumClasses) throw ConfigError("config: class_weights expects 7 values");
  if (sum <= 0) throw ConfigError("config: class weights sum to zero");
  for (double& w : weights) w /= sum;
  return weights;
}

std::function<bool(int)> RunConfig::quarterly_predicate() const {
  std::unordered_set<int> codes;
  std::stringstream ss(quarterly_regions);
  std::string token;
  while (std::getline(ss, token, ',')) {
    token = trim(token);
    if (token.empty()) continue;
    codes.insert(static_cast<int>(parse_int("quarterly_regions", token)));
  }
  return [codes = std::move(codes)](int region) { return codes.count(region) > 0; };
}

}  // namespace geossl
