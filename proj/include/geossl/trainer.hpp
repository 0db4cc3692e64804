#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "geossl/augment.hpp"
#include "geossl/config.hpp"
#include "geossl/ssl.hpp"
#include "geossl/strata.hpp"
#include "geossl/tensor.hpp"
#include "geossl/vit.hpp"

namespace geossl::train {

struct LossReport {
  double l_classtoken = 0.0;
  double l_season = 0.0;
  double l_patch = 0.0;
  double l_total = 0.0;
  double teacher_entropy = 0.0;  // entropy of the batch-mean teacher class dist
};

struct TrainerState {
  vit::ViTParams student, teacher;
  ProjectionHeadT<float> student_class_head, student_patch_head;
  ProjectionHeadT<float> teacher_class_head, teacher_patch_head;
  Tensor center_class, center_patch;  // [K], never in the graph

  float ema_m = 0.992f;
  float tau_teacher = 0.04f;
  float tau_student = 0.1f;
  float center_lambda = 0.9f;
  float w_classtoken = 1.0f, w_season = 1.0f, w_patch = 1.0f;
  bool masked_in_classtoken = true;

  std::int64_t step = 0;
  Rng rng;
  Sgd opt{0.03f, 0.9f};

  // Stable name -> tensor registries (checkpoint keys, optimizer order).
  std::vector<std::pair<std::string, Tensor*>> student_params();
  std::vector<std::pair<std::string, Tensor*>> teacher_params();
};

TrainerState make_trainer(const RunConfig& cfg);

// Teacher parameters move toward the student by exponential moving average:
// theta_t <- m * theta_t + (1 - m) * theta_s, across backbone and both heads.
void ema_update(TrainerState& state);

// One optimization step over a batch of view bundles: teacher encodes the
// unmasked globals without recording gradients, the student encodes the
// masked globals, local crops and seasonal views; the three losses are
// combined, backpropagated through the student only, SGD applied, centers
// and teacher EMA updated, step counter incremented.
LossReport train_step(TrainerState& state, const std::vector<aug::ViewBundle>& batch);

double lr_at_step(const RunConfig& cfg, std::int64_t step);

struct PretrainResult {
  std::vector<LossReport> reports;
  std::string final_checkpoint;
  std::string metrics_csv;
};

// Full pretraining loop over a sample manifest: loads images, iterates the
// two-phase crop schedule, logs metrics per step, writes periodic and final
// checkpoints. Unresolvable images are skipped with a warning; more than 10%
// skipped aborts.
PretrainResult run_pretrain(const std::string& manifest_path, const RunConfig& cfg,
                            const std::string& out_dir,
                            const std::string& resume_checkpoint = "");

}  // namespace geossl::train
