#include "geossl/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "geossl/checkpoint.hpp"
#include "geossl/errors.hpp"
#include "geossl/fixtures.hpp"

using namespace geossl;
using namespace geossl::train;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.model = "custom";
  cfg.vit_layers = 1;
  cfg.vit_embed = 8;
  cfg.vit_hidden = 16;
  cfg.vit_heads = 2;
  cfg.global_size = 28;
  cfg.local_size = 28;
  cfg.prototypes = 8;
  cfg.head_hidden = 16;
  cfg.batch_size = 1;
  cfg.lr = 0.05;
  cfg.finalize();
  return cfg;
}

aug::SampleGroup tiny_group(std::uint64_t seed, bool seasonal) {
  aug::SampleGroup group;
  group.location_id = seed;
  group.base_image = fixtures::make_texture(0, 48, seed, 0);
  if (seasonal)
    for (int q = 1; q < 4; ++q)
      group.seasonal_images.push_back(fixtures::make_texture(0, 48, seed, q));
  return group;
}

std::vector<aug::ViewBundle> tiny_batch(const RunConfig& cfg, std::uint64_t seed, bool seasonal) {
  return {aug::build_view_bundle(tiny_group(seed, seasonal), cfg.augment_config(), seed)};
}

std::vector<float> snapshot(TrainerState& state, bool teacher) {
  std::vector<float> values;
  auto params = teacher ? state.teacher_params() : state.student_params();
  for (auto& [name, t] : params) values.insert(values.end(), t->data->begin(), t->data->end());
  return values;
}

}  // namespace

TEST(MakeTrainer, TeacherStartsAsStudentCopyWithoutGradients) {
  const RunConfig cfg = tiny_config();
  TrainerState state = make_trainer(cfg);
  auto student = state.student_params();
  auto teacher = state.teacher_params();
  ASSERT_EQ(student.size(), teacher.size());
  for (std::size_t i = 0; i < student.size(); ++i) {
    EXPECT_EQ(student[i].first, teacher[i].first);
    EXPECT_EQ(*student[i].second->data, *teacher[i].second->data);
    EXPECT_TRUE(student[i].second->requires_grad);
    EXPECT_FALSE(teacher[i].second->requires_grad);
    EXPECT_EQ(teacher[i].second->grad, nullptr);
  }
}

TEST(EmaUpdate, ArithmeticExample) {
  RunConfig cfg = tiny_config();
  TrainerState state = make_trainer(cfg);
  state.ema_m = 0.992f;
  for (auto& [name, t] : state.teacher_params())
    std::fill(t->data->begin(), t->data->end(), 1.0f);
  for (auto& [name, t] : state.student_params())
    std::fill(t->data->begin(), t->data->end(), 0.0f);
  ema_update(state);
  for (auto& [name, t] : state.teacher_params())
    for (float v : *t->data) EXPECT_FLOAT_EQ(v, 0.992f);
}

TEST(EmaUpdate, FixedPointWhenEqual) {
  RunConfig cfg = tiny_config();
  TrainerState state = make_trainer(cfg);
  const auto before = snapshot(state, true);
  ema_update(state);  // teacher == student at init
  EXPECT_EQ(snapshot(state, true), before);
}

TEST(EmaUpdate, ZeroMomentumCopiesStudent) {
  RunConfig cfg = tiny_config();
  TrainerState state = make_trainer(cfg);
  state.ema_m = 0.0f;
  for (auto& [name, t] : state.student_params())
    for (auto& v : *t->data) v += 0.25f;
  ema_update(state);
  EXPECT_EQ(snapshot(state, true), snapshot(state, false));
}

TEST(EmaUpdate, ConvexCombinationBound) {
  RunConfig cfg = tiny_config();
  TrainerState state = make_trainer(cfg);
  Rng rng(3);
  for (auto& [name, t] : state.student_params())
    for (auto& v : *t->data) v += static_cast<float>(rng.uniform(-0.5, 0.5));
  const auto teacher_before = snapshot(state, true);
  const auto student_now = snapshot(state, false);
  ema_update(state);
  const auto teacher_after = snapshot(state, true);
  for (std::size_t i = 0; i < teacher_after.size(); ++i) {
    const float lo = std::min(teacher_before[i], student_now[i]);
    const float hi = std::max(teacher_before[i], student_now[i]);
    ASSERT_GE(teacher_after[i], lo);
    ASSERT_LE(teacher_after[i], hi);
  }
}

TEST(TrainStep, TeacherChangesOnlyViaEma) {
  const RunConfig cfg = tiny_config();
  TrainerState state = make_trainer(cfg);
  for (int step = 0; step < 3; ++step) {
    const auto teacher_before = snapshot(state, true);
    train_step(state, tiny_batch(cfg, 100 + static_cast<std::uint64_t>(step), true));
    const auto student_after = snapshot(state, false);
    const auto teacher_after = snapshot(state, true);
    // Exactly the EMA recurrence, recomputed bitwise.
    for (std::size_t i = 0; i < teacher_after.size(); ++i)
      ASSERT_EQ(teacher_after[i],
                teacher_before[i] + (1.0f - state.ema_m) * (student_after[i] - teacher_before[i]));
    for (auto& [name, t] : state.teacher_params()) ASSERT_EQ(t->grad, nullptr);
  }
}

TEST(TrainStep, ReportSatisfiesTotalAdditivity) {
  const RunConfig cfg = tiny_config();
  TrainerState state = make_trainer(cfg);
  const LossReport report = train_step(state, tiny_batch(cfg, 7, true));
  EXPECT_NEAR(report.l_total, report.l_classtoken + report.l_season + report.l_patch, 1e-6);
  EXPECT_GE(report.l_classtoken, 0.0);
  EXPECT_GE(report.l_season, 0.0);
  EXPECT_GE(report.l_patch, 0.0);
  EXPECT_EQ(state.step, 1);
}

TEST(TrainStep, NoSeasonalViewsGiveZeroSeasonalLoss) {
  const RunConfig cfg = tiny_config();
  TrainerState state = make_trainer(cfg);
  const LossReport report = train_step(state, tiny_batch(cfg, 9, false));
  EXPECT_EQ(report.l_season, 0.0);
}

TEST(TrainStep, DeterministicReplay) {
  const RunConfig cfg = tiny_config();
  TrainerState a = make_trainer(cfg);
  TrainerState b = make_trainer(cfg);
  for (int step = 0; step < 3; ++step) {
    const auto batch = tiny_batch(cfg, 55 + static_cast<std::uint64_t>(step), true);
    const LossReport ra = train_step(a, batch);
    const LossReport rb = train_step(b, batch);
    EXPECT_EQ(ra.l_total, rb.l_total);
    EXPECT_EQ(ra.l_classtoken, rb.l_classtoken);
    EXPECT_EQ(ra.l_season, rb.l_season);
    EXPECT_EQ(ra.l_patch, rb.l_patch);
    EXPECT_EQ(ra.teacher_entropy, rb.teacher_entropy);
  }
  EXPECT_EQ(snapshot(a, false), snapshot(b, false));
  EXPECT_EQ(snapshot(a, true), snapshot(b, true));
}

TEST(TrainStep, NanLossAborts) {
  const RunConfig cfg = tiny_config();
  TrainerState state = make_trainer(cfg);
  (*state.student.patch_w.data)[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(train_step(state, tiny_batch(cfg, 3, false)), NumericalError);
}

TEST(LrSchedule, ConstantAndCosine) {
  RunConfig cfg = tiny_config();
  cfg.lr = 0.03;
  cfg.steps = 100;
  EXPECT_DOUBLE_EQ(lr_at_step(cfg, 0), 0.03);
  EXPECT_DOUBLE_EQ(lr_at_step(cfg, 99), 0.03);
  cfg.lr_schedule = "cosine";
  cfg.lr_min = 0.003;
  EXPECT_DOUBLE_EQ(lr_at_step(cfg, 0), 0.03);
  EXPECT_NEAR(lr_at_step(cfg, 100), 0.003, 1e-12);
  EXPECT_GT(lr_at_step(cfg, 25), lr_at_step(cfg, 75));
}

TEST(RunPretrain, SmokeRunWritesMetricsAndCheckpoint) {
  namespace fs = std::filesystem;
  const std::string root = (fs::temp_directory_path() / "geossl_pretrain_smoke").string();
  fs::remove_all(root);
  const auto corpus = fixtures::generate_pretrain_corpus(root, 6, 64, 0, 11);

  RunConfig cfg = tiny_config();
  cfg.steps = 6;
  cfg.batch_size = 2;
  const std::string out = root + "/run";
  const PretrainResult result = run_pretrain(corpus.manifest, cfg, out);
  EXPECT_EQ(result.reports.size(), 6u);
  EXPECT_TRUE(fs::exists(result.final_checkpoint));

  std::ifstream csv(result.metrics_csv);
  std::string line;
  int rows = 0;
  ASSERT_TRUE(std::getline(csv, line));
  EXPECT_EQ(line, "step,loss_total,loss_classtoken,loss_season,loss_patch,teacher_entropy,lr");
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 6);
  fs::remove_all(root);
}

TEST(RunPretrain, PhaseBoundaryChangesCropSize) {
  namespace fs = std::filesystem;
  const std::string root = (fs::temp_directory_path() / "geossl_pretrain_phase").string();
  fs::remove_all(root);
  const auto corpus = fixtures::generate_pretrain_corpus(root, 4, 64, 0, 13);

  RunConfig cfg = tiny_config();
  cfg.steps = 4;
  cfg.batch_size = 1;
  cfg.global_size_phase2 = 42;
  cfg.phase2_start_step = 2;
  cfg.finalize();
  // Positional embeddings interpolate across the boundary; the run completes
  // without shape errors.
  const PretrainResult result = run_pretrain(corpus.manifest, cfg, root + "/run");
  EXPECT_EQ(result.reports.size(), 4u);
  for (const auto& report : result.reports) EXPECT_TRUE(std::isfinite(report.l_total));
  fs::remove_all(root);
}

TEST(RunPretrain, AbortsWhenTooManySamplesUnreadable) {
  namespace fs = std::filesystem;
  const std::string root = (fs::temp_directory_path() / "geossl_pretrain_skip").string();
  fs::remove_all(root);
  const auto corpus = fixtures::generate_pretrain_corpus(root, 4, 64, 0, 17);
  for (int loc = 0; loc < 4; ++loc) {
    std::ofstream bad(corpus.images_dir + "/cell" + std::to_string(loc) + "_q1.ppm",
                      std::ios::trunc);
    bad << "junk";
  }
  RunConfig cfg = tiny_config();
  cfg.steps = 2;
  EXPECT_THROW(run_pretrain(corpus.manifest, cfg, root + "/run"), DataError);
  fs::remove_all(root);
}
