#include "geossl/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>

#include "geossl/checkpoint.hpp"
#include "geossl/errors.hpp"

namespace geossl::train {

namespace {

Tensor clone_detached(const Tensor& t) {
  return Tensor::from(t.shape, *t.data, false);
}

void copy_structure_detached(vit::ViTParams& dst, vit::ViTParams& src) {
  dst = src;
  dst.for_each([](const std::string&, Tensor& t) {
    t = clone_detached(t);
  });
}

ProjectionHeadT<float> clone_head_detached(ProjectionHeadT<float>& src) {
  ProjectionHeadT<float> dst = src;
  dst.for_each([](const std::string&, Tensor& t) { t = clone_detached(t); });
  return dst;
}

void append_params(std::vector<std::pair<std::string, Tensor*>>& out,
                   const std::string& prefix, vit::ViTParams& backbone) {
  backbone.for_each([&](const std::string& name, Tensor& t) {
    out.emplace_back(prefix + name, &t);
  });
}

void append_params(std::vector<std::pair<std::string, Tensor*>>& out,
                   const std::string& prefix, ProjectionHeadT<float>& head) {
  head.for_each([&](const std::string& name, Tensor& t) {
    out.emplace_back(prefix + name, &t);
  });
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> TrainerState::student_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  append_params(out, "backbone.", student);
  append_params(out, "class_head.", student_class_head);
  append_params(out, "patch_head.", student_patch_head);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> TrainerState::teacher_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  append_params(out, "backbone.", teacher);
  append_params(out, "class_head.", teacher_class_head);
  append_params(out, "patch_head.", teacher_patch_head);
  return out;
}

TrainerState make_trainer(const RunConfig& cfg) {
  const vit::ViTConfig vc = cfg.vit_config();
  vc.validate();
  TrainerState state;
  state.rng = Rng(cfg.seed);
  state.student = vit::ViTParams::init(vc, state.rng, true);
  state.student_class_head = ProjectionHeadT<float>::init(
      vc.embed_dim, cfg.head_hidden, cfg.prototypes, state.rng, true);
  state.student_patch_head = ProjectionHeadT<float>::init(
      vc.embed_dim, cfg.head_hidden, cfg.prototypes, state.rng, true);
  copy_structure_detached(state.teacher, state.student);
  state.teacher_class_head = clone_head_detached(state.student_class_head);
  state.teacher_patch_head = clone_head_detached(state.student_patch_head);
  state.center_class = Tensor::zeros({cfg.prototypes});
  state.center_patch = Tensor::zeros({cfg.prototypes});
  state.ema_m = static_cast<float>(cfg.ema_momentum);
  state.tau_teacher = static_cast<float>(cfg.tau_teacher);
  state.tau_student = static_cast<float>(cfg.tau_student);
  state.center_lambda = static_cast<float>(cfg.center_lambda);
  state.w_classtoken = static_cast<float>(cfg.w_classtoken);
  state.w_season = static_cast<float>(cfg.w_season);
  state.w_patch = static_cast<float>(cfg.w_patch);
  state.masked_in_classtoken = cfg.masked_globals_in_classtoken;
  state.opt = Sgd(static_cast<float>(cfg.lr), static_cast<float>(cfg.sgd_momentum));
  return state;
}

void ema_update(TrainerState& state) {
  const float m = state.ema_m;
  auto student = state.student_params();
  auto teacher = state.teacher_params();
  if (student.size() != teacher.size())
    throw std::logic_error("ema_update: registry size mismatch");
  for (std::size_t i = 0; i < student.size(); ++i) {
    Tensor& s = *student[i].second;
    Tensor& t = *teacher[i].second;
    if (s.shape != t.shape) throw std::logic_error("ema_update: shape mismatch");
    float* pt = t.ptr();
    const float* ps = s.ptr();
    const std::size_t n = t.numel();
    // theta_t + (1-m)(theta_s - theta_t): algebraically m*theta_t +
    // (1-m)*theta_s, but an exact fixed point when the branches agree.
    for (std::size_t j = 0; j < n; ++j) pt[j] += (1.0f - m) * (ps[j] - pt[j]);
  }
}

LossReport train_step(TrainerState& state, const std::vector<aug::ViewBundle>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");

  std::vector<Tensor> lc_terms, ls_terms, lp_terms;
  std::vector<Tensor> teacher_class_logits, teacher_patch_logits, teacher_class_dists;

  for (const aug::ViewBundle& bundle : batch) {
    if (bundle.teacher_globals.size() != 2 || bundle.masked_globals.size() != 2)
      throw std::invalid_argument("train_step: bundle must carry 2 teacher and 2 masked globals");

    // Teacher branch: unmasked globals, no gradient recorded.
    std::vector<Tensor> p_teacher(2);
    std::vector<Tensor> teacher_mask_rows(2);
    {
      NoGradGuard no_grad;
      for (int i = 0; i < 2; ++i) {
        vit::Encoded enc = vit::vit_forward(bundle.teacher_globals[static_cast<std::size_t>(i)],
                                            state.teacher);
        Tensor logits = head_logits(enc.class_token, state.teacher_class_head);
        teacher_class_logits.push_back(logits);
        p_teacher[static_cast<std::size_t>(i)] =
            softmax_temp(sub_rowvec(logits, state.center_class), state.tau_teacher);
        teacher_class_dists.push_back(p_teacher[static_cast<std::size_t>(i)]);

        const auto& mask = bundle.masked_globals[static_cast<std::size_t>(i)].mask;
        if (!mask.empty()) {
          Tensor rows = gather_rows(enc.patch_tokens, mask);
          Tensor patch_logits = head_logits(rows, state.teacher_patch_head);
          teacher_patch_logits.push_back(patch_logits);
          teacher_mask_rows[static_cast<std::size_t>(i)] =
              softmax_temp(sub_rowvec(patch_logits, state.center_patch), state.tau_teacher);
        }
      }
    }

    // Student branch: masked globals, locals, seasonal views.
    std::vector<Tensor> p_masked(2);
    std::vector<Tensor> student_mask_rows(2);
    for (int i = 0; i < 2; ++i) {
      const aug::MaskedView& view = bundle.masked_globals[static_cast<std::size_t>(i)];
      vit::Encoded enc =
          vit::vit_forward(view.image, state.student, view.mask.empty() ? nullptr : &view.mask);
      p_masked[static_cast<std::size_t>(i)] =
          softmax_temp(head_logits(enc.class_token, state.student_class_head), state.tau_student);
      if (!view.mask.empty()) {
        Tensor rows = gather_rows(enc.patch_tokens, view.mask);
        student_mask_rows[static_cast<std::size_t>(i)] =
            softmax_temp(head_logits(rows, state.student_patch_head), state.tau_student);
      }
    }
    std::vector<Tensor> p_locals;
    for (const Image& local : bundle.local_crops) {
      vit::Encoded enc = vit::vit_forward(local, state.student);
      p_locals.push_back(
          softmax_temp(head_logits(enc.class_token, state.student_class_head), state.tau_student));
    }
    std::vector<Tensor> p_seasonal;
    for (const Image& seasonal : bundle.seasonal_views) {
      vit::Encoded enc = vit::vit_forward(seasonal, state.student);
      p_seasonal.push_back(
          softmax_temp(head_logits(enc.class_token, state.student_class_head), state.tau_student));
    }

    lc_terms.push_back(
        loss_classtoken(p_teacher, p_locals, p_masked, state.masked_in_classtoken));
    ls_terms.push_back(loss_seasonal(p_teacher, p_seasonal));
    lp_terms.push_back(loss_patch(teacher_mask_rows, student_mask_rows));
  }

  Tensor l_class = detail_loss::mean_of(lc_terms);
  Tensor l_season = detail_loss::mean_of(ls_terms);
  Tensor l_patch = detail_loss::mean_of(lp_terms);
  Tensor l_total =
      total_loss(l_class, l_season, l_patch, state.w_classtoken, state.w_season, state.w_patch);

  LossReport report;
  report.l_classtoken = static_cast<double>(l_class.item());
  report.l_season = static_cast<double>(l_season.item());
  report.l_patch = static_cast<double>(l_patch.item());
  report.l_total = static_cast<double>(l_total.item());
  report.teacher_entropy = mean_distribution_entropy(teacher_class_dists);
  if (!std::isfinite(report.l_total))
    throw NumericalError("train_step: non-finite loss at step " + std::to_string(state.step) +
                         " (classtoken=" + std::to_string(report.l_classtoken) +
                         ", season=" + std::to_string(report.l_season) +
                         ", patch=" + std::to_string(report.l_patch) + ")");

  backward(l_total);
  std::vector<Tensor*> params;
  for (auto& [name, t] : state.student_params()) params.push_back(t);
  state.opt.step(params);

  center_update(state.center_class, teacher_class_logits, state.center_lambda);
  center_update(state.center_patch, teacher_patch_logits, state.center_lambda);
  ema_update(state);
  ++state.step;
  return report;
}

double lr_at_step(const RunConfig& cfg, std::int64_t step) {
  if (cfg.lr_schedule == "constant" || cfg.steps <= 1) return cfg.lr;
  const double t = static_cast<double>(step) / static_cast<double>(cfg.steps);
  return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

namespace {

struct LoadedSample {
  aug::SampleGroup group;
  std::uint64_t seed = 0;
};

std::vector<LoadedSample> load_samples(const std::string& manifest_path, const RunConfig& cfg) {
  namespace fs = std::filesystem;
  const auto records = strata::read_manifest(manifest_path);
  const fs::path base_dir = fs::path(manifest_path).parent_path();
  const int min_side = std::max(
      cfg.global_size, cfg.phase2_start_step > 0 ? cfg.global_size_phase2 : 0);

  auto resolve = [&](const std::string& slot) {
    const fs::path p(slot);
    return p.is_absolute() ? p.string() : (base_dir / p).string();
  };

  std::vector<LoadedSample> samples;
  std::size_t skipped = 0;
  for (const auto& rec : records) {
    std::string base_slot;
    for (const std::string& slot : rec.image_slots)
      if (!slot.empty()) {
        base_slot = slot;
        break;
      }
    if (base_slot.empty()) {
      std::cerr << "warning: cell " << rec.cell_id << ": no image slots; skipped\n";
      ++skipped;
      continue;
    }
    LoadedSample sample;
    sample.seed = rec.seed;
    sample.group.location_id = static_cast<std::uint64_t>(rec.cell_id);
    try {
      sample.group.base_image = read_ppm(resolve(base_slot));
    } catch (const DataError& e) {
      std::cerr << "warning: cell " << rec.cell_id << ": " << e.what() << "; skipped\n";
      ++skipped;
      continue;
    }
    if (sample.group.base_image.height < min_side || sample.group.base_image.width < min_side) {
      std::cerr << "warning: cell " << rec.cell_id << ": image smaller than the global crop; skipped\n";
      ++skipped;
      continue;
    }
    if (rec.quarterly && rec.image_slots.size() == 4) {
      std::vector<Image> seasonal;
      bool complete = true;
      for (std::size_t q = 1; q < 4 && complete; ++q) {
        if (rec.image_slots[q].empty()) {
          complete = false;
          break;
        }
        try {
          seasonal.push_back(read_ppm(resolve(rec.image_slots[q])));
        } catch (const DataError& e) {
          std::cerr << "warning: cell " << rec.cell_id << ": " << e.what()
                    << "; seasonal views dropped\n";
          complete = false;
        }
      }
      if (complete && seasonal.size() == 3) sample.group.seasonal_images = std::move(seasonal);
    }
    samples.push_back(std::move(sample));
  }

  if (records.empty()) throw DataError("pretrain: empty manifest " + manifest_path);
  if (samples.empty()) throw DataError("pretrain: no readable samples in " + manifest_path);
  if (10 * skipped > records.size())
    throw DataError("pretrain: " + std::to_string(skipped) + " of " +
                    std::to_string(records.size()) + " samples unreadable (>10%)");
  return samples;
}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::int64_t epoch, std::size_t n) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(Rng::mix(seed, 0x45504F43ull, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(perm.begin(), perm.end());
  return perm;
}

void write_metrics_row(std::ofstream& csv, std::int64_t step, const LossReport& report,
                       double lr) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                static_cast<long long>(step), report.l_total, report.l_classtoken,
                report.l_season, report.l_patch, report.teacher_entropy, lr);
  csv << buf;
}

}  // namespace

PretrainResult run_pretrain(const std::string& manifest_path, const RunConfig& cfg,
                            const std::string& out_dir, const std::string& resume_checkpoint) {
  namespace fs = std::filesystem;
  const auto samples = load_samples(manifest_path, cfg);

  TrainerState state;
  if (resume_checkpoint.empty()) {
    state = make_trainer(cfg);
  } else {
    LoadedCheckpoint ckpt = load_checkpoint(resume_checkpoint);
    check_checkpoint_compatible(ckpt, cfg);
    state = std::move(ckpt.state);
    if (state.step > cfg.steps)
      throw ConfigError("pretrain: checkpoint step " + std::to_string(state.step) +
                        " already beyond steps=" + std::to_string(cfg.steps));
  }

  fs::create_directories(out_dir);
  PretrainResult result;
  result.metrics_csv = (fs::path(out_dir) / "metrics.csv").string();
  std::ofstream csv(result.metrics_csv);
  if (!csv) throw DataError("pretrain: cannot write " + result.metrics_csv);
  csv << "step,loss_total,loss_classtoken,loss_season,loss_patch,teacher_entropy,lr\n";

  const aug::AugmentConfig phase1 = cfg.augment_config(false);
  const aug::AugmentConfig phase2 = cfg.augment_config(true);
  const bool has_phase2 = cfg.phase2_start_step > 0;
  const std::size_t n = samples.size();

  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> perm;

  while (state.step < cfg.steps) {
    const std::int64_t step_index = state.step;
    const aug::AugmentConfig& acfg =
        (has_phase2 && step_index >= cfg.phase2_start_step) ? phase2 : phase1;

    std::vector<aug::ViewBundle> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int slot = 0; slot < cfg.batch_size; ++slot) {
      const std::int64_t global_pos =
          step_index * cfg.batch_size + slot;
      const std::int64_t epoch = global_pos / static_cast<std::int64_t>(n);
      const std::size_t pos = static_cast<std::size_t>(global_pos % static_cast<std::int64_t>(n));
      if (epoch != cached_epoch) {
        perm = epoch_permutation(cfg.seed, epoch, n);
        cached_epoch = epoch;
      }
      const LoadedSample& sample = samples[perm[pos]];
      const std::uint64_t bundle_seed =
          Rng::mix(sample.seed, static_cast<std::uint64_t>(step_index + 1),
                   static_cast<std::uint64_t>(slot));
      batch.push_back(aug::build_view_bundle(sample.group, acfg, bundle_seed));
    }

    state.opt.set_lr(static_cast<float>(lr_at_step(cfg, step_index)));
    const LossReport report = train_step(state, batch);
    result.reports.push_back(report);
    write_metrics_row(csv, state.step, report, state.opt.lr());
    csv.flush();

    if (cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0 &&
        state.step < cfg.steps) {
      const std::string path =
          (fs::path(out_dir) / ("checkpoint_step" + std::to_string(state.step) + ".ckpt")).string();
      save_checkpoint(path, state, cfg);
    }
  }

  result.final_checkpoint = (fs::path(out_dir) / "checkpoint_final.ckpt").string();
  save_checkpoint(result.final_checkpoint, state, cfg);
  return result;
}

}  // namespace geossl::train
