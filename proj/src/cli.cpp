#include "geossl/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <vector>

#include <CLI11.hpp>

#include "geossl/checkpoint.hpp"
#include "geossl/errors.hpp"
#include "geossl/eval.hpp"
#include "geossl/strata.hpp"

namespace geossl::cli {

namespace fs = std::filesystem;

std::string cmd_sample(const RunConfig& cfg, const std::string& out_dir) {
  if (cfg.raster_landcover.empty() || cfg.raster_elevation.empty() || cfg.raster_region.empty())
    throw ConfigError("sample: raster_landcover, raster_elevation and raster_region are required");

  const strata::Raster landcover = strata::read_raster(cfg.raster_landcover);
  const strata::Raster elevation = strata::read_raster(cfg.raster_elevation);
  const strata::Raster region = strata::read_raster(cfg.raster_region);

  std::vector<strata::GridCell> cells =
      strata::partition_grid(landcover.rows, landcover.cols, cfg.cell_size);
  for (auto& cell : cells) strata::assign_attributes(cell, landcover, elevation, region);
  std::vector<strata::GridCell> valid;
  for (const auto& cell : cells)
    if (cell.valid) valid.push_back(cell);

  auto [quarterly, annual] = strata::split_populations(valid, cfg.quarterly_predicate());

  // Per-population totals: explicit overrides, else a proportional split of
  // sample_count by population size.
  const std::int64_t n_q = static_cast<std::int64_t>(quarterly.size());
  const std::int64_t n_a = static_cast<std::int64_t>(annual.size());
  std::int64_t m_q = cfg.sample_count_quarterly;
  std::int64_t m_a = cfg.sample_count_annual;
  if (m_q < 0 && m_a < 0) {
    if (n_q + n_a == 0) {
      m_q = m_a = 0;
    } else {
      m_q = static_cast<std::int64_t>(
          std::llround(static_cast<double>(cfg.sample_count) * n_q / (n_q + n_a)));
      m_a = cfg.sample_count - m_q;
    }
  } else {
    if (m_q < 0) m_q = 0;
    if (m_a < 0) m_a = 0;
  }

  const auto weights = cfg.class_weight_array();
  std::vector<strata::ManifestRecord> records;
  std::printf("%-10s %-10s %10s %10s %10s\n", "population", "class", "cells", "target",
              "allocated");
  for (int pop = 0; pop < 2; ++pop) {
    const bool is_quarterly = pop == 0;
    const auto& members = is_quarterly ? quarterly : annual;
    const std::int64_t total = is_quarterly ? m_q : m_a;
    if (members.empty() || total == 0) continue;
    const strata::SamplingPlan plan = strata::build_plan(members, total, weights);
    const auto drawn = strata::draw_samples(
        plan, members, Rng::mix(cfg.seed, is_quarterly ? 0x51ull : 0x41ull, 0));

    std::array<std::int64_t, strata::kNumClasses> allocated{};
    for (const auto& [key, alloc] : plan.allocation)
      allocated[static_cast<std::size_t>(key.c)] += alloc;
    for (int c = 0; c < strata::kNumClasses; ++c)
      if (plan.class_population[static_cast<std::size_t>(c)] > 0)
        std::printf("%-10s %-10s %10lld %10lld %10lld\n", is_quarterly ? "quarterly" : "annual",
                    strata::class_name(c),
                    static_cast<long long>(plan.class_population[static_cast<std::size_t>(c)]),
                    static_cast<long long>(plan.class_target[static_cast<std::size_t>(c)]),
                    static_cast<long long>(allocated[static_cast<std::size_t>(c)]));

    for (const auto& sample : drawn) {
      strata::ManifestRecord rec;
      rec.cell_id = sample.cell_id;
      rec.stratum = sample.stratum;
      rec.quarterly = is_quarterly;
      rec.seed = Rng::mix(cfg.seed, static_cast<std::uint64_t>(sample.cell_id), 0xACE5ull);
      const int slots = is_quarterly ? 4 : 1;
      for (int s = 0; s < slots; ++s) {
        std::string path;
        if (!cfg.images_dir.empty()) {
          char name[64];
          if (is_quarterly)
            std::snprintf(name, sizeof(name), "cell%lld_q%d.ppm",
                          static_cast<long long>(sample.cell_id), s + 1);
          else
            std::snprintf(name, sizeof(name), "cell%lld_annual.ppm",
                          static_cast<long long>(sample.cell_id));
          const fs::path candidate = fs::path(cfg.images_dir) / name;
          if (fs::exists(candidate)) path = candidate.string();
        }
        rec.image_slots.push_back(path);
      }
      records.push_back(std::move(rec));
    }
  }

  fs::create_directories(out_dir);
  const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
  strata::write_manifest(manifest_path, records);
  std::printf("manifest: %s (%zu records)\n", manifest_path.c_str(), records.size());
  return manifest_path;
}

train::PretrainResult cmd_pretrain(const RunConfig& cfg, const std::string& manifest,
                                   const std::string& out_dir, const std::string& resume) {
  if (manifest.empty()) throw ConfigError("pretrain: a manifest path is required");
  train::PretrainResult result = train::run_pretrain(manifest, cfg, out_dir, resume);
  if (!result.reports.empty()) {
    const auto& last = result.reports.back();
    std::printf("pretrain: %zu steps, final loss_total=%.6f teacher_entropy=%.4f\n",
                result.reports.size(), last.l_total, last.teacher_entropy);
  }
  std::printf("metrics: %s\ncheckpoint: %s\n", result.metrics_csv.c_str(),
              result.final_checkpoint.c_str());
  return result;
}

ProbeReport cmd_probe(const RunConfig& cfg, const std::string& checkpoint,
                      const std::string& data_dir) {
  if (checkpoint.empty()) throw ConfigError("probe: a checkpoint path is required");
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  vit::ViTParams& net =
      cfg.eval_branch == "student" ? ckpt.state.student : ckpt.state.teacher;
  int crop = cfg.probe_crop;
  if (crop == 0) crop = static_cast<int>(ckpt.config.at("crop_size"));
  if (crop <= 0 || crop % net.config.patch_size != 0)
    throw ConfigError("probe: crop size must be a positive multiple of " +
                      std::to_string(net.config.patch_size));

  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(data_dir))
    if (entry.is_directory()) class_dirs.push_back(entry.path().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.size() < 2)
    throw std::invalid_argument("probe: at least two class subdirectories required in " + data_dir);

  std::vector<Image> train_images, test_images;
  std::vector<int> train_labels, test_labels;
  const int stride = std::max(2, static_cast<int>(std::lround(1.0 / cfg.probe_test_fraction)));
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[c]))
      if (entry.path().extension() == ".ppm") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    for (std::size_t i = 0; i < files.size(); ++i) {
      Image img = center_square(read_ppm(files[i]), crop);
      if (static_cast<int>(i) % stride == stride - 1) {
        test_images.push_back(std::move(img));
        test_labels.push_back(static_cast<int>(c));
      } else {
        train_images.push_back(std::move(img));
        train_labels.push_back(static_cast<int>(c));
      }
    }
  }
  if (train_images.empty() || test_images.empty())
    throw DataError("probe: not enough images for the train/test split in " + data_dir);

  const eval::FeatureMatrix train_features =
      eval::extract_features(train_images, net, eval::FeatureKind::class_token);
  const eval::FeatureMatrix test_features =
      eval::extract_features(test_images, net, eval::FeatureKind::class_token);
  const eval::ProbeResult probe =
      eval::train_probe(train_features, train_labels, cfg.probe_epochs, cfg.probe_lr);

  ProbeReport report;
  report.classes = static_cast<int>(class_dirs.size());
  report.train_count = static_cast<int>(train_images.size());
  report.test_count = static_cast<int>(test_images.size());
  report.train_oa = probe.train_accuracy;
  report.test_oa = eval::probe_accuracy(probe.model, test_features, test_labels);
  std::printf("probe: classes=%d train_n=%d test_n=%d train_oa=%.4f test_oa=%.4f\n",
              report.classes, report.train_count, report.test_count, report.train_oa,
              report.test_oa);
  return report;
}

std::string cmd_visualize(const RunConfig& cfg, const std::string& checkpoint,
                          const std::string& input, const std::string& mode,
                          const std::string& out_dir) {
  if (input.empty()) throw ConfigError("visualize: an input path is required");
  fs::create_directories(out_dir);
  if (mode == "curves") {
    const std::string out = (fs::path(out_dir) / "curves.svg").string();
    eval::emit_curves(input, out);
    std::printf("curves: %s\n", out.c_str());
    return out;
  }
  if (mode != "pca3" && mode != "cluster")
    throw ConfigError("visualize: mode must be pca3|cluster|curves");
  if (checkpoint.empty()) throw ConfigError("visualize: a checkpoint path is required");

  LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  vit::ViTParams& net =
      cfg.eval_branch == "student" ? ckpt.state.student : ckpt.state.teacher;
  const Image img = read_ppm(input);
  const int patch = net.config.patch_size;
  if (img.height != img.width || img.height % patch != 0)
    throw ConfigError("visualize: image side must be a square multiple of " +
                      std::to_string(patch) + ", got " + std::to_string(img.height) + "x" +
                      std::to_string(img.width));
  const int grid = img.height / patch;

  const eval::FeatureMatrix features =
      eval::extract_features({img}, net, eval::FeatureKind::patch_tokens);
  Image map;
  std::string out;
  if (mode == "pca3") {
    map = eval::render_pca_map(features, grid);
    out = (fs::path(out_dir) / "feature_pca3.ppm").string();
  } else {
    map = eval::render_cluster_map(features, grid, cfg.kmeans_k, cfg.kmeans_seed);
    out = (fs::path(out_dir) / "feature_clusters.ppm").string();
  }
  write_ppm(out, map);
  std::printf("%s map: %s (%dx%d)\n", mode.c_str(), out.c_str(), grid, grid);
  return out;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Self-supervised geospatial pretraining pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", model;
  std::int64_t seed = -1;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--seed", seed, "override the run seed");
  app.add_option("--model", model, "model size: small|base|large|huge|giant|custom");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--set", overrides, "override a single config key, e.g. --set lr=0.01");

  auto* sample = app.add_subcommand("sample", "stratified grid sampling into a manifest");
  std::string landcover, elevation, region, images;
  sample->add_option("--landcover", landcover, "land-cover raster");
  sample->add_option("--elevation", elevation, "elevation raster");
  sample->add_option("--region", region, "region raster");
  sample->add_option("--images", images, "directory of per-cell images");

  auto* pretrain = app.add_subcommand("pretrain", "teacher-student pretraining");
  std::string manifest, resume;
  pretrain->add_option("--manifest", manifest, "sample manifest (JSON Lines)")->required();
  pretrain->add_option("--resume", resume, "checkpoint to resume from");

  auto* probe = app.add_subcommand("probe", "frozen-backbone linear probe");
  std::string checkpoint, data_dir;
  probe->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  probe->add_option("--data", data_dir, "class-per-subdirectory image folder")->required();

  auto* visualize = app.add_subcommand("visualize", "feature maps and training curves");
  std::string vis_checkpoint, vis_input, vis_mode = "pca3";
  visualize->add_option("--checkpoint", vis_checkpoint, "model checkpoint");
  visualize->add_option("--input", vis_input, "input image (pca3|cluster) or metrics CSV (curves)")
      ->required();
  visualize->add_option("--mode", vis_mode, "pca3|cluster|curves");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!model.empty()) cfg.model = model;
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (sample->parsed()) {
      if (!landcover.empty()) cfg.raster_landcover = landcover;
      if (!elevation.empty()) cfg.raster_elevation = elevation;
      if (!region.empty()) cfg.raster_region = region;
      if (!images.empty()) cfg.images_dir = images;
    }
    cfg.finalize();

    if (sample->parsed()) {
      cmd_sample(cfg, out_dir);
    } else if (pretrain->parsed()) {
      cmd_pretrain(cfg, manifest, out_dir, resume);
    } else if (probe->parsed()) {
      cmd_probe(cfg, checkpoint, data_dir);
    } else if (visualize->parsed()) {
      cmd_visualize(cfg, vis_checkpoint, vis_input, vis_mode, out_dir);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace geossl::cli
