#include "geossl/fixtures.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <vector>

#include "geossl/rng.hpp"
#include "geossl/strata.hpp"

namespace geossl::fixtures {

namespace fs = std::filesystem;

namespace {

// Shared across classes so color carries no class signal.
constexpr float kSeasonGain[4][3] = {{1.00f, 1.00f, 1.00f},
                                     {0.90f, 1.07f, 0.94f},
                                     {1.08f, 0.97f, 0.88f},
                                     {0.94f, 0.93f, 1.10f}};

std::vector<float> stripe_field(int size, Rng& rng) {
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double freq = rng.uniform(3.0, 7.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double cx = std::cos(theta), sx = std::sin(theta);
  std::vector<float> field(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double t = (x * cx + y * sx) / size;
      field[static_cast<std::size_t>(y) * size + x] =
          static_cast<float>(std::sin(2.0 * std::numbers::pi * freq * t + phase));
    }
  return field;
}

std::vector<float> blob_field(int size, Rng& rng) {
  struct Blob {
    double cy, cx, sigma, amp;
  };
  std::vector<Blob> blobs(9);
  for (auto& b : blobs) {
    b.cy = rng.uniform(0.0, size);
    b.cx = rng.uniform(0.0, size);
    b.sigma = rng.uniform(size / 12.0, size / 5.0);
    b.amp = rng.bernoulli(0.5) ? 1.0 : -1.0;
  }
  std::vector<float> field(static_cast<std::size_t>(size) * size, 0.0f);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double v = 0.0;
      for (const Blob& b : blobs) {
        const double dy = y - b.cy, dx = x - b.cx;
        v += b.amp * std::exp(-(dy * dy + dx * dx) / (2.0 * b.sigma * b.sigma));
      }
      field[static_cast<std::size_t>(y) * size + x] = static_cast<float>(v);
    }
  return field;
}

}  // namespace

Image make_texture(int family, int size, std::uint64_t seed, int quarter) {
  Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(family), 0x7e87));
  std::vector<float> field = family == 0 ? stripe_field(size, rng) : blob_field(size, rng);

  // Normalize the field to zero mean, unit variance, then map both families
  // onto the same brightness band.
  double mean = 0.0;
  for (float v : field) mean += v;
  mean /= static_cast<double>(field.size());
  double var = 0.0;
  for (float v : field) var += (v - mean) * (v - mean);
  var /= static_cast<double>(field.size());
  const double inv_std = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;

  const int q = quarter < 0 ? 0 : quarter % 4;
  Image img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double unit = (field[static_cast<std::size_t>(y) * size + x] - mean) * inv_std;
      for (int c = 0; c < 3; ++c) {
        const double noise = rng.normal(0.0, 0.015);
        const double v = (0.5 + 0.18 * unit + noise) * kSeasonGain[q][c];
        img.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return img;
}

namespace {

void write_probe_corpus(const std::string& probe_dir, int per_class, int image_size,
                        std::uint64_t seed) {
  const char* families[2] = {"stripes", "blobs"};
  for (int family = 0; family < 2; ++family) {
    const fs::path dir = fs::path(probe_dir) / families[family];
    fs::create_directories(dir);
    for (int i = 0; i < per_class; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "img_%04d.ppm", i);
      write_ppm((dir / name).string(),
                make_texture(family, image_size,
                             Rng::mix(seed, 0x950BEull + static_cast<std::uint64_t>(family),
                                      static_cast<std::uint64_t>(i)),
                             0));
    }
  }
}

}  // namespace

CorpusPaths generate_pretrain_corpus(const std::string& root, int locations,
                                     int image_size, int probe_per_class,
                                     std::uint64_t seed) {
  CorpusPaths paths;
  paths.images_dir = (fs::path(root) / "images").string();
  paths.manifest = (fs::path(root) / "manifest.jsonl").string();
  paths.probe_dir = (fs::path(root) / "probe").string();
  fs::create_directories(paths.images_dir);

  std::vector<strata::ManifestRecord> records;
  for (int loc = 0; loc < locations; ++loc) {
    const int family = loc % 2;
    const std::uint64_t loc_seed = Rng::mix(seed, 0x10Cull, static_cast<std::uint64_t>(loc));
    strata::ManifestRecord rec;
    rec.cell_id = loc;
    rec.stratum.c = family == 0 ? strata::class_code("cropland") : strata::class_code("builtup");
    rec.stratum.i = 4;
    rec.stratum.r = 0;
    rec.quarterly = true;
    rec.seed = Rng::mix(seed, 0x5EEDull, static_cast<std::uint64_t>(loc));
    for (int q = 0; q < 4; ++q) {
      char name[48];
      std::snprintf(name, sizeof(name), "cell%d_q%d.ppm", loc, q + 1);
      write_ppm((fs::path(paths.images_dir) / name).string(),
                make_texture(family, image_size, loc_seed, q));
      rec.image_slots.push_back(std::string("images/") + name);
    }
    records.push_back(std::move(rec));
  }
  strata::write_manifest(paths.manifest, records);
  if (probe_per_class > 0)
    write_probe_corpus(paths.probe_dir, probe_per_class, image_size,
                       Rng::mix(seed, 0xBEEFull, 1));
  return paths;
}

CorpusPaths generate_raster_fixture(const std::string& root, int cells_y, int cells_x,
                                    int cell_size, int image_size, std::uint64_t seed) {
  CorpusPaths paths;
  paths.images_dir = (fs::path(root) / "images").string();
  paths.raster_landcover = (fs::path(root) / "landcover.raster").string();
  paths.raster_elevation = (fs::path(root) / "elevation.raster").string();
  paths.raster_region = (fs::path(root) / "region.raster").string();
  fs::create_directories(paths.images_dir);

  const int rows = cells_y * cell_size;
  const int cols = cells_x * cell_size;
  strata::Raster landcover{rows, cols, "u8", std::vector<float>(static_cast<std::size_t>(rows) * cols)};
  strata::Raster elevation{rows, cols, "i16", std::vector<float>(static_cast<std::size_t>(rows) * cols)};
  strata::Raster region{rows, cols, "u8", std::vector<float>(static_cast<std::size_t>(rows) * cols)};

  for (int cy = 0; cy < cells_y; ++cy)
    for (int cx = 0; cx < cells_x; ++cx) {
      const int cell_index = cy * cells_x + cx;
      // Diagonal striping keeps every class present in both populations.
      const int lc = (cx + cy) % strata::kNumClasses;
      const int elev = -500 + 700 * (cy % 5);
      const int reg = cx < cells_x / 2 ? 0 : 1;  // left half quarterly in the demo
      for (int y = cy * cell_size; y < (cy + 1) * cell_size; ++y)
        for (int x = cx * cell_size; x < (cx + 1) * cell_size; ++x) {
          landcover.at(y, x) = static_cast<float>(lc);
          elevation.at(y, x) = static_cast<float>(elev);
          region.at(y, x) = static_cast<float>(reg);
        }

      const int family = lc % 2;
      const std::uint64_t loc_seed = Rng::mix(seed, 0x10Cull, static_cast<std::uint64_t>(cell_index));
      if (reg == 0) {
        for (int q = 0; q < 4; ++q) {
          char name[48];
          std::snprintf(name, sizeof(name), "cell%d_q%d.ppm", cell_index, q + 1);
          write_ppm((fs::path(paths.images_dir) / name).string(),
                    make_texture(family, image_size, loc_seed, q));
        }
      } else {
        char name[48];
        std::snprintf(name, sizeof(name), "cell%d_annual.ppm", cell_index);
        write_ppm((fs::path(paths.images_dir) / name).string(),
                  make_texture(family, image_size, loc_seed, 0));
      }
    }

  strata::write_raster(paths.raster_landcover, landcover);
  strata::write_raster(paths.raster_elevation, elevation);
  strata::write_raster(paths.raster_region, region);
  return paths;
}

}  // namespace geossl::fixtures
