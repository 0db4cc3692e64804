// Generates the synthetic two-texture corpus used by the demo workflow and
// the test suites: quarterly images + manifest, a probe split, and optional
// raster layers for the sample command.

#include <cstdio>

#include <CLI11.hpp>

#include "geossl/fixtures.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic fixture generator"};
  std::string out = "fixtures";
  int locations = 32;
  int size = 96;
  int probe_per_class = 48;
  std::uint64_t seed = 0;
  bool rasters = false;
  int cells_y = 6, cells_x = 6, cell_size = 8;
  app.add_option("--out", out, "output directory");
  app.add_option("--locations", locations, "quarterly sample locations");
  app.add_option("--size", size, "image side in pixels");
  app.add_option("--probe-per-class", probe_per_class, "held-out probe images per class");
  app.add_option("--seed", seed, "generator seed");
  app.add_flag("--rasters", rasters, "also write raster layers + per-cell images");
  app.add_option("--cells-y", cells_y, "raster grid rows");
  app.add_option("--cells-x", cells_x, "raster grid cols");
  app.add_option("--cell-size", cell_size, "raster cell side in pixels");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto corpus =
        geossl::fixtures::generate_pretrain_corpus(out, locations, size, probe_per_class, seed);
    std::printf("manifest: %s\nimages:   %s\nprobe:    %s\n", corpus.manifest.c_str(),
                corpus.images_dir.c_str(), corpus.probe_dir.c_str());
    if (rasters) {
      const auto layers = geossl::fixtures::generate_raster_fixture(
          out + "/rasters", cells_y, cells_x, cell_size, size, seed);
      std::printf("rasters:  %s %s %s\nraster images: %s\n", layers.raster_landcover.c_str(),
                  layers.raster_elevation.c_str(), layers.raster_region.c_str(),
                  layers.images_dir.c_str());
    }
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
