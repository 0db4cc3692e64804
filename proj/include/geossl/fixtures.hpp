#pragma once

#include <cstdint>
#include <string>

#include "geossl/image.hpp"

namespace geossl::fixtures {

// Two procedurally textured families with matched per-channel first-order
// statistics: oriented stripes (family 0) and isotropic blobs (family 1).
// The spatial structure is the only class signal. Quarters 0..3 apply a
// shared seasonal color shift.
Image make_texture(int family, int size, std::uint64_t seed, int quarter);

struct CorpusPaths {
  std::string manifest;
  std::string images_dir;
  std::string probe_dir;
  std::string raster_landcover;
  std::string raster_elevation;
  std::string raster_region;
};

// Quarterly image corpus plus a ready-to-train manifest and a held-out
// class-per-subdirectory probe corpus.
CorpusPaths generate_pretrain_corpus(const std::string& root, int locations,
                                     int image_size, int probe_per_class,
                                     std::uint64_t seed);

// Land-cover / elevation / region raster triple plus per-cell images named
// cell<id>_q<1..4>.ppm (quarterly regions) or cell<id>_annual.ppm, for the
// sample -> pretrain workflow.
CorpusPaths generate_raster_fixture(const std::string& root, int cells_y, int cells_x,
                                    int cell_size, int image_size, std::uint64_t seed);

}  // namespace geossl::fixtures
