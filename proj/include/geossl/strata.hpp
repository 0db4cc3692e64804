#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace geossl::strata {

inline constexpr int kNumClasses = 7;
inline constexpr int kNumElevBins = 24;

// Land-cover class codes, in tie-breaking order.
const char* class_name(int code);
int class_code(const std::string& name);

// Flat binary raster with a one-line text header "rows cols dtype",
// dtype in {u8, i16, f32}. Values are held as floats; u8/i16 stay exact.
struct Raster {
  int rows = 0;
  int cols = 0;
  std::string dtype = "f32";
  std::vector<float> values;

  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
};

Raster read_raster(const std::string& path);
void write_raster(const std::string& path, const Raster& raster);

struct GridCell {
  std::int64_t cell_id = 0;
  int row0 = 0, col0 = 0, size = 0;  // raster-index extent
  int landcover = -1;                // class code c
  int elev_bin = -1;                 // i in [0, 23]
  int region = -1;                   // region code r
  bool valid = false;
};

struct StratumKey {
  int c = 0, i = 0, r = 0;
  auto operator<=>(const StratumKey&) const = default;
};

// Tiles the domain with non-overlapping cells; partial edge strips dropped.
std::vector<GridCell> partition_grid(int rows, int cols, int cell_size);

// Modal land cover (ties to the lowest code), mean elevation binned into the
// 24 half-kilometer segments of [-2000 m, 10000 m], modal region code.
// A cell not fully covered by all rasters, or with out-of-range class codes,
// is flagged invalid.
void assign_attributes(GridCell& cell, const Raster& landcover,
                       const Raster& elevation, const Raster& region);

struct SamplingPlan {
  std::int64_t total = 0;                             // M
  std::array<double, kNumClasses> weights{};          // W_c, normalized
  std::array<std::int64_t, kNumClasses> class_population{};  // M_c
  std::array<std::int64_t, kNumClasses> class_target{};      // min(round(M*W_c), M_c)
  std::map<StratumKey, std::int64_t> population;      // M_{c,i,r}
  std::map<StratumKey, double> raw_allocation;        // M * W_c * M_{c,i,r} / M_c
  std::map<StratumKey, std::int64_t> allocation;      // integerized, capped
};

// Real-valued allocations per stratum, integerized per class by largest
// remainder so class totals hit round(M*W_c), capped at stratum populations
// with overflow redistributed within the class in remainder order.
SamplingPlan build_plan(const std::vector<GridCell>& cells, std::int64_t total,
                        const std::array<double, kNumClasses>& weights);

struct DrawnSample {
  StratumKey stratum;
  std::int64_t cell_id = 0;
};

// Uniform without-replacement draw per stratum; deterministic given seed.
std::vector<DrawnSample> draw_samples(const SamplingPlan& plan,
                                      const std::vector<GridCell>& cells,
                                      std::uint64_t seed);

// Partitions cells by a region predicate: predicate-true cells form the
// quarterly population (4 image slots), the rest the annual one (1 slot).
std::pair<std::vector<GridCell>, std::vector<GridCell>> split_populations(
    const std::vector<GridCell>& cells, const std::function<bool(int)>& is_quarterly);

struct ManifestRecord {
  std::int64_t cell_id = 0;
  StratumKey stratum;
  bool quarterly = false;
  std::vector<std::string> image_slots;  // empty string encodes a null slot
  std::uint64_t seed = 0;
};

// JSON Lines manifest, one record per selected cell.
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::string& path);

}  // namespace geossl::strata
