#include "geossl/strata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "geossl/errors.hpp"
#include "geossl/rng.hpp"

namespace geossl::strata {

namespace {
const char* kClassNames[kNumClasses] = {"forest",  "grassland", "cropland", "water",
                                        "wetland", "builtup",   "other"};
}

const char* class_name(int code) {
  if (code < 0 || code >= kNumClasses)
    throw std::invalid_argument("class_name: code out of range");
  return kClassNames[code];
}

int class_code(const std::string& name) {
  for (int c = 0; c < kNumClasses; ++c)
    if (name == kClassNames[c]) return c;
  throw std::invalid_argument("class_code: unknown land-cover class '" + name + "'");
}

Raster read_raster(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("raster: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw DataError("raster: missing header in " + path);
  std::istringstream hs(header);
  Raster r;
  if (!(hs >> r.rows >> r.cols >> r.dtype) || r.rows <= 0 || r.cols <= 0)
    throw DataError("raster: malformed header '" + header + "' in " + path);
  const std::size_t n = static_cast<std::size_t>(r.rows) * r.cols;
  r.values.resize(n);
  if (r.dtype == "u8") {
    std::vector<std::uint8_t> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw DataError("raster: truncated " + path);
    for (std::size_t i = 0; i < n; ++i) r.values[i] = static_cast<float>(buf[i]);
  } else if (r.dtype == "i16") {
    std::vector<std::int16_t> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 2));
    if (static_cast<std::size_t>(in.gcount()) != n * 2) throw DataError("raster: truncated " + path);
    for (std::size_t i = 0; i < n; ++i) r.values[i] = static_cast<float>(buf[i]);
  } else if (r.dtype == "f32") {
    in.read(reinterpret_cast<char*>(r.values.data()), static_cast<std::streamsize>(n * 4));
    if (static_cast<std::size_t>(in.gcount()) != n * 4) throw DataError("raster: truncated " + path);
  } else {
    throw DataError("raster: unsupported dtype '" + r.dtype + "' in " + path);
  }
  return r;
}

void write_raster(const std::string& path, const Raster& raster) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("raster: cannot write " + path);
  out << raster.rows << " " << raster.cols << " " << raster.dtype << "\n";
  const std::size_t n = raster.values.size();
  if (raster.dtype == "u8") {
    std::vector<std::uint8_t> buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = static_cast<std::uint8_t>(raster.values[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n));
  } else if (raster.dtype == "i16") {
    std::vector<std::int16_t> buf(n);
    for (std::size_t i = 0; i < n; ++i) buf[i] = static_cast<std::int16_t>(raster.values[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * 2));
  } else if (raster.dtype == "f32") {
    out.write(reinterpret_cast<const char*>(raster.values.data()), static_cast<std::streamsize>(n * 4));
  } else {
    throw DataError("raster: unsupported dtype '" + raster.dtype + "'");
  }
  if (!out) throw DataError("raster: write failed for " + path);
}

std::vector<GridCell> partition_grid(int rows, int cols, int cell_size) {
  if (cell_size <= 0) throw std::invalid_argument("partition_grid: cell size must be positive");
  std::vector<GridCell> cells;
  const int ny = rows / cell_size;
  const int nx = cols / cell_size;
  if (ny <= 0 || nx <= 0) return cells;
  cells.reserve(static_cast<std::size_t>(ny) * nx);
  for (int cy = 0; cy < ny; ++cy)
    for (int cx = 0; cx < nx; ++cx) {
      GridCell cell;
      cell.cell_id = static_cast<std::int64_t>(cy) * nx + cx;
      cell.row0 = cy * cell_size;
      cell.col0 = cx * cell_size;
      cell.size = cell_size;
      cells.push_back(cell);
    }
  return cells;
}

void assign_attributes(GridCell& cell, const Raster& landcover,
                       const Raster& elevation, const Raster& region) {
  cell.valid = false;
  const int r1 = cell.row0 + cell.size, c1 = cell.col0 + cell.size;
  for (const Raster* r : {&landcover, &elevation, &region})
    if (cell.row0 < 0 || cell.col0 < 0 || r1 > r->rows || c1 > r->cols) return;

  int class_votes[kNumClasses] = {0};
  std::map<int, int> region_votes;
  double elev_sum = 0.0;
  for (int y = cell.row0; y < r1; ++y)
    for (int x = cell.col0; x < c1; ++x) {
      const int lc = static_cast<int>(std::lround(landcover.at(y, x)));
      if (lc < 0 || lc >= kNumClasses) return;  // raster gap / bad code
      ++class_votes[lc];
      elev_sum += static_cast<double>(elevation.at(y, x));
      ++region_votes[static_cast<int>(std::lround(region.at(y, x)))];
    }

  int best_class = 0;
  for (int c = 1; c < kNumClasses; ++c)
    if (class_votes[c] > class_votes[best_class]) best_class = c;  // tie -> lowest code
  cell.landcover = best_class;

  const double mean_elev = elev_sum / (static_cast<double>(cell.size) * cell.size);
  const int bin = static_cast<int>(std::floor((mean_elev + 2000.0) / 500.0));
  cell.elev_bin = std::clamp(bin, 0, kNumElevBins - 1);

  int best_region = region_votes.begin()->first;
  int best_count = region_votes.begin()->second;
  for (const auto& [code, count] : region_votes)
    if (count > best_count) {  // tie -> lowest code (map is ordered)
      best_region = code;
      best_count = count;
    }
  cell.region = best_region;
  cell.valid = true;
}

SamplingPlan build_plan(const std::vector<GridCell>& cells, std::int64_t total,
                        const std::array<double, kNumClasses>& weights) {
  if (total < 0) throw std::invalid_argument("build_plan: sample total must be nonnegative");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("build_plan: class weights must be nonnegative");
    wsum += w;
  }
  if (wsum <= 0.0) throw std::invalid_argument("build_plan: class weights sum to zero");

  SamplingPlan plan;
  plan.total = total;
  for (int c = 0; c < kNumClasses; ++c) plan.weights[c] = weights[c] / wsum;

  for (const GridCell& cell : cells) {
    if (!cell.valid) continue;
    const StratumKey key{cell.landcover, cell.elev_bin, cell.region};
    ++plan.population[key];
    ++plan.class_population[static_cast<std::size_t>(cell.landcover)];
  }
  for (int c = 0; c < kNumClasses; ++c)
    if (plan.weights[c] > 0.0 && plan.class_population[static_cast<std::size_t>(c)] == 0 && total > 0)
      throw std::invalid_argument(std::string("build_plan: class '") + class_name(c) +
                                  "' has positive weight but no population");

  // Class totals: largest-remainder integerization of {M * W_c} so the
  // totals sum to M, then capped at the class populations.
  {
    std::array<double, kNumClasses> raw{};
    std::int64_t assigned = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      raw[static_cast<std::size_t>(c)] = static_cast<double>(total) * plan.weights[c];
      plan.class_target[static_cast<std::size_t>(c)] =
          static_cast<std::int64_t>(std::floor(raw[static_cast<std::size_t>(c)]));
      assigned += plan.class_target[static_cast<std::size_t>(c)];
    }
    std::array<int, kNumClasses> order{};
    for (int c = 0; c < kNumClasses; ++c) order[static_cast<std::size_t>(c)] = c;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const double ra = raw[static_cast<std::size_t>(a)] - std::floor(raw[static_cast<std::size_t>(a)]);
      const double rb = raw[static_cast<std::size_t>(b)] - std::floor(raw[static_cast<std::size_t>(b)]);
      if (ra != rb) return ra > rb;
      return a < b;
    });
    for (int c : order) {
      if (assigned >= total) break;
      ++plan.class_target[static_cast<std::size_t>(c)];
      ++assigned;
    }
    for (int c = 0; c < kNumClasses; ++c)
      plan.class_target[static_cast<std::size_t>(c)] =
          std::min(plan.class_target[static_cast<std::size_t>(c)],
                   plan.class_population[static_cast<std::size_t>(c)]);
  }

  for (int c = 0; c < kNumClasses; ++c) {
    const std::int64_t m_c = plan.class_population[static_cast<std::size_t>(c)];
    const std::int64_t target = plan.class_target[static_cast<std::size_t>(c)];
    if (m_c == 0) continue;

    struct Entry {
      StratumKey key;
      std::int64_t population;
      double raw;
      std::int64_t alloc;
      double remainder;
    };
    std::vector<Entry> entries;
    for (const auto& [key, pop] : plan.population) {
      if (key.c != c) continue;
      const double raw = static_cast<double>(total) * plan.weights[c] *
                         (static_cast<double>(pop) / static_cast<double>(m_c));
      const auto base = static_cast<std::int64_t>(std::floor(raw));
      entries.push_back({key, pop, raw, std::min(base, pop), raw - std::floor(raw)});
      plan.raw_allocation[key] = raw;
    }

    std::int64_t assigned = 0;
    for (const Entry& e : entries) assigned += e.alloc;

    // Distribute the shortfall by descending remainder (key order breaking
    // ties), skipping strata that are already at capacity; repeat passes
    // until the class target is met.
    std::vector<std::size_t> order(entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (entries[a].remainder != entries[b].remainder)
        return entries[a].remainder > entries[b].remainder;
      return entries[a].key < entries[b].key;
    });
    while (assigned < target) {
      bool progressed = false;
      for (std::size_t idx : order) {
        if (assigned >= target) break;
        Entry& e = entries[idx];
        if (e.alloc < e.population) {
          ++e.alloc;
          ++assigned;
          progressed = true;
        }
      }
      if (!progressed) break;  // class fully saturated
    }
    for (const Entry& e : entries) plan.allocation[e.key] = e.alloc;
  }
  return plan;
}

std::vector<DrawnSample> draw_samples(const SamplingPlan& plan,
                                      const std::vector<GridCell>& cells,
                                      std::uint64_t seed) {
  std::map<StratumKey, std::vector<std::int64_t>> members;
  for (const GridCell& cell : cells)
    if (cell.valid) members[{cell.landcover, cell.elev_bin, cell.region}].push_back(cell.cell_id);

  std::vector<DrawnSample> out;
  for (const auto& [key, alloc] : plan.allocation) {
    if (alloc == 0) continue;
    auto it = members.find(key);
    const std::int64_t pop = (it == members.end()) ? 0 : static_cast<std::int64_t>(it->second.size());
    if (alloc > pop)
      throw std::logic_error("draw_samples: allocation exceeds stratum population");
    std::vector<std::int64_t> ids = it->second;
    std::sort(ids.begin(), ids.end());
    Rng rng(Rng::mix(Rng::mix(seed, static_cast<std::uint64_t>(key.c),
                              static_cast<std::uint64_t>(key.i)),
                     static_cast<std::uint64_t>(static_cast<std::int64_t>(key.r))));
    // Partial Fisher-Yates: the first `alloc` entries are the draw.
    for (std::int64_t j = 0; j < alloc; ++j) {
      const std::int64_t pick = j + static_cast<std::int64_t>(
                                        rng.uniform_int(static_cast<std::uint64_t>(pop - j)));
      std::swap(ids[static_cast<std::size_t>(j)], ids[static_cast<std::size_t>(pick)]);
    }
    std::sort(ids.begin(), ids.begin() + alloc);
    for (std::int64_t j = 0; j < alloc; ++j)
      out.push_back({key, ids[static_cast<std::size_t>(j)]});
  }
  return out;
}

std::pair<std::vector<GridCell>, std::vector<GridCell>> split_populations(
    const std::vector<GridCell>& cells, const std::function<bool(int)>& is_quarterly) {
  std::vector<GridCell> quarterly, annual;
  for (const GridCell& cell : cells)
    (is_quarterly(cell.region) ? quarterly : annual).push_back(cell);
  return {std::move(quarterly), std::move(annual)};
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("manifest: cannot write " + path);
  for (const ManifestRecord& rec : records) {
    nlohmann::ordered_json j;
    j["cell_id"] = rec.cell_id;
    j["stratum"] = {{"c", class_name(rec.stratum.c)}, {"i", rec.stratum.i}, {"r", rec.stratum.r}};
    j["population"] = rec.quarterly ? "quarterly" : "annual";
    nlohmann::ordered_json slots = nlohmann::ordered_json::array();
    for (const std::string& s : rec.image_slots) {
      if (s.empty())
        slots.push_back(nullptr);
      else
        slots.push_back(s);
    }
    j["image_slots"] = std::move(slots);
    j["seed"] = rec.seed;
    out << j.dump() << "\n";
  }
  if (!out) throw DataError("manifest: write failed for " + path);
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest: cannot open " + path);
  std::vector<ManifestRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ManifestRecord rec;
      rec.cell_id = j.at("cell_id").get<std::int64_t>();
      rec.stratum.c = class_code(j.at("stratum").at("c").get<std::string>());
      rec.stratum.i = j.at("stratum").at("i").get<int>();
      rec.stratum.r = j.at("stratum").at("r").get<int>();
      rec.quarterly = j.at("population").get<std::string>() == "quarterly";
      for (const auto& slot : j.at("image_slots"))
        rec.image_slots.push_back(slot.is_null() ? std::string() : slot.get<std::string>());
      rec.seed = j.at("seed").get<std::uint64_t>();
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace geossl::strata
