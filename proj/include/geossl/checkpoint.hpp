#pragma once

#include <map>
#include <string>

#include "geossl/config.hpp"
#include "geossl/trainer.hpp"

namespace geossl {

// Binary checkpoint: "CGEL" magic, format version, numeric config map,
// per-head center vectors, RNG state, a named little-endian row-major f32
// tensor table (both branches plus optimizer velocity), and a trailing
// CRC-32. save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, train::TrainerState& state,
                     const RunConfig& cfg);

struct LoadedCheckpoint {
  train::TrainerState state;
  std::map<std::string, double> config;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Resume guard: the checkpoint's structural keys must match the run config.
void check_checkpoint_compatible(const LoadedCheckpoint& ckpt, const RunConfig& cfg);

std::uint32_t crc32(const void* data, std::size_t size, std::uint32_t seed = 0);

}  // namespace geossl
