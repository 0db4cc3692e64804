#pragma once

#include <string>

#include "geossl/config.hpp"
#include "geossl/trainer.hpp"

namespace geossl::cli {

// Exit codes: 0 success, 2 config/validation error, 3 data error,
// 4 numerical abort, 1 anything else.
int run(int argc, const char* const* argv);

// Command bodies; the CLI front end maps their exceptions to exit codes.

// Full stratified-sampling workflow: rasters -> attributed grid -> split
// populations -> per-population plans -> seeded draw -> JSONL manifest.
// Prints the per-class allocation table; returns the manifest path.
std::string cmd_sample(const RunConfig& cfg, const std::string& out_dir);

train::PretrainResult cmd_pretrain(const RunConfig& cfg, const std::string& manifest,
                                   const std::string& out_dir,
                                   const std::string& resume = "");

struct ProbeReport {
  int classes = 0;
  int train_count = 0;
  int test_count = 0;
  double train_oa = 0.0;
  double test_oa = 0.0;
};

ProbeReport cmd_probe(const RunConfig& cfg, const std::string& checkpoint,
                      const std::string& data_dir);

// mode pca3|cluster renders a patch-feature map of one image; mode curves
// renders the metrics CSV as an SVG chart. Returns the artifact path.
std::string cmd_visualize(const RunConfig& cfg, const std::string& checkpoint,
                          const std::string& input, const std::string& mode,
                          const std::string& out_dir);

}  // namespace geossl::cli
