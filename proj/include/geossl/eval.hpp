#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geossl/image.hpp"
#include "geossl/vit.hpp"

namespace geossl::eval {

// Row-major feature matrix: one row per sample (class tokens) or per patch.
struct FeatureMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> values;

  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
};

enum class FeatureKind { class_token, patch_tokens };

// Frozen-backbone extraction, no gradients recorded. Class mode returns one
// row per image; patch mode takes a single image and returns its G^2 rows.
FeatureMatrix extract_features(const std::vector<Image>& images, vit::ViTParams& params,
                               FeatureKind kind);

struct ProbeModel {
  int dims = 0;
  int classes = 0;
  std::vector<float> weight;  // dims x classes
  std::vector<float> bias;
};

struct ProbeResult {
  ProbeModel model;
  double train_accuracy = 0.0;
};

// Multinomial logistic regression by full-batch gradient descent on frozen
// features.
ProbeResult train_probe(const FeatureMatrix& features, const std::vector<int>& labels,
                        int epochs, double lr);

int probe_predict(const ProbeModel& model, const float* row);
double probe_accuracy(const ProbeModel& model, const FeatureMatrix& features,
                      const std::vector<int>& labels);

struct PcaResult {
  int components = 0;
  std::vector<float> basis;       // cols x k, column j = component j
  std::vector<float> projected;   // rows x k
  std::vector<double> explained;  // variance ratios, descending
  std::vector<float> mean;        // per-column mean removed before the SVD
};

// Mean-centered SVD-based PCA; components ordered by descending singular
// value, signs fixed so the largest-magnitude loading is positive.
PcaResult pca_project(const FeatureMatrix& features, int k);

struct KmeansResult {
  std::vector<int> labels;
  FeatureMatrix centroids;
  double inertia = 0.0;
  int iterations = 0;
};

// k-means++ seeding, Lloyd iterations to an assignment fixpoint.
KmeansResult kmeans(const FeatureMatrix& features, int k, std::uint64_t seed,
                    int max_iters = 100);

// Top-3 PCA projections min-max normalized per channel into an RGB grid map.
Image render_pca_map(const FeatureMatrix& patch_features, int grid);

// Top-10 PCA projections clustered at k in [3, 5], rendered as a categorical
// color map.
Image render_cluster_map(const FeatureMatrix& patch_features, int grid, int k,
                         std::uint64_t seed);

// Metrics-CSV to SVG line chart, one polyline per numeric column vs step.
void emit_curves(const std::string& csv_path, const std::string& svg_path);

}  // namespace geossl::eval
