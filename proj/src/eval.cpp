#include "geossl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "geossl/errors.hpp"
#include "geossl/rng.hpp"
#include "geossl/tensor.hpp"

namespace geossl::eval {

FeatureMatrix extract_features(const std::vector<Image>& images, vit::ViTParams& params,
                               FeatureKind kind) {
  NoGradGuard no_grad;
  FeatureMatrix out;
  out.cols = params.config.embed_dim;
  if (kind == FeatureKind::patch_tokens) {
    if (images.size() != 1)
      throw std::invalid_argument("extract_features: patch mode takes exactly one image");
    vit::Encoded enc = vit::vit_forward(images[0], params);
    out.rows = enc.patch_tokens.dim(0);
    out.values.assign(enc.patch_tokens.ptr(), enc.patch_tokens.ptr() + enc.patch_tokens.numel());
    return out;
  }
  out.rows = static_cast<int>(images.size());
  out.values.resize(static_cast<std::size_t>(out.rows) * out.cols);
  for (std::size_t i = 0; i < images.size(); ++i) {
    vit::Encoded enc = vit::vit_forward(images[i], params);
    std::copy(enc.class_token.ptr(), enc.class_token.ptr() + out.cols,
              out.values.begin() + static_cast<std::ptrdiff_t>(i) * out.cols);
  }
  return out;
}

ProbeResult train_probe(const FeatureMatrix& features, const std::vector<int>& labels,
                        int epochs, double lr) {
  if (features.rows <= 0 || static_cast<std::size_t>(features.rows) != labels.size())
    throw std::invalid_argument("train_probe: label count must match feature rows");
  if (epochs < 0) throw std::invalid_argument("train_probe: epochs must be nonnegative");
  if (!(lr > 0)) throw std::invalid_argument("train_probe: lr must be positive");
  int classes = 0;
  std::set<int> distinct;
  for (int y : labels) {
    if (y < 0) throw std::invalid_argument("train_probe: negative label");
    distinct.insert(y);
    classes = std::max(classes, y + 1);
  }
  if (distinct.size() < 2)
    throw std::invalid_argument("train_probe: at least two classes required");

  const int n = features.rows, d = features.cols, c = classes;
  ProbeModel model;
  model.dims = d;
  model.classes = c;
  model.weight.assign(static_cast<std::size_t>(d) * c, 0.0f);
  model.bias.assign(static_cast<std::size_t>(c), 0.0f);

  std::vector<double> logits(static_cast<std::size_t>(c));
  std::vector<double> grad_w(static_cast<std::size_t>(d) * c);
  std::vector<double> grad_b(static_cast<std::size_t>(c));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    std::fill(grad_b.begin(), grad_b.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const float* row = features.values.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < c; ++j) {
        double z = model.bias[static_cast<std::size_t>(j)];
        for (int k = 0; k < d; ++k)
          z += static_cast<double>(row[k]) * model.weight[static_cast<std::size_t>(k) * c + j];
        logits[static_cast<std::size_t>(j)] = z;
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double sum = 0.0;
      for (double& z : logits) {
        z = std::exp(z - mx);
        sum += z;
      }
      for (int j = 0; j < c; ++j) {
        const double p = logits[static_cast<std::size_t>(j)] / sum;
        const double delta = p - (labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0);
        grad_b[static_cast<std::size_t>(j)] += delta;
        for (int k = 0; k < d; ++k)
          grad_w[static_cast<std::size_t>(k) * c + j] += delta * row[k];
      }
    }
    const double scale = lr / n;
    for (std::size_t k = 0; k < grad_w.size(); ++k)
      model.weight[k] -= static_cast<float>(scale * grad_w[k]);
    for (std::size_t j = 0; j < grad_b.size(); ++j)
      model.bias[j] -= static_cast<float>(scale * grad_b[j]);
  }

  ProbeResult result;
  result.model = std::move(model);
  result.train_accuracy = probe_accuracy(result.model, features, labels);
  return result;
}

int probe_predict(const ProbeModel& model, const float* row) {
  int best = 0;
  double best_z = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < model.classes; ++j) {
    double z = model.bias[static_cast<std::size_t>(j)];
    for (int k = 0; k < model.dims; ++k)
      z += static_cast<double>(row[k]) * model.weight[static_cast<std::size_t>(k) * model.classes + j];
    if (z > best_z) {  // tie -> lowest class index
      best_z = z;
      best = j;
    }
  }
  return best;
}

double probe_accuracy(const ProbeModel& model, const FeatureMatrix& features,
                      const std::vector<int>& labels) {
  if (static_cast<std::size_t>(features.rows) != labels.size())
    throw std::invalid_argument("probe_accuracy: label count must match feature rows");
  int hits = 0;
  for (int i = 0; i < features.rows; ++i)
    if (probe_predict(model, features.values.data() + static_cast<std::size_t>(i) * features.cols) ==
        labels[static_cast<std::size_t>(i)])
      ++hits;
  return static_cast<double>(hits) / features.rows;
}

PcaResult pca_project(const FeatureMatrix& features, int k) {
  const int n = features.rows, d = features.cols;
  if (n < 1 || d < 1) throw std::invalid_argument("pca_project: empty feature matrix");
  if (k < 1 || k > std::min(n, d))
    throw std::invalid_argument("pca_project: k must lie in [1, min(rows, cols)]");

  Eigen::MatrixXd centered(n, d);
  PcaResult result;
  result.components = k;
  result.mean.resize(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += features.at(i, j);
    mean /= n;
    result.mean[static_cast<std::size_t>(j)] = static_cast<float>(mean);
    for (int i = 0; i < n; ++i) centered(i, j) = features.at(i, j) - mean;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& singular = svd.singularValues();
  Eigen::MatrixXd basis = svd.matrixV().leftCols(k);

  // Deterministic sign: largest-magnitude loading positive per component.
  for (int j = 0; j < k; ++j) {
    int arg = 0;
    for (int i = 1; i < d; ++i)
      if (std::abs(basis(i, j)) > std::abs(basis(arg, j))) arg = i;
    if (basis(arg, j) < 0.0) basis.col(j) *= -1.0;
  }

  const Eigen::MatrixXd projected = centered * basis;
  result.basis.resize(static_cast<std::size_t>(d) * k);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < k; ++j)
      result.basis[static_cast<std::size_t>(i) * k + j] = static_cast<float>(basis(i, j));
  result.projected.resize(static_cast<std::size_t>(n) * k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j)
      result.projected[static_cast<std::size_t>(i) * k + j] = static_cast<float>(projected(i, j));

  const double total = centered.squaredNorm();
  result.explained.resize(static_cast<std::size_t>(k), 0.0);
  if (total > 0.0)
    for (int j = 0; j < k; ++j)
      result.explained[static_cast<std::size_t>(j)] = singular(j) * singular(j) / total;
  return result;
}

KmeansResult kmeans(const FeatureMatrix& features, int k, std::uint64_t seed, int max_iters) {
  const int n = features.rows, d = features.cols;
  if (k < 1 || k > n) throw std::invalid_argument("kmeans: k must lie in [1, rows]");

  auto dist2 = [&](const float* a, const float* b) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = static_cast<double>(a[j]) - b[j];
      acc += diff * diff;
    }
    return acc;
  };

  Rng rng(seed);
  KmeansResult result;
  result.centroids.rows = k;
  result.centroids.cols = d;
  result.centroids.values.resize(static_cast<std::size_t>(k) * d);

  // k-means++ seeding.
  std::vector<int> chosen;
  chosen.push_back(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n))));
  std::vector<double> best_d2(static_cast<std::size_t>(n),
                              std::numeric_limits<double>::infinity());
  while (static_cast<int>(chosen.size()) < k) {
    const float* last = features.values.data() +
                        static_cast<std::size_t>(chosen.back()) * d;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d2 = dist2(features.values.data() + static_cast<std::size_t>(i) * d, last);
      best_d2[static_cast<std::size_t>(i)] = std::min(best_d2[static_cast<std::size_t>(i)], d2);
      total += best_d2[static_cast<std::size_t>(i)];
    }
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
    } else {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        target -= best_d2[static_cast<std::size_t>(i)];
        if (target <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    chosen.push_back(pick);
  }
  for (int j = 0; j < k; ++j)
    std::copy(features.values.begin() + static_cast<std::ptrdiff_t>(chosen[static_cast<std::size_t>(j)]) * d,
              features.values.begin() + static_cast<std::ptrdiff_t>(chosen[static_cast<std::size_t>(j)] + 1) * d,
              result.centroids.values.begin() + static_cast<std::ptrdiff_t>(j) * d);

  result.labels.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      const float* row = features.values.data() + static_cast<std::size_t>(i) * d;
      int best = 0;
      double best_dist = dist2(row, result.centroids.values.data());
      for (int j = 1; j < k; ++j) {
        const double dj = dist2(row, result.centroids.values.data() + static_cast<std::size_t>(j) * d);
        if (dj < best_dist) {  // tie -> lowest centroid index
          best_dist = dj;
          best = j;
        }
      }
      inertia += best_dist;
      if (result.labels[static_cast<std::size_t>(i)] != best) {
        result.labels[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    result.inertia = inertia;
    result.iterations = iter + 1;
    if (!changed) break;

    std::vector<double> sums(static_cast<std::size_t>(k) * d, 0.0);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      const int label = result.labels[static_cast<std::size_t>(i)];
      ++counts[static_cast<std::size_t>(label)];
      const float* row = features.values.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < d; ++j) sums[static_cast<std::size_t>(label) * d + j] += row[j];
    }
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] == 0) continue;  // keep previous centroid
      for (int m = 0; m < d; ++m)
        result.centroids.values[static_cast<std::size_t>(j) * d + m] =
            static_cast<float>(sums[static_cast<std::size_t>(j) * d + m] /
                               counts[static_cast<std::size_t>(j)]);
    }
  }
  return result;
}

namespace {

void require_grid(const FeatureMatrix& features, int grid) {
  if (features.rows != grid * grid)
    throw std::invalid_argument("render: feature rows must equal grid^2");
}

}  // namespace

Image render_pca_map(const FeatureMatrix& patch_features, int grid) {
  require_grid(patch_features, grid);
  if (patch_features.cols < 3)
    throw std::invalid_argument("render_pca_map: at least 3 feature dimensions required");
  const int k = std::min(3, std::min(patch_features.rows, patch_features.cols));
  if (k < 3) throw std::invalid_argument("render_pca_map: too few rows for 3 components");
  const PcaResult pca = pca_project(patch_features, 3);

  Image out(grid, grid);
  for (int c = 0; c < 3; ++c) {
    float lo = pca.projected[static_cast<std::size_t>(c)];
    float hi = lo;
    for (int i = 0; i < patch_features.rows; ++i) {
      const float v = pca.projected[static_cast<std::size_t>(i) * 3 + c];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const float span = hi - lo;
    for (int i = 0; i < patch_features.rows; ++i) {
      const float v = pca.projected[static_cast<std::size_t>(i) * 3 + c];
      out.px[static_cast<std::size_t>(i) * 3 + c] = span > 0.0f ? (v - lo) / span : 0.0f;
    }
  }
  return out;
}

Image render_cluster_map(const FeatureMatrix& patch_features, int grid, int k,
                         std::uint64_t seed) {
  require_grid(patch_features, grid);
  if (k < 3 || k > 5)
    throw std::invalid_argument("render_cluster_map: k must lie in [3, 5]");

  const int pca_k = std::min(10, std::min(patch_features.rows, patch_features.cols));
  const PcaResult pca = pca_project(patch_features, pca_k);
  FeatureMatrix projected;
  projected.rows = patch_features.rows;
  projected.cols = pca_k;
  projected.values = pca.projected;

  const int kk = std::min(k, projected.rows);
  const KmeansResult clusters = kmeans(projected, kk, seed);

  static const float palette[5][3] = {{0.10f, 0.74f, 0.61f},
                                      {0.20f, 0.60f, 0.86f},
                                      {0.61f, 0.35f, 0.71f},
                                      {0.95f, 0.77f, 0.06f},
                                      {0.91f, 0.30f, 0.24f}};
  Image out(grid, grid);
  for (int i = 0; i < patch_features.rows; ++i) {
    const int label = clusters.labels[static_cast<std::size_t>(i)] % 5;
    for (int c = 0; c < 3; ++c) out.px[static_cast<std::size_t>(i) * 3 + c] = palette[label][c];
  }
  return out;
}

void emit_curves(const std::string& csv_path, const std::string& svg_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("curves: cannot open " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("curves: empty file " + csv_path);
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();

  std::vector<std::string> columns;
  {
    std::stringstream ss(line);
    std::string token;
    while (std::getline(ss, token, ',')) columns.push_back(token);
  }
  if (columns.empty() || columns[0] != "step")
    throw DataError("curves: line 1: header must start with 'step'");

  struct Point {
    double step, value;
  };
  std::vector<std::vector<Point>> series(columns.size() > 1 ? columns.size() - 1 : 0);
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string token;
    while (std::getline(ss, token, ',')) fields.push_back(token);
    if (line.back() == ',') fields.push_back("");
    if (fields.size() != columns.size())
      throw DataError("curves: line " + std::to_string(lineno) + ": expected " +
                      std::to_string(columns.size()) + " fields, got " +
                      std::to_string(fields.size()));
    double step = 0.0;
    try {
      std::size_t pos = 0;
      step = std::stod(fields[0], &pos);
      if (pos != fields[0].size()) throw std::invalid_argument("");
    } catch (...) {
      throw DataError("curves: line " + std::to_string(lineno) + ": bad step value");
    }
    for (std::size_t j = 1; j < fields.size(); ++j) {
      if (fields[j].empty()) continue;  // optional column
      try {
        std::size_t pos = 0;
        const double v = std::stod(fields[j], &pos);
        if (pos != fields[j].size()) throw std::invalid_argument("");
        series[j - 1].push_back({step, v});
      } catch (...) {
        throw DataError("curves: line " + std::to_string(lineno) + ": bad value in column '" +
                        columns[j] + "'");
      }
    }
  }

  double x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
  bool any = false;
  for (const auto& s : series)
    for (const Point& p : s) {
      if (!any) {
        x_lo = x_hi = p.step;
        y_lo = y_hi = p.value;
        any = true;
      } else {
        x_lo = std::min(x_lo, p.step);
        x_hi = std::max(x_hi, p.step);
        y_lo = std::min(y_lo, p.value);
        y_hi = std::max(y_hi, p.value);
      }
    }
  if (x_hi <= x_lo) x_hi = x_lo + 1.0;
  if (y_hi <= y_lo) y_hi = y_lo + 1.0;

  const double width = 880, height = 520;
  const double ml = 70, mr = 180, mt = 30, mb = 50;
  const double pw = width - ml - mr, ph = height - mt - mb;
  auto sx = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * pw; };
  auto sy = [&](double y) { return mt + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph; };

  static const char* colors[] = {"#1abc9c", "#3498db", "#9b59b6", "#f1c40f",
                                 "#e74c3c", "#34495e", "#e67e22", "#2ecc71"};
  std::ofstream out(svg_path);
  if (!out) throw DataError("curves: cannot write " + svg_path);
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
      << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "  <line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n"
      << "  <line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n"
      << "  <text x=\"" << ml + pw / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-size=\"14\">step</text>\n"
      << "  <text x=\"18\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 18 " << mt + ph / 2
      << ")\">value</text>\n"
      << "  <text x=\"" << ml - 8 << "\" y=\"" << sy(y_lo) + 4
      << "\" text-anchor=\"end\" font-size=\"11\">" << y_lo << "</text>\n"
      << "  <text x=\"" << ml - 8 << "\" y=\"" << sy(y_hi) + 4
      << "\" text-anchor=\"end\" font-size=\"11\">" << y_hi << "</text>\n"
      << "  <text x=\"" << sx(x_lo) << "\" y=\"" << mt + ph + 18
      << "\" text-anchor=\"middle\" font-size=\"11\">" << x_lo << "</text>\n"
      << "  <text x=\"" << sx(x_hi) << "\" y=\"" << mt + ph + 18
      << "\" text-anchor=\"middle\" font-size=\"11\">" << x_hi << "</text>\n";

  int drawn = 0;
  for (std::size_t s = 0; s < series.size(); ++s) {
    if (series[s].empty()) continue;  // fully empty optional column
    const char* color = colors[drawn % 8];
    out << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const Point& p : series[s]) out << sx(p.step) << "," << sy(p.value) << " ";
    out << "\"/>\n";
    out << "  <text x=\"" << ml + pw + 10 << "\" y=\"" << mt + 16 + 18 * drawn
        << "\" font-size=\"12\" fill=\"" << color << "\">" << columns[s + 1] << "</text>\n";
    ++drawn;
  }
  out << "</svg>\n";
  if (!out) throw DataError("curves: write failed for " + svg_path);
}

}  // namespace geossl::eval
