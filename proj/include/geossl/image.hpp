#pragma once

#include <string>
#include <vector>

namespace geossl {

// 3-channel float image, row-major (y, x, channel), values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> px;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), px(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) {
    return px[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  float at(int y, int x, int c) const {
    return px[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool empty() const { return px.empty(); }
};

// Binary PPM (P6, maxval 255) input/output; the fixture and artifact format.
Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);

Image crop(const Image& img, int y0, int x0, int h, int w);
Image resize_bilinear(const Image& img, int out_h, int out_w);

// Largest centered square, resized to `side`.
Image center_square(const Image& img, int side);

void clamp01(Image& img);

}  // namespace geossl
