#include "geossl/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "geossl/errors.hpp"

namespace geossl {

namespace {

int read_ppm_int(std::istream& in) {
  // Skips whitespace and '#' comments between header tokens.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw DataError("ppm: malformed header");
  return value;
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("ppm: cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') throw DataError("ppm: not a P6 file: " + path);
  const int w = read_ppm_int(in);
  const int h = read_ppm_int(in);
  const int maxval = read_ppm_int(in);
  if (maxval != 255) throw DataError("ppm: only maxval 255 supported: " + path);
  if (w <= 0 || h <= 0) throw DataError("ppm: bad dimensions in " + path);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw DataError("ppm: truncated pixel data in " + path);
  Image img(h, w);
  for (std::size_t i = 0; i < raw.size(); ++i)
    img.px[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("ppm: cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> raw(img.px.size());
  for (std::size_t i = 0; i < img.px.size(); ++i) {
    const float v = std::clamp(img.px[i], 0.0f, 1.0f);
    raw[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("ppm: write failed for " + path);
}

Image crop(const Image& img, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > img.height || x0 + w > img.width)
    throw std::invalid_argument("crop: rectangle out of bounds");
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize: output size must be positive");
  if (out_h == img.height && out_w == img.width) return img;
  Image out(out_h, out_w);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = static_cast<int>(std::floor(fy));
    const double wy = fy - y0;
    const int yc0 = std::clamp(y0, 0, img.height - 1);
    const int yc1 = std::clamp(y0 + 1, 0, img.height - 1);
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = static_cast<int>(std::floor(fx));
      const double wx = fx - x0;
      const int xc0 = std::clamp(x0, 0, img.width - 1);
      const int xc1 = std::clamp(x0 + 1, 0, img.width - 1);
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * img.at(yc0, xc0, c) + wx * img.at(yc0, xc1, c);
        const double bot = (1.0 - wx) * img.at(yc1, xc0, c) + wx * img.at(yc1, xc1, c);
        out.at(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Image center_square(const Image& img, int side) {
  const int s = std::min(img.height, img.width);
  const int y0 = (img.height - s) / 2;
  const int x0 = (img.width - s) / 2;
  return resize_bilinear(crop(img, y0, x0, s, s), side, side);
}

void clamp01(Image& img) {
  for (float& v : img.px) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace geossl
