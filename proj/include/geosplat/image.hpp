#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace geosplat {

/// Row-major interleaved raster of doubles.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  double& operator()(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double operator()(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

/// Four bilinear taps (pixel index, weight) for a subpixel location, clamped to the raster.
struct BilinearTaps {
  std::array<std::size_t, 4> index{};
  std::array<double, 4> weight{};

  double sample(const Image& img, int c = 0) const {
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += weight[k] * img.data[index[k] * img.channels + c];
    return s;
  }
};

inline BilinearTaps bilinear_taps(int width, int height, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
  const double fx = x - x0, fy = y - y0;
  BilinearTaps t;
  const auto at = [width](int xx, int yy) { return static_cast<std::size_t>(yy) * width + xx; };
  t.index = {at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1)};
  t.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  return t;
}

}  // namespace geosplat
