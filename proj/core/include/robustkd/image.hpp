#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "robustkd/errors.hpp"

namespace rkd {

// Dense image, HWC layout, values normalized to [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pix;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), pix(static_cast<size_t>(h) * w * c, fill) {}

  size_t size() const { return pix.size(); }
  size_t index(int y, int x, int c) const {
    return (static_cast<size_t>(y) * width + x) * channels + c;
  }
  double& at(int y, int x, int c) { return pix[index(y, x, c)]; }
  double at(int y, int x, int c) const { return pix[index(y, x, c)]; }

  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  void clamp01() {
    for (auto& v : pix) v = std::clamp(v, 0.0, 1.0);
  }

  // Bilinear sample with clamp-to-edge borders; keeps values in range.
  double sample(double y, double x, int c) const {
    const double yc = std::clamp(y, 0.0, static_cast<double>(height - 1));
    const double xc = std::clamp(x, 0.0, static_cast<double>(width - 1));
    const int y0 = static_cast<int>(yc);
    const int x0 = static_cast<int>(xc);
    const int y1 = std::min(y0 + 1, height - 1);
    const int x1 = std::min(x0 + 1, width - 1);
    const double fy = yc - y0;
    const double fx = xc - x0;
    return (1 - fy) * ((1 - fx) * at(y0, x0, c) + fx * at(y0, x1, c)) +
           fy * ((1 - fx) * at(y1, x0, c) + fx * at(y1, x1, c));
  }
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw ValidationError(std::string(what) + ": image shape mismatch");
}

// Mean squared distance helpers used by perturbation-sequence checks.
double l2_distance(const Image& a, const Image& b);

}  // namespace rkd
