#pragma once

#include <cmath>
#include <span>

namespace vipflow::detail {

/// Four-tap bilinear footprint of a real-valued location.
struct Footprint {
  int x0, y0;
  double fx, fy;
  bool inside;  // all four taps within [0,w) x [0,h)
};

inline Footprint footprint(double x, double y, int height, int width) {
  Footprint fp;
  fp.x0 = static_cast<int>(std::floor(x));
  fp.y0 = static_cast<int>(std::floor(y));
  fp.fx = x - fp.x0;
  fp.fy = y - fp.y0;
  // taps with zero weight don't need to exist; this makes exact integer
  // locations on the last row/column valid
  const int x1 = fp.fx > 0.0 ? fp.x0 + 1 : fp.x0;
  const int y1 = fp.fy > 0.0 ? fp.y0 + 1 : fp.y0;
  fp.inside = fp.x0 >= 0 && fp.y0 >= 0 && x1 < width && y1 < height;
  return fp;
}

/// Samples a plane at a footprint known to be inside.
inline double sample(std::span<const double> plane, int width, const Footprint& fp) {
  const std::size_t i00 = static_cast<std::size_t>(fp.y0) * width + fp.x0;
  const double v00 = plane[i00];
  const double v01 = fp.fx > 0.0 ? plane[i00 + 1] : 0.0;
  const double v10 = fp.fy > 0.0 ? plane[i00 + width] : 0.0;
  const double v11 = fp.fx > 0.0 && fp.fy > 0.0 ? plane[i00 + width + 1] : 0.0;
  return (1 - fp.fy) * ((1 - fp.fx) * v00 + fp.fx * v01) + fp.fy * ((1 - fp.fx) * v10 + fp.fx * v11);
}

/// Bilinear lookup with coordinates clamped to the frame.
inline double sample_clamped(std::span<const double> plane, int height, int width, double x, double y) {
  x = std::fmin(std::fmax(x, 0.0), width - 1.0);
  y = std::fmin(std::fmax(y, 0.0), height - 1.0);
  return sample(plane, width, footprint(x, y, height, width));
}

}  // namespace vipflow::detail
