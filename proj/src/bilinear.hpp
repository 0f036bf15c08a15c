#ifndef WEAKMAP_BILINEAR_HPP_
#define WEAKMAP_BILINEAR_HPP_

#include <vector>

namespace weakmap {

// Bilinear resize of a single-channel map (half-pixel centers, edges
// clamped). Used for background synthesis and heatmap rendering.
inline std::vector<double> bilinear_resize(const std::vector<double>& src, int sh, int sw,
                                           int dh, int dw) {
  std::vector<double> dst(static_cast<size_t>(dh * dw));
  const double sy = static_cast<double>(sh) / dh;
  const double sx = static_cast<double>(sw) / dw;
  for (int y = 0; y < dh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    if (fy < 0) fy = 0;
    if (fy > sh - 1) fy = sh - 1;
    const int y0 = static_cast<int>(fy);
    const int y1 = y0 + 1 < sh ? y0 + 1 : y0;
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      if (fx < 0) fx = 0;
      if (fx > sw - 1) fx = sw - 1;
      const int x0 = static_cast<int>(fx);
      const int x1 = x0 + 1 < sw ? x0 + 1 : x0;
      const double wx = fx - x0;
      const double top = src[static_cast<size_t>(y0 * sw + x0)] * (1 - wx) +
                         src[static_cast<size_t>(y0 * sw + x1)] * wx;
      const double bot = src[static_cast<size_t>(y1 * sw + x0)] * (1 - wx) +
                         src[static_cast<size_t>(y1 * sw + x1)] * wx;
      dst[static_cast<size_t>(y * dw + x)] = top * (1 - wy) + bot * wy;
    }
  }
  return dst;
}

}  // namespace weakmap

#endif  // WEAKMAP_BILINEAR_HPP_
