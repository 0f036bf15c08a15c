#ifndef WEAKMAP_PGM_HPP_
#define WEAKMAP_PGM_HPP_

#include <string>
#include <vector>

#include "tensor.hpp"

namespace weakmap {

// Binary PGM (P5). Images are [H,W,1] tensors with values on the 16-bit grid
// k/65535 so that write/read round-trips bit-exactly. Samples are stored
// most-significant-byte first, as netpbm requires for maxval > 255.
void write_pgm16(const std::string& path, const Tensor& image);
Tensor read_pgm16(const std::string& path);

// 8-bit P5 rendering; values are clamped to [0,1] and mapped onto 0..255.
void write_pgm8(const std::string& path, int height, int width,
                const std::vector<double>& values01);

// Snaps a value in [0,1] onto the 16-bit grid.
inline double quantize16(double v) {
  if (v < 0.0) v = 0.0;
  if (v > 1.0) v = 1.0;
  return static_cast<double>(static_cast<int>(v * 65535.0 + 0.5)) / 65535.0;
}

}  // namespace weakmap

#endif  // WEAKMAP_PGM_HPP_
