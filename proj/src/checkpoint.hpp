#ifndef WEAKMAP_CHECKPOINT_HPP_
#define WEAKMAP_CHECKPOINT_HPP_

#include <string>
#include <vector>

#include "backbone.hpp"
#include "config.hpp"

namespace weakmap {

// Everything needed to run inference: architecture + run configuration,
// trained weights, batchnorm running statistics and the training-set
// normalization constants.
struct Checkpoint {
  RunConfig config;
  ModelParams params;
  std::vector<double> norm_mean;
  std::vector<double> norm_std;
};

// Versioned binary format: "WMCK" magic, u32 version, the full config
// serialization, then named tensor records (name, rank, extents, 64-bit
// little-endian values). Round-trips bit-exactly. Writes are atomic
// (temp file + rename).
void save_checkpoint(const std::string& path, Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace weakmap

#endif  // WEAKMAP_CHECKPOINT_HPP_
