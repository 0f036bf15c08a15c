#ifndef WEAKMAP_BACKBONE_HPP_
#define WEAKMAP_BACKBONE_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ops.hpp"
#include "tensor.hpp"

namespace weakmap {

// Miniature densely-connected backbone: 3x3 stride-2 stem, then dense blocks
// separated by SE-augmented transitions (1x1 conv -> SE -> 2x2 avg pool).
struct BackboneConfig {
  int input_channels = 1;
  int stem_channels = 16;
  int num_blocks = 3;
  int layers_per_block = 4;
  int growth = 12;
  double compression = 0.5;
  int se_reduction = 16;
  bool se_enabled = true;
};

// Spatial downsampling factor from input image to feature map.
inline int backbone_total_stride(const BackboneConfig& cfg) {
  return 2 << (cfg.num_blocks - 1);
}

// Channel count of the final feature map.
int backbone_out_channels(const BackboneConfig& cfg);

enum class Mode { kTrain, kEval };

struct DenseLayerParams {
  Tensor bn_gamma, bn_beta;
  RunningStats bn_stats;
  Tensor conv_w, conv_b;  // 3x3, pad 1, growth output channels
};

struct TransitionParams {
  Tensor conv_w, conv_b;  // 1x1 compression
  SEParams se;
};

struct ModelParams {
  Tensor stem_w, stem_b;
  std::vector<std::vector<DenseLayerParams>> blocks;
  std::vector<TransitionParams> transitions;
  Tensor head_w, head_b;  // multi-map transfer

  // Stable enumeration order; checkpoint layout and optimizer state depend
  // on it.
  void visit_trainable(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit_buffers(const std::function<void(const std::string&, RunningStats&)>& fn);

  ModelParams clone() const;
  bool all_finite();
};

// He-style init (normal, variance 2/fan_in) for conv and gate weights, zero
// biases, gamma 1 / beta 0; fully determined by the seed.
ModelParams init_params(const BackboneConfig& cfg, const HeadConfig& head, uint64_t seed);

// y = concat(x, conv3x3(relu(bn(x)))); adds `growth` channels.
Tensor dense_layer(Tape& tape, const Tensor& x, DenseLayerParams& params, Mode mode);

// avg_pool(se(conv1x1(x))); halves the spatial extents.
Tensor transition(Tape& tape, const Tensor& x, TransitionParams& params, bool se_enabled,
                  Mode mode);

Tensor backbone_forward(Tape& tape, const Tensor& image, ModelParams& params,
                        const BackboneConfig& cfg, Mode mode);

// Full model: backbone features -> multi-map head.
ClassScores model_forward(Tape& tape, const Tensor& image, ModelParams& params,
                          const BackboneConfig& cfg, const HeadConfig& head, Mode mode);

}  // namespace weakmap

#endif  // WEAKMAP_BACKBONE_HPP_
