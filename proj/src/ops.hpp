#ifndef WEAKMAP_OPS_HPP_
#define WEAKMAP_OPS_HPP_

#include "tensor.hpp"

namespace weakmap {

// Gate bottleneck weights. Hidden width is max(1, C / reduction); the two
// projections carry no bias.
struct SEParams {
  Tensor w1;  // [hidden, C]
  Tensor w2;  // [C, hidden]
  int reduction = 16;
};

inline int se_hidden_width(int channels, int reduction) {
  int h = channels / reduction;
  return h < 1 ? 1 : h;
}

// Classification head layout: maps_per_class maps per class, class-major
// channel order (maps [c*M, c*M+M) belong to class c).
struct HeadConfig {
  int maps_per_class = 12;
  int classes = 4;
  int k_plus = 1;
  int k_minus = 1;
  double alpha = 0.7;
};

struct ClassScores {
  Tensor scores;  // pre-sigmoid, [C]
  Tensor probs;   // sigmoid(scores), [C]
};

// Spatial mean per channel (the squeeze step): [H,W,C] -> [C].
Tensor squeeze(Tape& tape, const Tensor& feature_maps);

// Channel gate s = sigmoid(W2 relu(W1 z)); every component in (0,1).
Tensor excite(Tape& tape, const Tensor& squeezed, const SEParams& params);

// Per-channel rescaling of the feature maps by the gate vector.
Tensor recalibrate(Tape& tape, const Tensor& feature_maps, const Tensor& gate);

// recalibrate(U, excite(squeeze(U))); shape preserving.
Tensor se_block(Tape& tape, const Tensor& feature_maps, const SEParams& params);

// 1x1 convolution from [h,w,D] to [h,w,M*C] class-major maps.
Tensor multi_map_transfer(Tape& tape, const Tensor& features, const Tensor& weights,
                          const Tensor& bias, const HeadConfig& config);

// Mean of the maps_per_class maps of each class: [h,w,M*C] -> [h,w,C].
Tensor class_wise_avg(Tape& tape, const Tensor& maps, int maps_per_class);

// Per class: mean of the k_plus largest entries plus alpha times the mean of
// the k_minus smallest (omitted when k_minus == 0). Ties break on row-major
// index order. [h,w,C] -> [C].
Tensor max_min_pool(Tape& tape, const Tensor& class_maps, const HeadConfig& config);

// multi_map_transfer -> class_wise_avg -> max_min_pool -> sigmoid.
ClassScores head_forward(Tape& tape, const Tensor& features, const Tensor& weights,
                         const Tensor& bias, const HeadConfig& config);

}  // namespace weakmap

#endif  // WEAKMAP_OPS_HPP_
