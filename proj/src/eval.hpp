#ifndef WEAKMAP_EVAL_HPP_
#define WEAKMAP_EVAL_HPP_

#include <optional>
#include <string>
#include <vector>

#include "backbone.hpp"
#include "config.hpp"
#include "synthdata.hpp"

namespace weakmap {

// Mann-Whitney AUC: probability that a random positive outscores a random
// negative, ties counting one half. Computed from average ranks in
// O(n log n); needs at least one sample of each class.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Mean probability vector over the four corner crops, the center crop, and
// the horizontal flips of all five. Eval mode.
std::vector<double> ten_crop_predict(ModelParams& params, const BackboneConfig& backbone_cfg,
                                     const HeadConfig& head_cfg, const Tensor& image, int crop,
                                     const ChannelStats& stats);

// Pre-pooling class evidence map: the class-wise average of the multi-map
// transfer output, below any spatial pooling. `low` is at backbone
// resolution, `high` its bilinear upsampling to image resolution.
struct Heatmap {
  int low_h = 0, low_w = 0;
  std::vector<double> low;
  int high_h = 0, high_w = 0;
  std::vector<double> high;
};

std::vector<Heatmap> class_heatmaps(ModelParams& params, const BackboneConfig& backbone_cfg,
                                    const HeadConfig& head_cfg, const Tensor& image,
                                    const ChannelStats& stats);

// 1 if the argmax pixel of the upsampled map (row-major tie break) falls
// inside any box of the class.
int pointing_hit(const Heatmap& map, const std::vector<Box>& boxes, int class_id);

struct EvalReport {
  std::vector<std::optional<double>> auc;  // absent when a class is single-sided
  double mean_auc = 0.0;                   // over classes with a defined AUC
  std::vector<std::optional<double>> pointing_acc;
  std::vector<std::optional<double>> chance;  // mean box-area fraction
  std::vector<int> pointing_n;
};

// Ten-crop classification over the evaluation split plus the pointing game
// on every evaluation sample that has a box of the class.
EvalReport evaluate(ModelParams& params, const BackboneConfig& backbone_cfg,
                    const HeadConfig& head_cfg, const std::vector<Sample>& samples,
                    const std::vector<int>& eval_indices, const ChannelStats& stats, int crop);

// One line per class "class_id,auc,pointing_acc,chance" plus a mean line;
// absent values print as "absent".
std::string format_report(const EvalReport& report);

}  // namespace weakmap

#endif  // WEAKMAP_EVAL_HPP_
