#include "eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "bilinear.hpp"
#include "ops.hpp"
#include "parallel.hpp"
#include "train.hpp"

namespace weakmap {

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  WM_CHECK(scores.size() == labels.size(), ErrorCategory::kDimension,
           "roc_auc: " << scores.size() << " scores vs " << labels.size() << " labels");
  const int n = static_cast<int>(scores.size());
  long npos = 0;
  for (int l : labels) npos += l != 0;
  const long nneg = n - npos;
  WM_CHECK(npos > 0 && nneg > 0, ErrorCategory::kDimension,
           "roc_auc: needs at least one positive and one negative, got " << npos << "/" << nneg);

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores[static_cast<size_t>(a)] < scores[static_cast<size_t>(b)]; });

  // average ranks across tie groups, then the rank-sum statistic
  double rank_sum_pos = 0.0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j < n && scores[static_cast<size_t>(order[static_cast<size_t>(j)])] ==
                        scores[static_cast<size_t>(order[static_cast<size_t>(i)])])
      ++j;
    const double avg_rank = 0.5 * ((i + 1) + j);  // 1-based ranks i+1 .. j
    for (int k = i; k < j; ++k)
      if (labels[static_cast<size_t>(order[static_cast<size_t>(k)])]) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(npos) * (static_cast<double>(npos) + 1.0);
  return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

std::vector<double> ten_crop_predict(ModelParams& params, const BackboneConfig& backbone_cfg,
                                     const HeadConfig& head_cfg, const Tensor& image, int crop,
                                     const ChannelStats& stats) {
  const int S = image.extent(0);
  WM_CHECK(crop >= 1 && crop <= S && crop <= image.extent(1), ErrorCategory::kDimension,
           "ten_crop_predict: crop " << crop << " exceeds image " << shape_str(image.shape()));
  const int lo = 0, hi_y = image.extent(0) - crop, hi_x = image.extent(1) - crop;
  const int cy = hi_y / 2, cx = hi_x / 2;
  const int offsets[5][2] = {{lo, lo}, {lo, hi_x}, {hi_y, lo}, {hi_y, hi_x}, {cy, cx}};

  std::vector<double> mean(static_cast<size_t>(head_cfg.classes), 0.0);
  const int C = image.extent(2);
  const int W = image.extent(1);
  for (const auto& off : offsets) {
    Tensor cropped(Shape{crop, crop, C});
    for (int y = 0; y < crop; ++y)
      for (int x = 0; x < crop; ++x)
        for (int c = 0; c < C; ++c)
          cropped.v((y * crop + x) * C + c) = image.v(((y + off[0]) * W + x + off[1]) * C + c);
    for (int flip = 0; flip < 2; ++flip) {
      Tensor view = flip ? hflip(cropped) : cropped;
      Tensor input = apply_normalization(view, stats);
      Tape tape;
      ClassScores out = model_forward(tape, input, params, backbone_cfg, head_cfg, Mode::kEval);
      for (int c = 0; c < head_cfg.classes; ++c) mean[static_cast<size_t>(c)] += out.probs.v(c);
    }
  }
  for (auto& v : mean) v /= 10.0;
  return mean;
}

std::vector<Heatmap> class_heatmaps(ModelParams& params, const BackboneConfig& backbone_cfg,
                                    const HeadConfig& head_cfg, const Tensor& image,
                                    const ChannelStats& stats) {
  Tensor input = apply_normalization(image, stats);
  Tape tape;
  Tensor feats = backbone_forward(tape, input, params, backbone_cfg, Mode::kEval);
  Tensor maps = multi_map_transfer(tape, feats, params.head_w, params.head_b, head_cfg);
  Tensor zbar = class_wise_avg(tape, maps, head_cfg.maps_per_class);

  const int h = zbar.extent(0), w = zbar.extent(1), C = zbar.extent(2);
  const int H = image.extent(0), W = image.extent(1);
  std::vector<Heatmap> out(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) {
    Heatmap& hm = out[static_cast<size_t>(c)];
    hm.low_h = h;
    hm.low_w = w;
    hm.low.resize(static_cast<size_t>(h * w));
    for (int i = 0; i < h * w; ++i) hm.low[static_cast<size_t>(i)] = zbar.v(i * C + c);
    hm.high_h = H;
    hm.high_w = W;
    hm.high = bilinear_resize(hm.low, h, w, H, W);
  }
  return out;
}

int pointing_hit(const Heatmap& map, const std::vector<Box>& boxes, int class_id) {
  int best = 0;
  for (int i = 1; i < map.high_h * map.high_w; ++i)
    if (map.high[static_cast<size_t>(i)] > map.high[static_cast<size_t>(best)]) best = i;
  const int py = best / map.high_w, px = best % map.high_w;
  for (const Box& b : boxes)
    if (b.class_id == class_id && px >= b.x0 && px < b.x1 && py >= b.y0 && py < b.y1) return 1;
  return 0;
}

EvalReport evaluate(ModelParams& params, const BackboneConfig& backbone_cfg,
                    const HeadConfig& head_cfg, const std::vector<Sample>& samples,
                    const std::vector<int>& eval_indices, const ChannelStats& stats, int crop) {
  WM_CHECK(!eval_indices.empty(), ErrorCategory::kConfig, "evaluate: empty evaluation split");
  const int C = head_cfg.classes;
  const int n = static_cast<int>(eval_indices.size());

  // classification scores, samples processed independently
  std::vector<std::vector<double>> probs(static_cast<size_t>(n));
  parallel_for(n, [&](int i) {
    const Sample& s = samples[static_cast<size_t>(eval_indices[static_cast<size_t>(i)])];
    // forward-only inference never mutates params; clone per worker is not
    // needed, eval mode is read-only
    probs[static_cast<size_t>(i)] =
        ten_crop_predict(params, backbone_cfg, head_cfg, s.image, crop, stats);
  });

  EvalReport report;
  report.auc.assign(static_cast<size_t>(C), std::nullopt);
  for (int c = 0; c < C; ++c) {
    std::vector<double> scores(static_cast<size_t>(n));
    std::vector<int> labels(static_cast<size_t>(n));
    long npos = 0;
    for (int i = 0; i < n; ++i) {
      scores[static_cast<size_t>(i)] = probs[static_cast<size_t>(i)][static_cast<size_t>(c)];
      labels[static_cast<size_t>(i)] =
          samples[static_cast<size_t>(eval_indices[static_cast<size_t>(i)])]
              .labels[static_cast<size_t>(c)];
      npos += labels[static_cast<size_t>(i)];
    }
    if (npos > 0 && npos < n) report.auc[static_cast<size_t>(c)] = roc_auc(scores, labels);
  }
  double auc_sum = 0.0;
  int auc_n = 0;
  for (const auto& a : report.auc)
    if (a) {
      auc_sum += *a;
      ++auc_n;
    }
  report.mean_auc = auc_n ? auc_sum / auc_n : 0.0;

  // localization: pointing game on evaluation samples that carry boxes
  std::vector<std::vector<int>> hits(static_cast<size_t>(n));
  std::vector<std::vector<double>> areas(static_cast<size_t>(n));
  parallel_for(n, [&](int i) {
    const Sample& s = samples[static_cast<size_t>(eval_indices[static_cast<size_t>(i)])];
    const auto& boxes = s.boxes();
    if (boxes.empty()) return;
    auto maps = class_heatmaps(params, backbone_cfg, head_cfg, s.image, stats);
    const double image_area = static_cast<double>(s.image.extent(0)) * s.image.extent(1);
    hits[static_cast<size_t>(i)].assign(static_cast<size_t>(C), -1);
    areas[static_cast<size_t>(i)].assign(static_cast<size_t>(C), 0.0);
    for (int c = 0; c < C; ++c) {
      double area = 0.0;
      bool has_box = false;
      for (const Box& b : boxes)
        if (b.class_id == c) {
          has_box = true;
          area += static_cast<double>(b.x1 - b.x0) * (b.y1 - b.y0);
        }
      if (!has_box) continue;
      hits[static_cast<size_t>(i)][static_cast<size_t>(c)] =
          pointing_hit(maps[static_cast<size_t>(c)], boxes, c);
      areas[static_cast<size_t>(i)][static_cast<size_t>(c)] = area / image_area;
    }
  });

  report.pointing_acc.assign(static_cast<size_t>(C), std::nullopt);
  report.chance.assign(static_cast<size_t>(C), std::nullopt);
  report.pointing_n.assign(static_cast<size_t>(C), 0);
  for (int c = 0; c < C; ++c) {
    long total = 0, hit = 0;
    double area_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      if (hits[static_cast<size_t>(i)].empty()) continue;
      if (hits[static_cast<size_t>(i)][static_cast<size_t>(c)] < 0) continue;
      ++total;
      hit += hits[static_cast<size_t>(i)][static_cast<size_t>(c)];
      area_sum += areas[static_cast<size_t>(i)][static_cast<size_t>(c)];
    }
    report.pointing_n[static_cast<size_t>(c)] = static_cast<int>(total);
    if (total > 0) {
      report.pointing_acc[static_cast<size_t>(c)] = static_cast<double>(hit) / total;
      report.chance[static_cast<size_t>(c)] = area_sum / total;
    }
  }
  return report;
}

std::string format_report(const EvalReport& report) {
  auto fmt = [](const std::optional<double>& v) -> std::string {
    if (!v) return "absent";
    char buf[48];
    auto res = std::to_chars(buf, buf + sizeof(buf), *v);
    return std::string(buf, res.ptr);
  };
  std::string out;
  const int C = static_cast<int>(report.auc.size());
  double point_sum = 0.0, chance_sum = 0.0;
  int point_n = 0;
  for (int c = 0; c < C; ++c) {
    out += std::to_string(c) + "," + fmt(report.auc[static_cast<size_t>(c)]) + "," +
           fmt(report.pointing_acc[static_cast<size_t>(c)]) + "," +
           fmt(report.chance[static_cast<size_t>(c)]) + "\n";
    if (report.pointing_acc[static_cast<size_t>(c)]) {
      point_sum += *report.pointing_acc[static_cast<size_t>(c)];
      chance_sum += *report.chance[static_cast<size_t>(c)];
      ++point_n;
    }
  }
  out += "mean," + fmt(report.mean_auc) +
         "," + fmt(point_n ? std::optional<double>(point_sum / point_n) : std::nullopt) +
         "," + fmt(point_n ? std::optional<double>(chance_sum / point_n) : std::nullopt) + "\n";
  return out;
}

}  // namespace weakmap
