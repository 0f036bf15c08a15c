#include "ops.hpp"

#include <algorithm>
#include <numeric>

namespace weakmap {

Tensor squeeze(Tape& tape, const Tensor& feature_maps) {
  return global_avg_pool(tape, feature_maps);
}

Tensor excite(Tape& tape, const Tensor& squeezed, const SEParams& params) {
  WM_CHECK(squeezed.rank() == 1, ErrorCategory::kDimension,
           "excite: squeezed input must be rank 1, got " << shape_str(squeezed.shape()));
  const int C = squeezed.extent(0);
  WM_CHECK(params.w1.rank() == 2 && params.w1.extent(1) == C, ErrorCategory::kDimension,
           "excite: W1 " << shape_str(params.w1.shape()) << " incompatible with " << C
                         << " channels");
  WM_CHECK(params.w2.rank() == 2 && params.w2.extent(0) == C &&
               params.w2.extent(1) == params.w1.extent(0),
           ErrorCategory::kDimension,
           "excite: W2 " << shape_str(params.w2.shape()) << " incompatible with W1 "
                         << shape_str(params.w1.shape()));
  Tensor hidden = relu(tape, dense(tape, squeezed, params.w1, nullptr));
  return sigmoid(tape, dense(tape, hidden, params.w2, nullptr));
}

Tensor recalibrate(Tape& tape, const Tensor& feature_maps, const Tensor& gate) {
  WM_CHECK(feature_maps.rank() == 3 && gate.rank() == 1 &&
               gate.extent(0) == feature_maps.extent(2),
           ErrorCategory::kDimension,
           "recalibrate: gate " << shape_str(gate.shape()) << " does not match feature maps "
                                << shape_str(feature_maps.shape()));
  return elementwise_mul(tape, feature_maps, gate);
}

Tensor se_block(Tape& tape, const Tensor& feature_maps, const SEParams& params) {
  return recalibrate(tape, feature_maps, excite(tape, squeeze(tape, feature_maps), params));
}

Tensor multi_map_transfer(Tape& tape, const Tensor& features, const Tensor& weights,
                          const Tensor& bias, const HeadConfig& config) {
  const int expected = config.maps_per_class * config.classes;
  WM_CHECK(weights.rank() == 4 && weights.extent(0) == 1 && weights.extent(1) == 1,
           ErrorCategory::kDimension,
           "multi_map_transfer: weights must be a 1x1 kernel, got " << shape_str(weights.shape()));
  WM_CHECK(weights.extent(3) == expected, ErrorCategory::kDimension,
           "multi_map_transfer: weights produce " << weights.extent(3) << " maps, config needs "
                                                  << config.maps_per_class << "x" << config.classes
                                                  << " = " << expected);
  return conv2d(tape, features, weights, &bias, 1, 0);
}

Tensor class_wise_avg(Tape& tape, const Tensor& maps, int maps_per_class) {
  WM_CHECK(maps.rank() == 3, ErrorCategory::kDimension,
           "class_wise_avg: input must be [h,w,M*C], got " << shape_str(maps.shape()));
  WM_CHECK(maps_per_class >= 1, ErrorCategory::kDimension,
           "class_wise_avg: maps_per_class must be >= 1, got " << maps_per_class);
  const int h = maps.extent(0), w = maps.extent(1), MC = maps.extent(2);
  WM_CHECK(MC % maps_per_class == 0, ErrorCategory::kDimension,
           "class_wise_avg: " << MC << " channels not divisible by M = " << maps_per_class);
  const int C = MC / maps_per_class;
  const int M = maps_per_class;

  Tensor out = tape.alloc({h, w, C}, maps.requires_grad());
  const int xi = tape.id(maps), oi = tape.id(out);
  Tensor x = maps, o = out;
  auto fwd = [x, o, h, w, C, M](Tape&) {
    for (int i = 0; i < h * w; ++i)
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int m = 0; m < M; ++m) acc += x.v(i * C * M + c * M + m);
        o.v(i * C + c) = acc / M;
      }
  };
  fwd(tape);
  tape.record(
      "class_wise_avg", {xi}, oi, fwd,
      [h, w, C, M, xi, oi](Tape& t) {
        if (!t.node(xi).requires_grad()) return;
        const auto& gy = t.adj(oi);
        auto& gx = t.adj(xi);
        const double inv = 1.0 / M;
        for (int i = 0; i < h * w; ++i)
          for (int c = 0; c < C; ++c) {
            const double g = gy[static_cast<size_t>(i * C + c)] * inv;
            for (int m = 0; m < M; ++m) gx[static_cast<size_t>(i * C * M + c * M + m)] += g;
          }
      });
  return out;
}

namespace {

// Indices of the k extreme entries of one channel, in ascending row-major
// order. Ties resolve toward lower indices (stable sort on value only).
std::vector<int> select_extremes(const Tensor& maps, int channel, int stride, int count,
                                 int k, bool largest, double* boundary_gap) {
  std::vector<int> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  if (largest) {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return maps.v(a * stride + channel) > maps.v(b * stride + channel);
    });
  } else {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return maps.v(a * stride + channel) < maps.v(b * stride + channel);
    });
  }
  if (boundary_gap) {
    *boundary_gap = k < count
                        ? std::abs(maps.v(order[static_cast<size_t>(k - 1)] * stride + channel) -
                                   maps.v(order[static_cast<size_t>(k)] * stride + channel))
                        : std::numeric_limits<double>::infinity();
  }
  order.resize(static_cast<size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

Tensor max_min_pool(Tape& tape, const Tensor& class_maps, const HeadConfig& config) {
  WM_CHECK(class_maps.rank() == 3, ErrorCategory::kDimension,
           "max_min_pool: input must be [h,w,C], got " << shape_str(class_maps.shape()));
  const int h = class_maps.extent(0), w = class_maps.extent(1), C = class_maps.extent(2);
  const int hw = h * w;
  const int kp = config.k_plus, km = config.k_minus;
  WM_CHECK(kp >= 1, ErrorCategory::kDimension, "max_min_pool: k_plus must be >= 1, got " << kp);
  WM_CHECK(km >= 0, ErrorCategory::kDimension, "max_min_pool: k_minus must be >= 0, got " << km);
  WM_CHECK(kp <= hw, ErrorCategory::kDimension,
           "max_min_pool: k_plus " << kp << " exceeds spatial size " << h << "x" << w);
  WM_CHECK(km <= hw, ErrorCategory::kDimension,
           "max_min_pool: k_minus " << km << " exceeds spatial size " << h << "x" << w);
  const double alpha = config.alpha;

  Tensor out = tape.alloc({C}, class_maps.requires_grad());
  // per-class selections are captured for the backward scatter
  std::vector<std::vector<int>> top(static_cast<size_t>(C)), bottom(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) {
    double gap = 0.0;
    top[static_cast<size_t>(c)] = select_extremes(class_maps, c, C, hw, kp, true, &gap);
    tape.note_kink(gap);
    double acc = 0.0;
    for (int idx : top[static_cast<size_t>(c)]) acc += class_maps.v(idx * C + c);
    double r = acc / kp;
    if (km > 0) {
      bottom[static_cast<size_t>(c)] = select_extremes(class_maps, c, C, hw, km, false, &gap);
      tape.note_kink(gap);
      double accb = 0.0;
      for (int idx : bottom[static_cast<size_t>(c)]) accb += class_maps.v(idx * C + c);
      r += alpha * (accb / km);
    }
    out.v(c) = r;
  }

  const int xi = tape.id(class_maps), oi = tape.id(out);
  Tensor x = class_maps, o = out;
  tape.record(
      "max_min_pool", {xi}, oi,
      [x, o, top, bottom, C, kp, km, alpha](Tape&) {
        // replay reuses the recorded selections; values are identical so the
        // selections still apply
        for (int c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int idx : top[static_cast<size_t>(c)]) acc += x.v(idx * C + c);
          double r = acc / kp;
          if (km > 0) {
            double accb = 0.0;
            for (int idx : bottom[static_cast<size_t>(c)]) accb += x.v(idx * C + c);
            r += alpha * (accb / km);
          }
          o.v(c) = r;
        }
      },
      [top, bottom, C, kp, km, alpha, xi, oi](Tape& t) {
        if (!t.node(xi).requires_grad()) return;
        const auto& gy = t.adj(oi);
        auto& gx = t.adj(xi);
        for (int c = 0; c < C; ++c) {
          const double g = gy[static_cast<size_t>(c)];
          for (int idx : top[static_cast<size_t>(c)])
            gx[static_cast<size_t>(idx * C + c)] += g / kp;
          if (km > 0)
            for (int idx : bottom[static_cast<size_t>(c)])
              gx[static_cast<size_t>(idx * C + c)] += g * alpha / km;
        }
      });
  return out;
}

ClassScores head_forward(Tape& tape, const Tensor& features, const Tensor& weights,
                         const Tensor& bias, const HeadConfig& config) {
  Tensor maps = multi_map_transfer(tape, features, weights, bias, config);
  Tensor zbar = class_wise_avg(tape, maps, config.maps_per_class);
  Tensor scores = max_min_pool(tape, zbar, config);
  return ClassScores{scores, sigmoid(tape, scores)};
}

}  // namespace weakmap
