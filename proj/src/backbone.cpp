#include "backbone.hpp"

#include <cmath>

#include "rng.hpp"

namespace weakmap {

namespace {

int transition_out_channels(int in_channels, double compression) {
  int out = static_cast<int>(std::floor(compression * in_channels));
  return out < 1 ? 1 : out;
}

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape), true);
  const double sd = std::sqrt(2.0 / fan_in);
  for (int i = 0; i < t.size(); ++i) t.v(i) = rng.normal(0.0, sd);
  return t;
}

}  // namespace

int backbone_out_channels(const BackboneConfig& cfg) {
  int c = cfg.stem_channels;
  for (int b = 0; b < cfg.num_blocks; ++b) {
    c += cfg.layers_per_block * cfg.growth;
    if (b + 1 < cfg.num_blocks) c = transition_out_channels(c, cfg.compression);
  }
  return c;
}

void ModelParams::visit_trainable(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("stem.conv.w", stem_w);
  fn("stem.conv.b", stem_b);
  for (size_t b = 0; b < blocks.size(); ++b) {
    for (size_t l = 0; l < blocks[b].size(); ++l) {
      const std::string prefix = "block" + std::to_string(b) + ".layer" + std::to_string(l);
      fn(prefix + ".bn.gamma", blocks[b][l].bn_gamma);
      fn(prefix + ".bn.beta", blocks[b][l].bn_beta);
      fn(prefix + ".conv.w", blocks[b][l].conv_w);
      fn(prefix + ".conv.b", blocks[b][l].conv_b);
    }
  }
  for (size_t t = 0; t < transitions.size(); ++t) {
    const std::string prefix = "transition" + std::to_string(t);
    fn(prefix + ".conv.w", transitions[t].conv_w);
    fn(prefix + ".conv.b", transitions[t].conv_b);
    fn(prefix + ".se.w1", transitions[t].se.w1);
    fn(prefix + ".se.w2", transitions[t].se.w2);
  }
  fn("head.conv.w", head_w);
  fn("head.conv.b", head_b);
}

void ModelParams::visit_buffers(const std::function<void(const std::string&, RunningStats&)>& fn) {
  for (size_t b = 0; b < blocks.size(); ++b)
    for (size_t l = 0; l < blocks[b].size(); ++l)
      fn("block" + std::to_string(b) + ".layer" + std::to_string(l) + ".bn",
         blocks[b][l].bn_stats);
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  out.stem_w = stem_w.clone();
  out.stem_b = stem_b.clone();
  out.blocks.resize(blocks.size());
  for (size_t b = 0; b < blocks.size(); ++b) {
    for (const auto& layer : blocks[b]) {
      DenseLayerParams lp;
      lp.bn_gamma = layer.bn_gamma.clone();
      lp.bn_beta = layer.bn_beta.clone();
      lp.bn_stats = layer.bn_stats;
      lp.conv_w = layer.conv_w.clone();
      lp.conv_b = layer.conv_b.clone();
      out.blocks[b].push_back(std::move(lp));
    }
  }
  for (const auto& t : transitions) {
    TransitionParams tp;
    tp.conv_w = t.conv_w.clone();
    tp.conv_b = t.conv_b.clone();
    tp.se.w1 = t.se.w1.clone();
    tp.se.w2 = t.se.w2.clone();
    tp.se.reduction = t.se.reduction;
    out.transitions.push_back(std::move(tp));
  }
  out.head_w = head_w.clone();
  out.head_b = head_b.clone();
  return out;
}

bool ModelParams::all_finite() {
  bool ok = true;
  visit_trainable([&ok](const std::string&, Tensor& t) {
    for (int i = 0; i < t.size(); ++i)
      if (!std::isfinite(t.v(i))) ok = false;
  });
  return ok;
}

ModelParams init_params(const BackboneConfig& cfg, const HeadConfig& head, uint64_t seed) {
  WM_CHECK(cfg.input_channels >= 1 && cfg.stem_channels >= 1 && cfg.num_blocks >= 1 &&
               cfg.layers_per_block >= 1 && cfg.growth >= 1,
           ErrorCategory::kConfig, "init_params: non-positive backbone dimensions");
  WM_CHECK(cfg.compression > 0.0 && cfg.compression <= 1.0, ErrorCategory::kConfig,
           "init_params: compression must be in (0,1], got " << cfg.compression);
  WM_CHECK(head.maps_per_class >= 1 && head.classes >= 1, ErrorCategory::kConfig,
           "init_params: head needs positive M and C");

  ModelParams p;
  uint64_t stream = 0;
  auto next_rng = [&]() { return Rng(mix_seed(seed, stream++)); };

  {
    Rng rng = next_rng();
    p.stem_w = he_normal({3, 3, cfg.input_channels, cfg.stem_channels},
                         3 * 3 * cfg.input_channels, rng);
    p.stem_b = Tensor(Shape{cfg.stem_channels}, true);
  }

  int c = cfg.stem_channels;
  p.blocks.resize(static_cast<size_t>(cfg.num_blocks));
  for (int b = 0; b < cfg.num_blocks; ++b) {
    for (int l = 0; l < cfg.layers_per_block; ++l) {
      DenseLayerParams lp;
      lp.bn_gamma = Tensor::full({c}, 1.0, true);
      lp.bn_beta = Tensor(Shape{c}, true);
      lp.bn_stats.init(c);
      Rng rng = next_rng();
      lp.conv_w = he_normal({3, 3, c, cfg.growth}, 3 * 3 * c, rng);
      lp.conv_b = Tensor(Shape{cfg.growth}, true);
      p.blocks[static_cast<size_t>(b)].push_back(std::move(lp));
      c += cfg.growth;
    }
    if (b + 1 < cfg.num_blocks) {
      TransitionParams tp;
      const int out_c = transition_out_channels(c, cfg.compression);
      Rng rng = next_rng();
      tp.conv_w = he_normal({1, 1, c, out_c}, c, rng);
      tp.conv_b = Tensor(Shape{out_c}, true);
      const int hidden = se_hidden_width(out_c, cfg.se_reduction);
      Rng rng1 = next_rng();
      tp.se.w1 = he_normal({hidden, out_c}, out_c, rng1);
      Rng rng2 = next_rng();
      tp.se.w2 = he_normal({out_c, hidden}, hidden, rng2);
      tp.se.reduction = cfg.se_reduction;
      p.transitions.push_back(std::move(tp));
      c = out_c;
    }
  }

  {
    Rng rng = next_rng();
    const int mc = head.maps_per_class * head.classes;
    p.head_w = he_normal({1, 1, c, mc}, c, rng);
    p.head_b = Tensor(Shape{mc}, true);
  }
  return p;
}

Tensor dense_layer(Tape& tape, const Tensor& x, DenseLayerParams& params, Mode mode) {
  Tensor h = batchnorm(tape, x, params.bn_gamma, params.bn_beta, mode == Mode::kTrain,
                       &params.bn_stats);
  h = relu(tape, h);
  h = conv2d(tape, h, params.conv_w, &params.conv_b, 1, 1);
  return concat_channels(tape, x, h);
}

Tensor transition(Tape& tape, const Tensor& x, TransitionParams& params, bool se_enabled,
                  Mode mode) {
  (void)mode;
  WM_CHECK(x.extent(0) % 2 == 0 && x.extent(1) % 2 == 0, ErrorCategory::kDimension,
           "transition: spatial extents must be even, got " << shape_str(x.shape()));
  Tensor h = conv2d(tape, x, params.conv_w, &params.conv_b, 1, 0);
  if (se_enabled) h = se_block(tape, h, params.se);
  return avg_pool2d(tape, h, 2, 2);
}

Tensor backbone_forward(Tape& tape, const Tensor& image, ModelParams& params,
                        const BackboneConfig& cfg, Mode mode) {
  WM_CHECK(image.rank() == 3, ErrorCategory::kDimension,
           "backbone: image must be [H,W,C], got " << shape_str(image.shape()));
  WM_CHECK(image.extent(2) == cfg.input_channels, ErrorCategory::kDimension,
           "backbone: image has " << image.extent(2) << " channels, config expects "
                                  << cfg.input_channels);
  const int div = backbone_total_stride(cfg);
  WM_CHECK(image.extent(0) % div == 0 && image.extent(1) % div == 0, ErrorCategory::kDimension,
           "backbone: input " << image.extent(0) << "x" << image.extent(1)
                              << " must be divisible by " << div << " (stem stride 2, "
                              << (cfg.num_blocks - 1) << " transitions)");

  Tensor h = conv2d(tape, image, params.stem_w, &params.stem_b, 2, 1);
  for (int b = 0; b < cfg.num_blocks; ++b) {
    for (auto& layer : params.blocks[static_cast<size_t>(b)])
      h = dense_layer(tape, h, layer, mode);
    if (b + 1 < cfg.num_blocks)
      h = transition(tape, h, params.transitions[static_cast<size_t>(b)], cfg.se_enabled, mode);
  }
  return h;
}

ClassScores model_forward(Tape& tape, const Tensor& image, ModelParams& params,
                          const BackboneConfig& cfg, const HeadConfig& head, Mode mode) {
  Tensor features = backbone_forward(tape, image, params, cfg, mode);
  return head_forward(tape, features, params.head_w, params.head_b, head);
}

}  // namespace weakmap
