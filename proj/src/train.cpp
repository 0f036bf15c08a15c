#include "train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace weakmap {

Tensor bce_loss(Tape& tape, const Tensor& probs, const std::vector<int>& labels) {
  WM_CHECK(probs.rank() == 1, ErrorCategory::kDimension,
           "bce_loss: probabilities must be rank 1, got " << shape_str(probs.shape()));
  const int C = probs.extent(0);
  WM_CHECK(static_cast<int>(labels.size()) == C, ErrorCategory::kDimension,
           "bce_loss: " << labels.size() << " labels for " << C << " probabilities");

  Tensor out = tape.alloc({1}, probs.requires_grad());
  auto eval = [C](const Tensor& p, const std::vector<int>& y) {
    double acc = 0.0;
    for (int c = 0; c < C; ++c) {
      const double pc = p.v(c);
      acc += y[static_cast<size_t>(c)] ? std::log(pc) : std::log(1.0 - pc);
    }
    return -acc / C;
  };
  out.v(0) = eval(probs, labels);

  const int pi = tape.id(probs), oi = tape.id(out);
  Tensor p = probs, o = out;
  tape.record(
      "bce_loss", {pi}, oi,
      [p, o, labels, eval](Tape&) { o.v(0) = eval(p, labels); },
      [p, labels, C, pi, oi](Tape& t) {
        if (!t.node(pi).requires_grad()) return;
        const double g = t.adj(oi)[0];
        auto& gp = t.adj(pi);
        for (int c = 0; c < C; ++c) {
          const double pc = p.v(c);
          const double d = labels[static_cast<size_t>(c)] ? -1.0 / pc : 1.0 / (1.0 - pc);
          gp[static_cast<size_t>(c)] += g * d / C;
        }
      });
  return out;
}

bool adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg, double lr) {
  std::vector<Tensor*> tensors;
  params.visit_trainable([&](const std::string&, Tensor& t) { tensors.push_back(&t); });

  if (state.m.empty()) {
    state.m.resize(tensors.size());
    state.v.resize(tensors.size());
    for (size_t i = 0; i < tensors.size(); ++i) {
      state.m[i].assign(tensors[i]->values().size(), 0.0);
      state.v[i].assign(tensors[i]->values().size(), 0.0);
    }
  }
  WM_CHECK(state.m.size() == tensors.size(), ErrorCategory::kInternal,
           "adam_step: optimizer state does not match the parameter list");

  for (Tensor* t : tensors)
    for (int i = 0; i < t->size(); ++i)
      if (!std::isfinite(t->g(i))) return false;

  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < tensors.size(); ++i) {
    Tensor& t = *tensors[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (int j = 0; j < t.size(); ++j) {
      const double g = t.g(j);
      m[static_cast<size_t>(j)] = cfg.beta1 * m[static_cast<size_t>(j)] + (1.0 - cfg.beta1) * g;
      v[static_cast<size_t>(j)] = cfg.beta2 * v[static_cast<size_t>(j)] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[static_cast<size_t>(j)] / bc1;
      const double vhat = v[static_cast<size_t>(j)] / bc2;
      t.v(j) -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
  return true;
}

void zero_grads(ModelParams& params) {
  params.visit_trainable([](const std::string&, Tensor& t) { t.zero_grad(); });
}

double plateau_lr(const std::vector<double>& val_history, const TrainConfig& cfg) {
  double best = std::numeric_limits<double>::infinity();
  int bad = 0;
  double lr = cfg.lr0;
  for (double loss : val_history) {
    if (loss < best - cfg.plateau_min_delta) {  // strict: improving by exactly
      best = loss;                              // min_delta does not count
      bad = 0;
    } else {
      ++bad;
    }
    if (bad > cfg.plateau_patience) {
      lr *= cfg.lr_decay_factor;
      bad = 0;
    }
  }
  return lr;
}

Tensor center_crop(const Tensor& image, int crop) {
  const int S = image.extent(0), C = image.extent(2);
  WM_CHECK(crop >= 1 && crop <= S && crop <= image.extent(1), ErrorCategory::kDimension,
           "center_crop: crop " << crop << " exceeds image " << shape_str(image.shape()));
  const int oy = (image.extent(0) - crop) / 2;
  const int ox = (image.extent(1) - crop) / 2;
  Tensor out(Shape{crop, crop, C});
  const int W = image.extent(1);
  for (int y = 0; y < crop; ++y)
    for (int x = 0; x < crop; ++x)
      for (int c = 0; c < C; ++c)
        out.v((y * crop + x) * C + c) = image.v(((y + oy) * W + x + ox) * C + c);
  return out;
}

Tensor hflip(const Tensor& image) {
  const int H = image.extent(0), W = image.extent(1), C = image.extent(2);
  Tensor out(Shape{H, W, C});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c)
        out.v((y * W + x) * C + c) = image.v((y * W + (W - 1 - x)) * C + c);
  return out;
}

Tensor augment(const Tensor& image, int crop, Rng& rng) {
  const int H = image.extent(0), W = image.extent(1), C = image.extent(2);
  WM_CHECK(crop >= 1 && crop <= H && crop <= W, ErrorCategory::kDimension,
           "augment: crop " << crop << " exceeds image " << shape_str(image.shape()));
  const int oy = rng.uniform_int(0, H - crop);
  const int ox = rng.uniform_int(0, W - crop);
  const bool flip = rng.bernoulli(0.5);
  Tensor out(Shape{crop, crop, C});
  for (int y = 0; y < crop; ++y)
    for (int x = 0; x < crop; ++x) {
      const int sx = flip ? ox + crop - 1 - x : ox + x;
      for (int c = 0; c < C; ++c)
        out.v((y * crop + x) * C + c) = image.v(((y + oy) * W + sx) * C + c);
    }
  return out;
}

std::string format_epoch_line(const EpochLog& entry) {
  auto fmt = [](char* dst, size_t cap, double v) {
    auto res = std::to_chars(dst, dst + cap, v);
    *res.ptr = '\0';
    return dst;
  };
  char buf[160], a[32], b[32], c[32];
  std::snprintf(buf, sizeof(buf), "%d,%s,%s,%s\n", entry.epoch,
                fmt(a, sizeof(a), entry.train_loss), fmt(b, sizeof(b), entry.val_loss),
                fmt(c, sizeof(c), entry.lr));
  return buf;
}

std::string format_train_log(const std::vector<EpochLog>& log) {
  std::string out;
  for (const EpochLog& e : log) out += format_epoch_line(e);
  return out;
}

namespace {

double validation_loss(ModelParams& params, const BackboneConfig& backbone_cfg,
                       const HeadConfig& head_cfg, const std::vector<Sample>& samples,
                       const std::vector<int>& indices, const ChannelStats& stats, int crop) {
  double acc = 0.0;
  for (int idx : indices) {
    const Sample& s = samples[static_cast<size_t>(idx)];
    Tensor img = apply_normalization(center_crop(s.image, crop), stats);
    Tape tape;
    ClassScores out = model_forward(tape, img, params, backbone_cfg, head_cfg, Mode::kEval);
    acc += bce_loss(tape, out.probs, s.labels).v(0);
  }
  return acc / static_cast<double>(indices.size());
}

}  // namespace

TrainResult train_model(ModelParams& params, const BackboneConfig& backbone_cfg,
                        const HeadConfig& head_cfg, const std::vector<Sample>& samples,
                        const DatasetSplit& split, const ChannelStats& stats,
                        const TrainConfig& cfg,
                        const std::function<void(const EpochLog&)>& on_epoch) {
  WM_CHECK(!split.train.empty() && !split.validation.empty(), ErrorCategory::kConfig,
           "train_model: train and validation parts must be non-empty");
  for (int idx : split.train) {
    const Sample& s = samples[static_cast<size_t>(idx)];
    WM_CHECK(static_cast<int>(s.labels.size()) == head_cfg.classes, ErrorCategory::kDimension,
             "train_model: sample " << s.id << " has " << s.labels.size() << " labels, model has "
                                    << head_cfg.classes << " classes");
  }

  TrainResult result;
  AdamState adam;
  std::vector<double> val_history;
  double best = std::numeric_limits<double>::infinity();
  ModelParams snapshot = params.clone();
  int best_epoch = 0;

  std::vector<int> order = split.train;
  const int n_train = static_cast<int>(order.size());

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = plateau_lr(val_history, cfg);

    Rng shuffle_rng(mix_seed(cfg.seed, 0xE70C000ULL + static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double train_loss_sum = 0.0;
    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int batch_end = std::min(start + cfg.batch_size, n_train);
      const int batch_n = batch_end - start;
      for (int b = start; b < batch_end; ++b) {
        const Sample& s = samples[static_cast<size_t>(order[static_cast<size_t>(b)])];
        Rng aug_rng(mix_seed(cfg.seed, 0xA06000000ULL +
                                           static_cast<uint64_t>(epoch) * 1000003ULL +
                                           static_cast<uint64_t>(s.id)));
        Tensor img = apply_normalization(augment(s.image, cfg.crop_size, aug_rng), stats);
        Tape tape;
        ClassScores out = model_forward(tape, img, params, backbone_cfg, head_cfg, Mode::kTrain);
        Tensor loss = bce_loss(tape, out.probs, s.labels);
        train_loss_sum += loss.v(0);
        // scaling the loss scales the accumulated grads: batch mean
        tape.backward(scalar_mul(tape, loss, 1.0 / batch_n));
      }
      if (!adam_step(params, adam, cfg, lr)) ++result.rejected_steps;
      zero_grads(params);
    }
    const double train_loss = train_loss_sum / n_train;

    const double val_loss = validation_loss(params, backbone_cfg, head_cfg, samples,
                                            split.validation, stats, cfg.crop_size);
    result.log.push_back(EpochLog{epoch, train_loss, val_loss, lr});
    if (on_epoch) on_epoch(result.log.back());

    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      result.diverged = true;
      break;
    }
    if (val_loss < best) {
      best = val_loss;
      snapshot = params.clone();
      best_epoch = epoch;
    }
    val_history.push_back(val_loss);
  }

  result.best_params = std::move(snapshot);
  result.best_val_loss = best;
  result.best_epoch = best_epoch;
  return result;
}

}  // namespace weakmap
