#ifndef WEAKMAP_TRAIN_HPP_
#define WEAKMAP_TRAIN_HPP_

#include <string>
#include <vector>

#include "backbone.hpp"
#include "config.hpp"
#include "rng.hpp"
#include "synthdata.hpp"

namespace weakmap {

// Mean binary cross entropy over classes: -(1/C) sum_c y ln p + (1-y) ln(1-p).
// Probabilities must lie strictly inside (0,1); the sigmoid op guarantees it.
Tensor bce_loss(Tape& tape, const Tensor& probs, const std::vector<int>& labels);

// First/second moment estimates, one slot per trainable tensor in visit
// order; t counts completed steps.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long t = 0;
};

// Bias-corrected Adam update from the accumulated grads. Returns false (and
// touches nothing) if any gradient is non-finite.
bool adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg, double lr);

void zero_grads(ModelParams& params);

// Replays the reduce-on-plateau schedule over the validation-loss history:
// each run of more than `patience` epochs without an improvement better than
// min_delta multiplies the rate by lr_decay_factor, and the counter restarts
// after a decay. Returns the rate for the next epoch.
double plateau_lr(const std::vector<double>& val_history, const TrainConfig& cfg);

// Random crop to crop x crop, then horizontal flip with probability 1/2.
Tensor augment(const Tensor& image, int crop, Rng& rng);
Tensor center_crop(const Tensor& image, int crop);
Tensor hflip(const Tensor& image);

struct EpochLog {
  int epoch;
  double train_loss;
  double val_loss;
  double lr;
};

struct TrainResult {
  ModelParams best_params;
  std::vector<EpochLog> log;
  double best_val_loss = 0.0;
  int best_epoch = 0;
  bool diverged = false;
  int rejected_steps = 0;
};

std::string format_train_log(const std::vector<EpochLog>& log);
std::string format_epoch_line(const EpochLog& entry);

// Weakly-supervised loop: shuffled augmented minibatches in train mode,
// center-crop validation in eval mode after every epoch, snapshot on every
// strict validation improvement. Returns the best snapshot. Non-finite
// losses abort with the last finite snapshot. on_epoch, when given, fires
// after every epoch (append-only log writers hook in here).
TrainResult train_model(ModelParams& params, const BackboneConfig& backbone_cfg,
                        const HeadConfig& head_cfg, const std::vector<Sample>& samples,
                        const DatasetSplit& split, const ChannelStats& stats,
                        const TrainConfig& cfg,
                        const std::function<void(const EpochLog&)>& on_epoch = nullptr);

}  // namespace weakmap

#endif  // WEAKMAP_TRAIN_HPP_
