#ifndef WEAKMAP_PIPELINE_HPP_
#define WEAKMAP_PIPELINE_HPP_

#include <string>
#include <vector>

#include "config.hpp"

namespace weakmap {

// Command-level entry points. Each is deterministic given its config and
// writes its artifacts with atomic file replacement.

struct GenSummary {
  int n_samples = 0;
  std::vector<long> positives;  // per class, after label noise
  std::string text;             // printable per-class summary
};

// Generates the dataset into out_dir (index.txt + images/). Refuses to touch
// an existing directory unless force is set.
GenSummary run_gen(const RunConfig& cfg, const std::string& out_dir, bool force);

struct TrainSummary {
  double best_val_loss = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  bool diverged = false;
  std::string checkpoint_path;
  std::string log_path;
  std::string text;
};

// Trains on the dataset in data_dir and writes model.ckpt + train.log into
// out_dir. An existing checkpoint is only overwritten with force.
TrainSummary run_train(const RunConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir, bool force);

// Evaluates a checkpoint on the evaluation split of the dataset; writes
// report.txt into out_dir and returns the report text. The architecture and
// split come from the configuration embedded in the checkpoint.
std::string run_eval(const std::string& checkpoint_path, const std::string& data_dir,
                     const std::string& out_dir);

// Writes one 8-bit PGM heatmap per class for each requested sample id, named
// "<sample>_<class>.pgm", at image resolution (min-max normalized rendering).
void run_heatmap(const std::string& checkpoint_path, const std::string& data_dir,
                 const std::vector<int>& sample_ids, const std::string& out_dir);

// Gradient-check table over all operators; all_pass reports the verdict.
std::string run_gradcheck(uint64_t seed, bool* all_pass);

}  // namespace weakmap

#endif  // WEAKMAP_PIPELINE_HPP_
