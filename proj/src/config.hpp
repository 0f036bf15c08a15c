#ifndef WEAKMAP_CONFIG_HPP_
#define WEAKMAP_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "backbone.hpp"
#include "ops.hpp"

namespace weakmap {

struct TrainConfig {
  int batch_size = 16;
  double lr0 = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  int plateau_patience = 5;
  double plateau_min_delta = 1e-4;
  double lr_decay_factor = 0.1;
  int max_epochs = 20;
  int crop_size = 56;
  uint64_t seed = 1;
};

// Flat key=value run configuration. Every knob of the pipeline lives here;
// unknown keys are rejected and serialize/parse round-trips exactly.
struct RunConfig {
  uint64_t seed = 1;

  // dataset
  int n_samples = 2000;
  int classes = 4;
  int image_size = 64;
  double class_prior = 0.4;
  double label_noise = 0.05;
  int images_per_subject = 3;
  double frac_train = 0.7;
  double frac_val = 0.1;
  double frac_eval = 0.2;

  // backbone
  int input_channels = 1;
  int stem_channels = 16;
  int num_blocks = 3;
  int layers_per_block = 4;
  int growth = 12;
  double compression = 0.5;
  int se_reduction = 16;
  int se = 1;  // 0 disables the SE gate in transitions (ablation)

  // head
  int maps_per_class = 12;
  int k_plus = 1;
  int k_minus = 1;
  double alpha = 0.7;

  // training
  int batch_size = 16;
  double lr0 = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  int plateau_patience = 5;
  double plateau_min_delta = 1e-4;
  double lr_decay_factor = 0.1;
  int max_epochs = 20;
  int crop_size = 56;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  // One key=value per line, keys in canonical order, doubles at full
  // precision. parse(serialize()) is the identity.
  std::string serialize() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load_file(const std::string& path);
  void save_file(const std::string& path) const;

  // Sanity checks on ranges; throws kConfig.
  void validate() const;

  BackboneConfig backbone() const;
  HeadConfig head() const;
  TrainConfig train() const;
};

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace weakmap

#endif  // WEAKMAP_CONFIG_HPP_
