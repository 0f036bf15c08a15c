#ifndef WEAKMAP_SYNTHDATA_HPP_
#define WEAKMAP_SYNTHDATA_HPP_

#include <array>
#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace weakmap {

// Pixel-space lesion annotation, half-open: [x0,x1) x [y0,y1).
struct Box {
  int class_id;
  int x0, y0, x1, y1;
};

// One synthetic image with noisy image-level labels and hidden ground-truth
// boxes. Box reads are counted so tests can prove training never touches
// them; labels and pixels are the only training inputs.
class Sample {
 public:
  Tensor image;             // [S,S,1], values on the 16-bit grid in [0,1]
  std::vector<int> labels;  // 0/1 per class, after label noise
  int subject_id = 0;
  int id = 0;

  const std::vector<Box>& boxes() const {
    box_reads_.fetch_add(1, std::memory_order_relaxed);
    return boxes_;
  }
  void set_boxes(std::vector<Box> b) { boxes_ = std::move(b); }

  static long box_read_count() { return box_reads_.load(std::memory_order_relaxed); }
  static void reset_box_read_count() { box_reads_.store(0, std::memory_order_relaxed); }

 private:
  std::vector<Box> boxes_;
  inline static std::atomic<long> box_reads_{0};
};

struct GenConfig {
  uint64_t seed = 1;
  int n_samples = 2000;
  int classes = 4;
  int image_size = 64;
  std::vector<double> class_prior;  // one entry per class
  double label_noise = 0.05;
  int images_per_subject = 3;
};

// Lesion archetypes by class id: 0 bright disc, 1 dark disc, 2 ring, 3 bar,
// 4 checker patch, 5 gradient blob, 6 speckle cluster, 7 cross. Textured
// low-frequency background underneath. Each class fires independently with
// its prior; the label noise flips each label bit with the given probability
// without touching the image or its boxes. Deterministic in the seed and
// independent of the worker count (per-sample substreams).
std::vector<Sample> generate_dataset(const GenConfig& cfg);

struct DatasetSplit {
  std::vector<int> train, validation, evaluation;
};

// Shuffles subjects by seed, then fills train and validation up to their
// sample quotas in subject units; the remainder evaluates. All images of a
// subject land in the same part.
DatasetSplit split_by_subject(const std::vector<Sample>& samples,
                              const std::array<double, 3>& fractions, uint64_t seed);

// Per-channel pixel statistics of the training images only.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stdev;  // clamped to >= 1e-8
};

ChannelStats compute_normalization(const std::vector<Sample>& samples,
                                   const std::vector<int>& train_indices);
Tensor apply_normalization(const Tensor& image, const ChannelStats& stats);

// Dataset on disk: index.txt (one record per sample: id, subject, label
// bits, boxes) plus 16-bit PGM images under images/. Round-trips bit-exactly.
void save_dataset(const std::vector<Sample>& samples, const std::string& dir);
std::vector<Sample> load_dataset(const std::string& dir);

// Label vector implied by the boxes (pre-noise truth).
std::vector<int> labels_from_boxes(const Sample& s, int classes);

}  // namespace weakmap

#endif  // WEAKMAP_SYNTHDATA_HPP_
