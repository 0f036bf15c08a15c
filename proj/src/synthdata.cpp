#include "synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "bilinear.hpp"
#include "parallel.hpp"
#include "pgm.hpp"
#include "rng.hpp"

namespace weakmap {

namespace {

// Tracks the tight bounding box of everything a lesion paints.
struct Painter {
  Tensor& canvas;
  int size;
  int min_x = 1 << 30, min_y = 1 << 30, max_x = -1, max_y = -1;

  void put(int x, int y, double delta) {
    if (x < 0 || x >= size || y < 0 || y >= size) return;
    canvas.v(y * size + x) += delta;
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
  }

  bool painted() const { return max_x >= 0; }
  Box box(int class_id) const { return Box{class_id, min_x, min_y, max_x + 1, max_y + 1}; }
};

void paint_disc(Painter& p, double cx, double cy, double r, double delta) {
  for (int y = static_cast<int>(cy - r); y <= static_cast<int>(cy + r) + 1; ++y)
    for (int x = static_cast<int>(cx - r); x <= static_cast<int>(cx + r) + 1; ++x) {
      const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      if (d2 <= r * r) p.put(x, y, delta);
    }
}

void paint_rect(Painter& p, double cx, double cy, double hx, double hy, double delta) {
  for (int y = static_cast<int>(cy - hy); y <= static_cast<int>(cy + hy) + 1; ++y)
    for (int x = static_cast<int>(cx - hx); x <= static_cast<int>(cx + hx) + 1; ++x)
      if (std::abs(x - cx) <= hx && std::abs(y - cy) <= hy) p.put(x, y, delta);
}

// One lesion of the given archetype; returns its tight box. Shapes need to
// survive a 64 -> 8 downsampling path, so thin structures get generous
// minimum thicknesses and strong contrast against the [0.25, 0.45] backdrop.
Box render_lesion(Tensor& canvas, int size, int archetype, Rng& rng) {
  Painter p{canvas, size};
  const double r = std::max(3.0, rng.uniform(0.09, 0.17) * size);
  const double reach = (archetype == 3 || archetype == 7) ? 1.5 * r : r;
  const double cx = rng.uniform(reach + 1.0, size - 2.0 - reach);
  const double cy = rng.uniform(reach + 1.0, size - 2.0 - reach);

  switch (archetype) {
    case 0:  // bright disc
      paint_disc(p, cx, cy, r, 0.5);
      break;
    case 1:  // dark disc
      paint_disc(p, cx, cy, r, -0.4);
      break;
    case 2: {  // ring
      const double inner = 0.45 * r;
      for (int y = static_cast<int>(cy - r); y <= static_cast<int>(cy + r) + 1; ++y)
        for (int x = static_cast<int>(cx - r); x <= static_cast<int>(cx + r) + 1; ++x) {
          const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          if (d2 <= r * r && d2 >= inner * inner) p.put(x, y, 0.55);
        }
      break;
    }
    case 3: {  // bar, axis aligned
      const double half_len = 1.5 * r;
      const double half_thick = std::max(2.5, 0.45 * r);
      if (rng.bernoulli(0.5))
        paint_rect(p, cx, cy, half_len, half_thick, 0.5);
      else
        paint_rect(p, cx, cy, half_thick, half_len, 0.5);
      break;
    }
    case 4: {  // checker patch
      const int cell = std::max(2, size / 16);
      for (int y = static_cast<int>(cy - r); y <= static_cast<int>(cy + r) + 1; ++y)
        for (int x = static_cast<int>(cx - r); x <= static_cast<int>(cx + r) + 1; ++x) {
          if (std::abs(x - cx) > r || std::abs(y - cy) > r) continue;
          const bool on = ((x / cell) + (y / cell)) % 2 == 0;
          p.put(x, y, on ? 0.45 : -0.3);
        }
      break;
    }
    case 5: {  // gradient blob
      for (int y = static_cast<int>(cy - r); y <= static_cast<int>(cy + r) + 1; ++y)
        for (int x = static_cast<int>(cx - r); x <= static_cast<int>(cx + r) + 1; ++x) {
          const double d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
          if (d <= r) p.put(x, y, 0.6 * (1.0 - d / r));
        }
      break;
    }
    case 6: {  // speckle cluster
      const int dots = 10 + rng.uniform_int(0, 6);
      for (int i = 0; i < dots; ++i) {
        const double ang = rng.uniform(0.0, 6.283185307179586);
        const double rad = rng.uniform(0.0, r - 1.0);
        paint_disc(p, cx + rad * std::cos(ang), cy + rad * std::sin(ang), 1.8, 0.5);
      }
      break;
    }
    case 7: {  // cross
      const double half_len = 1.4 * r;
      const double half_thick = std::max(2.0, 0.35 * r);
      paint_rect(p, cx, cy, half_len, half_thick, 0.5);
      for (int y = static_cast<int>(cy - half_len); y <= static_cast<int>(cy + half_len) + 1; ++y)
        for (int x = static_cast<int>(cx - half_thick); x <= static_cast<int>(cx + half_thick) + 1;
             ++x)
          if (std::abs(x - cx) <= half_thick && std::abs(y - cy) <= half_len &&
              !(std::abs(y - cy) <= half_thick))  // horizontal arm already painted
            p.put(x, y, 0.5);
      break;
    }
    default:
      WM_FAIL(ErrorCategory::kInternal, "unknown lesion archetype " << archetype);
  }
  WM_CHECK(p.painted(), ErrorCategory::kInternal, "lesion archetype " << archetype
                                                                      << " painted nothing");
  return p.box(archetype);
}

Sample make_sample(const GenConfig& cfg, int index) {
  Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(index)));
  const int S = cfg.image_size;

  Sample s;
  s.id = index;
  s.subject_id = index / cfg.images_per_subject;
  s.image = Tensor(Shape{S, S, 1});

  // low-frequency textured background
  const int G = 8;
  std::vector<double> coarse(G * G);
  for (auto& v : coarse) v = rng.uniform(0.25, 0.45);
  std::vector<double> bg = bilinear_resize(coarse, G, G, S, S);
  for (int i = 0; i < S * S; ++i) s.image.v(i) = bg[static_cast<size_t>(i)] + rng.uniform(-0.02, 0.02);

  std::vector<int> truth(static_cast<size_t>(cfg.classes), 0);
  for (int c = 0; c < cfg.classes; ++c)
    truth[static_cast<size_t>(c)] = rng.bernoulli(cfg.class_prior[static_cast<size_t>(c)]) ? 1 : 0;

  std::vector<Box> boxes;
  for (int c = 0; c < cfg.classes; ++c)
    if (truth[static_cast<size_t>(c)]) boxes.push_back(render_lesion(s.image, S, c, rng));
  s.set_boxes(std::move(boxes));

  for (int i = 0; i < S * S; ++i) s.image.v(i) = quantize16(s.image.v(i));

  // label noise: each bit flips independently; the image and its boxes stay
  // truthful
  s.labels = truth;
  for (int c = 0; c < cfg.classes; ++c)
    if (rng.bernoulli(cfg.label_noise)) s.labels[static_cast<size_t>(c)] ^= 1;
  return s;
}

}  // namespace

std::vector<Sample> generate_dataset(const GenConfig& cfg) {
  WM_CHECK(cfg.classes >= 1 && cfg.classes <= 8, ErrorCategory::kConfig,
           "generate_dataset: classes must be in [1,8] (8 archetypes available), got "
               << cfg.classes);
  WM_CHECK(static_cast<int>(cfg.class_prior.size()) == cfg.classes, ErrorCategory::kConfig,
           "generate_dataset: need one class_prior per class");
  WM_CHECK(cfg.image_size >= 16, ErrorCategory::kConfig,
           "generate_dataset: image_size must be >= 16, got " << cfg.image_size);
  WM_CHECK(cfg.n_samples >= 1 && cfg.images_per_subject >= 1, ErrorCategory::kConfig,
           "generate_dataset: n_samples and images_per_subject must be positive");

  std::vector<Sample> samples(static_cast<size_t>(cfg.n_samples));
  parallel_for(cfg.n_samples,
               [&](int i) { samples[static_cast<size_t>(i)] = make_sample(cfg, i); });
  return samples;
}

DatasetSplit split_by_subject(const std::vector<Sample>& samples,
                              const std::array<double, 3>& fractions, uint64_t seed) {
  const double frac_sum = fractions[0] + fractions[1] + fractions[2];
  WM_CHECK(std::abs(frac_sum - 1.0) < 1e-9, ErrorCategory::kConfig,
           "split fractions must sum to 1, got " << frac_sum);

  std::map<int, std::vector<int>> by_subject;
  for (size_t i = 0; i < samples.size(); ++i)
    by_subject[samples[i].subject_id].push_back(static_cast<int>(i));
  WM_CHECK(by_subject.size() >= 3, ErrorCategory::kConfig,
           "split_by_subject: need at least 3 subjects, got " << by_subject.size());

  std::vector<int> subjects;
  subjects.reserve(by_subject.size());
  for (const auto& [sid, _] : by_subject) subjects.push_back(sid);
  Rng rng(mix_seed(seed, 0x5911357ULL));
  rng.shuffle(subjects);

  const auto n = static_cast<double>(samples.size());
  const long quota_train = std::lround(fractions[0] * n);
  const long quota_val = std::lround(fractions[1] * n);

  DatasetSplit split;
  for (int sid : subjects) {
    const auto& idx = by_subject[sid];
    if (static_cast<long>(split.train.size()) < quota_train)
      split.train.insert(split.train.end(), idx.begin(), idx.end());
    else if (static_cast<long>(split.validation.size()) < quota_val)
      split.validation.insert(split.validation.end(), idx.begin(), idx.end());
    else
      split.evaluation.insert(split.evaluation.end(), idx.begin(), idx.end());
  }
  return split;
}

ChannelStats compute_normalization(const std::vector<Sample>& samples,
                                   const std::vector<int>& train_indices) {
  WM_CHECK(!train_indices.empty(), ErrorCategory::kConfig,
           "compute_normalization: empty training set");
  const int C = samples[static_cast<size_t>(train_indices[0])].image.extent(2);
  ChannelStats stats;
  stats.mean.assign(static_cast<size_t>(C), 0.0);
  stats.stdev.assign(static_cast<size_t>(C), 0.0);
  long count = 0;
  for (int idx : train_indices) {
    const Tensor& img = samples[static_cast<size_t>(idx)].image;
    const int HW = img.extent(0) * img.extent(1);
    for (int i = 0; i < HW; ++i)
      for (int c = 0; c < C; ++c) stats.mean[static_cast<size_t>(c)] += img.v(i * C + c);
    count += HW;
  }
  for (int c = 0; c < C; ++c) stats.mean[static_cast<size_t>(c)] /= static_cast<double>(count);
  for (int idx : train_indices) {
    const Tensor& img = samples[static_cast<size_t>(idx)].image;
    const int HW = img.extent(0) * img.extent(1);
    for (int i = 0; i < HW; ++i)
      for (int c = 0; c < C; ++c) {
        const double d = img.v(i * C + c) - stats.mean[static_cast<size_t>(c)];
        stats.stdev[static_cast<size_t>(c)] += d * d;
      }
  }
  for (int c = 0; c < C; ++c) {
    stats.stdev[static_cast<size_t>(c)] =
        std::sqrt(stats.stdev[static_cast<size_t>(c)] / static_cast<double>(count));
    if (stats.stdev[static_cast<size_t>(c)] < 1e-8) stats.stdev[static_cast<size_t>(c)] = 1e-8;
  }
  return stats;
}

Tensor apply_normalization(const Tensor& image, const ChannelStats& stats) {
  const int C = image.extent(2);
  WM_CHECK(static_cast<int>(stats.mean.size()) == C, ErrorCategory::kDimension,
           "apply_normalization: stats have " << stats.mean.size() << " channels, image has " << C);
  Tensor out(image.shape());
  const int HW = image.extent(0) * image.extent(1);
  for (int i = 0; i < HW; ++i)
    for (int c = 0; c < C; ++c)
      out.v(i * C + c) = (image.v(i * C + c) - stats.mean[static_cast<size_t>(c)]) /
                         stats.stdev[static_cast<size_t>(c)];
  return out;
}

std::vector<int> labels_from_boxes(const Sample& s, int classes) {
  std::vector<int> labels(static_cast<size_t>(classes), 0);
  for (const Box& b : s.boxes())
    if (b.class_id >= 0 && b.class_id < classes) labels[static_cast<size_t>(b.class_id)] = 1;
  return labels;
}

void save_dataset(const std::vector<Sample>& samples, const std::string& dir) {
  WM_CHECK(!samples.empty(), ErrorCategory::kConfig, "save_dataset: empty dataset");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  WM_CHECK(!ec, ErrorCategory::kIo, "cannot create dataset directory '" << dir << "'");

  const int C = static_cast<int>(samples[0].labels.size());
  const int S = samples[0].image.extent(0);
  std::ostringstream index;
  index << "WMDS 1 " << samples.size() << " " << C << " " << S << "\n";
  for (const Sample& s : samples) {
    index << s.id << " " << s.subject_id << " ";
    for (int c = 0; c < C; ++c) index << s.labels[static_cast<size_t>(c)];
    const auto& boxes = s.boxes();
    index << " " << boxes.size();
    for (const Box& b : boxes)
      index << " " << b.class_id << " " << b.x0 << " " << b.y0 << " " << b.x1 << " " << b.y1;
    index << "\n";

    char name[32];
    std::snprintf(name, sizeof(name), "%06d.pgm", s.id);
    write_pgm16((fs::path(dir) / "images" / name).string(), s.image);
  }
  const std::string index_path = (fs::path(dir) / "index.txt").string();
  const std::string tmp = index_path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    WM_CHECK(f.good(), ErrorCategory::kIo, "cannot write '" << tmp << "'");
    f << index.str();
    WM_CHECK(f.good(), ErrorCategory::kIo, "failed writing '" << tmp << "'");
  }
  fs::rename(tmp, index_path, ec);
  WM_CHECK(!ec, ErrorCategory::kIo, "cannot move index into place at '" << index_path << "'");
}

std::vector<Sample> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string index_path = (fs::path(dir) / "index.txt").string();
  std::ifstream in(index_path);
  WM_CHECK(in.good(), ErrorCategory::kIo, "cannot open dataset index '" << index_path << "'");

  std::string magic;
  int version = 0, n = 0, C = 0, S = 0;
  in >> magic >> version >> n >> C >> S;
  WM_CHECK(in.good() && magic == "WMDS", ErrorCategory::kIo,
           "'" << index_path << "' is not a dataset index");
  WM_CHECK(version == 1, ErrorCategory::kIo,
           "dataset index version " << version << " unsupported");
  WM_CHECK(n > 0 && C > 0 && S > 0, ErrorCategory::kIo, "dataset index has bad header");

  std::vector<Sample> samples;
  samples.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Sample s;
    std::string bits;
    size_t n_boxes = 0;
    in >> s.id >> s.subject_id >> bits >> n_boxes;
    WM_CHECK(in.good() && static_cast<int>(bits.size()) == C, ErrorCategory::kIo,
             "dataset index record " << i << " is malformed");
    s.labels.resize(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) s.labels[static_cast<size_t>(c)] = bits[static_cast<size_t>(c)] == '1';
    std::vector<Box> boxes(n_boxes);
    for (auto& b : boxes) {
      in >> b.class_id >> b.x0 >> b.y0 >> b.x1 >> b.y1;
      WM_CHECK(!in.fail(), ErrorCategory::kIo, "dataset index record " << i << " truncated");
    }
    s.set_boxes(std::move(boxes));
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.pgm", s.id);
    s.image = read_pgm16((fs::path(dir) / "images" / name).string());
    WM_CHECK(s.image.extent(0) == S && s.image.extent(1) == S, ErrorCategory::kIo,
             "image for sample " << s.id << " has unexpected size");
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace weakmap
