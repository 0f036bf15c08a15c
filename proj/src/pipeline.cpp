#include "pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "checkpoint.hpp"
#include "eval.hpp"
#include "gradsuite.hpp"
#include "pgm.hpp"
#include "synthdata.hpp"
#include "train.hpp"

namespace weakmap {

namespace fs = std::filesystem;

namespace {

GenConfig gen_config_of(const RunConfig& cfg) {
  GenConfig g;
  g.seed = cfg.seed;
  g.n_samples = cfg.n_samples;
  g.classes = cfg.classes;
  g.image_size = cfg.image_size;
  g.class_prior.assign(static_cast<size_t>(cfg.classes), cfg.class_prior);
  g.label_noise = cfg.label_noise;
  g.images_per_subject = cfg.images_per_subject;
  return g;
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    WM_CHECK(f.good(), ErrorCategory::kIo, "cannot write '" << tmp << "'");
    f << text;
    WM_CHECK(f.good(), ErrorCategory::kIo, "failed writing '" << tmp << "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  WM_CHECK(!ec, ErrorCategory::kIo, "cannot move '" << tmp << "' to '" << path << "'");
}

void check_dataset_compatible(const RunConfig& cfg, const std::vector<Sample>& samples,
                              const std::string& data_dir) {
  WM_CHECK(!samples.empty(), ErrorCategory::kDimension, "dataset '" << data_dir << "' is empty");
  const Sample& first = samples.front();
  WM_CHECK(first.image.extent(0) == cfg.image_size && first.image.extent(1) == cfg.image_size,
           ErrorCategory::kDimension,
           "dataset '" << data_dir << "' has " << first.image.extent(0) << "x"
                       << first.image.extent(1) << " images, config expects " << cfg.image_size
                       << "x" << cfg.image_size);
  WM_CHECK(static_cast<int>(first.labels.size()) == cfg.classes, ErrorCategory::kDimension,
           "dataset '" << data_dir << "' has " << first.labels.size()
                       << " classes, config expects " << cfg.classes);
  WM_CHECK(first.image.extent(2) == cfg.input_channels, ErrorCategory::kDimension,
           "dataset '" << data_dir << "' has " << first.image.extent(2)
                       << "-channel images, config expects " << cfg.input_channels);
}

}  // namespace

GenSummary run_gen(const RunConfig& cfg, const std::string& out_dir, bool force) {
  cfg.validate();
  if (fs::exists(out_dir)) {
    WM_CHECK(force, ErrorCategory::kIo,
             "output directory '" << out_dir << "' exists; pass --force to overwrite");
    std::error_code ec;
    fs::remove_all(out_dir, ec);
    WM_CHECK(!ec, ErrorCategory::kIo, "cannot clear '" << out_dir << "': " << ec.message());
  }

  auto samples = generate_dataset(gen_config_of(cfg));
  save_dataset(samples, out_dir);
  cfg.save_file((fs::path(out_dir) / "gen_config.txt").string());

  GenSummary summary;
  summary.n_samples = static_cast<int>(samples.size());
  summary.positives.assign(static_cast<size_t>(cfg.classes), 0);
  for (const Sample& s : samples)
    for (int c = 0; c < cfg.classes; ++c)
      summary.positives[static_cast<size_t>(c)] += s.labels[static_cast<size_t>(c)];
  std::string text = "samples " + std::to_string(summary.n_samples) + "\n";
  for (int c = 0; c < cfg.classes; ++c)
    text += "class " + std::to_string(c) + " positives " +
            std::to_string(summary.positives[static_cast<size_t>(c)]) + "\n";
  summary.text = std::move(text);
  return summary;
}

TrainSummary run_train(const RunConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir, bool force) {
  cfg.validate();
  auto samples = load_dataset(data_dir);
  check_dataset_compatible(cfg, samples, data_dir);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  WM_CHECK(!ec, ErrorCategory::kIo, "cannot create '" << out_dir << "': " << ec.message());
  const std::string ckpt_path = (fs::path(out_dir) / "model.ckpt").string();
  WM_CHECK(force || !fs::exists(ckpt_path), ErrorCategory::kIo,
           "checkpoint '" << ckpt_path << "' exists; pass --force to overwrite");

  DatasetSplit split =
      split_by_subject(samples, {cfg.frac_train, cfg.frac_val, cfg.frac_eval}, cfg.seed);
  ChannelStats stats = compute_normalization(samples, split.train);
  ModelParams params = init_params(cfg.backbone(), cfg.head(), cfg.seed);

  // append-only epoch log, one line per completed epoch
  const std::string log_path = (fs::path(out_dir) / "train.log").string();
  std::ofstream log(log_path, std::ios::trunc);
  WM_CHECK(log.good(), ErrorCategory::kIo, "cannot write training log '" << log_path << "'");
  TrainResult result =
      train_model(params, cfg.backbone(), cfg.head(), samples, split, stats, cfg.train(),
                  [&log](const EpochLog& e) { log << format_epoch_line(e) << std::flush; });
  log.close();

  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.params = std::move(result.best_params);
  ckpt.norm_mean = stats.mean;
  ckpt.norm_std = stats.stdev;
  save_checkpoint(ckpt_path, ckpt);

  TrainSummary summary;
  summary.best_val_loss = result.best_val_loss;
  summary.best_epoch = result.best_epoch;
  summary.epochs_run = static_cast<int>(result.log.size());
  summary.diverged = result.diverged;
  summary.checkpoint_path = ckpt_path;
  summary.log_path = log_path;
  summary.text = "epochs " + std::to_string(summary.epochs_run) + " best_epoch " +
                 std::to_string(summary.best_epoch) + " best_val_loss " +
                 std::to_string(summary.best_val_loss) +
                 (result.diverged ? " (diverged, kept last finite snapshot)" : "") + "\n";
  return summary;
}

std::string run_eval(const std::string& checkpoint_path, const std::string& data_dir,
                     const std::string& out_dir) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  auto samples = load_dataset(data_dir);
  check_dataset_compatible(ckpt.config, samples, data_dir);

  DatasetSplit split = split_by_subject(
      samples, {ckpt.config.frac_train, ckpt.config.frac_val, ckpt.config.frac_eval},
      ckpt.config.seed);
  ChannelStats stats{ckpt.norm_mean, ckpt.norm_std};
  EvalReport report = evaluate(ckpt.params, ckpt.config.backbone(), ckpt.config.head(), samples,
                               split.evaluation, stats, ckpt.config.crop_size);
  const std::string text = format_report(report);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  WM_CHECK(!ec, ErrorCategory::kIo, "cannot create '" << out_dir << "': " << ec.message());
  write_text_atomic((fs::path(out_dir) / "report.txt").string(), text);
  return text;
}

void run_heatmap(const std::string& checkpoint_path, const std::string& data_dir,
                 const std::vector<int>& sample_ids, const std::string& out_dir) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  auto samples = load_dataset(data_dir);
  check_dataset_compatible(ckpt.config, samples, data_dir);
  ChannelStats stats{ckpt.norm_mean, ckpt.norm_std};

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  WM_CHECK(!ec, ErrorCategory::kIo, "cannot create '" << out_dir << "': " << ec.message());

  for (int id : sample_ids) {
    const Sample* sample = nullptr;
    for (const Sample& s : samples)
      if (s.id == id) sample = &s;
    WM_CHECK(sample != nullptr, ErrorCategory::kConfig,
             "sample id " << id << " not present in dataset '" << data_dir << "'");
    auto maps = class_heatmaps(ckpt.params, ckpt.config.backbone(), ckpt.config.head(),
                               sample->image, stats);
    for (size_t c = 0; c < maps.size(); ++c) {
      const Heatmap& hm = maps[c];
      double lo = hm.high[0], hi = hm.high[0];
      for (double v : hm.high) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const double range = hi - lo;
      std::vector<double> rendered(hm.high.size());
      for (size_t i = 0; i < hm.high.size(); ++i)
        rendered[i] = range > 0 ? (hm.high[i] - lo) / range : 0.0;
      char name[64];
      std::snprintf(name, sizeof(name), "%d_%zu.pgm", id, c);
      write_pgm8((fs::path(out_dir) / name).string(), hm.high_h, hm.high_w, rendered);
    }
  }
}

std::string run_gradcheck(uint64_t seed, bool* all_pass) {
  auto entries = gradcheck_suite(seed);
  if (all_pass) *all_pass = gradcheck_all_pass(entries);
  return format_gradcheck(entries);
}

}  // namespace weakmap
