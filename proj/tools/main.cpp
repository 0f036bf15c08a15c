// weakmap command line: dataset generation, training, evaluation, heatmap
// export and operator gradient checking. Everything goes through the C API.
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "weakmap/weakmap.h"

namespace {

struct Overrides {
  std::string config_path;
  bool has_seed = false;
  uint64_t seed = 0;
  bool no_se = false;
  int m = -1;
  int k_plus = -1;
  int k_minus = -1;
  double alpha = -1.0;
  bool has_alpha = false;
};

void add_common_flags(CLI::App* cmd, Overrides* ov) {
  cmd->add_option("--config", ov->config_path, "key=value configuration file");
  cmd->add_option("--seed", ov->seed, "override the config seed")->each([ov](const std::string&) {
    ov->has_seed = true;
  });
}

void add_ablation_flags(CLI::App* cmd, Overrides* ov) {
  cmd->add_flag("--no-se", ov->no_se, "disable the channel gate in transitions");
  cmd->add_option("--m", ov->m, "maps per class in the transfer layer");
  cmd->add_option("--k-plus", ov->k_plus, "top-k count of the spatial pooling");
  cmd->add_option("--k-minus", ov->k_minus, "bottom-k count of the spatial pooling");
  cmd->add_option("--alpha", ov->alpha, "weight of the bottom-k term")
      ->each([ov](const std::string&) { ov->has_alpha = true; });
}

int fail(wm_status status) {
  std::fprintf(stderr, "error: %s: %s\n", wm_status_name(status), wm_last_error());
  return static_cast<int>(status);
}

// Builds the effective config: file, then flag overrides.
int apply_overrides(wm_config* cfg, const Overrides& ov) {
  if (!ov.config_path.empty()) {
    if (wm_status s = wm_config_load_file(cfg, ov.config_path.c_str()); s != WM_OK)
      return fail(s);
  }
  auto set = [&](const char* key, const std::string& value) -> int {
    if (wm_status s = wm_config_set(cfg, key, value.c_str()); s != WM_OK) return fail(s);
    return 0;
  };
  if (ov.has_seed && set("seed", std::to_string(ov.seed))) return 1;
  if (ov.no_se && set("se", "0")) return 1;
  if (ov.m >= 0 && set("maps_per_class", std::to_string(ov.m))) return 1;
  if (ov.k_plus >= 0 && set("k_plus", std::to_string(ov.k_plus))) return 1;
  if (ov.k_minus >= 0 && set("k_minus", std::to_string(ov.k_minus))) return 1;
  if (ov.has_alpha && set("alpha", std::to_string(ov.alpha))) return 1;
  return 0;
}

struct ConfigHandle {
  wm_config* ptr = wm_config_create();
  ~ConfigHandle() { wm_config_destroy(ptr); }
};

struct StringHandle {
  char* ptr = nullptr;
  ~StringHandle() { wm_string_free(ptr); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly-supervised lesion classification and localization"};
  app.require_subcommand(1);

  Overrides ov;
  std::string out_dir, data_dir, checkpoint;
  std::vector<int> sample_ids;
  bool force = false;
  uint64_t gradcheck_seed = 2024;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common_flags(gen, &ov);
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_flag("--force", force, "overwrite an existing output directory");

  CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
  add_common_flags(train, &ov);
  add_ablation_flags(train, &ov);
  train->add_option("--data", data_dir, "dataset directory from 'gen'")->required();
  train->add_option("--out", out_dir, "run directory for model.ckpt and train.log")->required();
  train->add_flag("--force", force, "overwrite an existing checkpoint");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "trained model.ckpt")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "directory for report.txt")->required();

  CLI::App* heatmap = app.add_subcommand("heatmap", "export per-class heatmaps");
  heatmap->add_option("--checkpoint", checkpoint, "trained model.ckpt")->required();
  heatmap->add_option("--data", data_dir, "dataset directory")->required();
  heatmap->add_option("--out", out_dir, "directory for the PGM files")->required();
  heatmap->add_option("ids", sample_ids, "sample ids to render")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of all operators");
  gradcheck->add_option("--seed", gradcheck_seed, "base seed for the random points");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    ConfigHandle cfg;
    if (int rc = apply_overrides(cfg.ptr, ov)) return rc;
    StringHandle summary;
    if (wm_status s = wm_generate(cfg.ptr, out_dir.c_str(), force ? 1 : 0, &summary.ptr);
        s != WM_OK)
      return fail(s);
    std::printf("%s", summary.ptr);
    return 0;
  }
  if (train->parsed()) {
    ConfigHandle cfg;
    if (int rc = apply_overrides(cfg.ptr, ov)) return rc;
    StringHandle summary;
    if (wm_status s =
            wm_train(cfg.ptr, data_dir.c_str(), out_dir.c_str(), force ? 1 : 0, &summary.ptr);
        s != WM_OK)
      return fail(s);
    std::printf("%s", summary.ptr);
    return 0;
  }
  if (eval->parsed()) {
    StringHandle report;
    if (wm_status s = wm_evaluate(checkpoint.c_str(), data_dir.c_str(), out_dir.c_str(),
                                  &report.ptr);
        s != WM_OK)
      return fail(s);
    std::printf("%s", report.ptr);
    return 0;
  }
  if (heatmap->parsed()) {
    if (wm_status s = wm_heatmaps(checkpoint.c_str(), data_dir.c_str(), sample_ids.data(),
                                  static_cast<int>(sample_ids.size()), out_dir.c_str());
        s != WM_OK)
      return fail(s);
    return 0;
  }
  if (gradcheck->parsed()) {
    StringHandle table;
    int all_pass = 0;
    if (wm_status s = wm_gradcheck(gradcheck_seed, &table.ptr, &all_pass); s != WM_OK)
      return fail(s);
    std::printf("%s", table.ptr);
    if (!all_pass) {
      std::fprintf(stderr, "error: internal: gradient check failures\n");
      return static_cast<int>(WM_ERR_INTERNAL);
    }
    return 0;
  }
  return 0;
}
