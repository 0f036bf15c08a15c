#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "weakmap/weakmap.h"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

void set_tiny_run(wm_config* cfg) {
  const char* kv[][2] = {
      {"n_samples", "36"},     {"classes", "2"},   {"image_size", "32"},
      {"crop_size", "28"},     {"stem_channels", "6"}, {"num_blocks", "2"},
      {"layers_per_block", "2"}, {"growth", "4"},  {"se_reduction", "4"},
      {"maps_per_class", "2"}, {"max_epochs", "2"}, {"batch_size", "4"},
      {"images_per_subject", "2"}, {"frac_train", "0.6"}, {"frac_val", "0.2"},
      {"frac_eval", "0.2"},    {"seed", "9"},
  };
  for (const auto& [k, v] : kv) REQUIRE(wm_config_set(cfg, k, v) == WM_OK);
}

}  // namespace

TEST_CASE("capi: config set/get/save/load and error reporting") {
  wm_config* cfg = wm_config_create();
  REQUIRE(cfg != nullptr);

  char buf[64];
  CHECK(wm_config_get(cfg, "alpha", buf, sizeof(buf)) == WM_OK);
  CHECK(std::string(buf) == "0.7");
  CHECK(wm_config_set(cfg, "alpha", "1.3") == WM_OK);
  CHECK(wm_config_get(cfg, "alpha", buf, sizeof(buf)) == WM_OK);
  CHECK(std::string(buf) == "1.3");

  CHECK(wm_config_set(cfg, "bogus_key", "1") == WM_ERR_CONFIG);
  CHECK(std::string(wm_last_error()).find("bogus_key") != std::string::npos);
  CHECK(wm_config_set(cfg, "max_epochs", "three") == WM_ERR_CONFIG);

  TempDir dir("wm_capi_cfg");
  fs::create_directories(dir.path);
  const std::string path = (dir.path / "run.cfg").string();
  CHECK(wm_config_save_file(cfg, path.c_str()) == WM_OK);
  wm_config* loaded = wm_config_create();
  CHECK(wm_config_load_file(loaded, path.c_str()) == WM_OK);
  CHECK(wm_config_get(loaded, "alpha", buf, sizeof(buf)) == WM_OK);
  CHECK(std::string(buf) == "1.3");
  CHECK(wm_config_load_file(loaded, "/nonexistent/nowhere.cfg") == WM_ERR_IO);
  CHECK(wm_config_validate(loaded) == WM_OK);
  CHECK(wm_config_set(loaded, "k_plus", "0") == WM_OK);
  CHECK(wm_config_validate(loaded) == WM_ERR_CONFIG);

  wm_config_destroy(loaded);
  wm_config_destroy(cfg);

  CHECK(std::string(wm_status_name(WM_ERR_IO)) == "io");
  CHECK(std::string(wm_status_name(WM_ERR_CHECKPOINT)) == "checkpoint");
}

TEST_CASE("capi: full pipeline through the shared library surface") {
  wm_config* cfg = wm_config_create();
  set_tiny_run(cfg);

  TempDir data("wm_capi_data");
  TempDir run("wm_capi_run");

  char* summary = nullptr;
  REQUIRE(wm_generate(cfg, data.str().c_str(), 0, &summary) == WM_OK);
  REQUIRE(summary != nullptr);
  CHECK(std::string(summary).find("samples 36") != std::string::npos);
  wm_string_free(summary);

  // second gen without force fails with an io error
  CHECK(wm_generate(cfg, data.str().c_str(), 0, nullptr) == WM_ERR_IO);
  CHECK(std::string(wm_last_error()).find("--force") != std::string::npos);

  char* train_summary = nullptr;
  REQUIRE(wm_train(cfg, data.str().c_str(), run.str().c_str(), 0, &train_summary) == WM_OK);
  CHECK(std::string(train_summary).find("epochs 2") != std::string::npos);
  wm_string_free(train_summary);

  const std::string ckpt = (run.path / "model.ckpt").string();
  REQUIRE(fs::exists(ckpt));

  char* report = nullptr;
  REQUIRE(wm_evaluate(ckpt.c_str(), data.str().c_str(), run.str().c_str(), &report) == WM_OK);
  REQUIRE(report != nullptr);
  CHECK(std::string(report).find("mean,") != std::string::npos);
  wm_string_free(report);
  CHECK(fs::exists(run.path / "report.txt"));

  const int ids[2] = {0, 5};
  REQUIRE(wm_heatmaps(ckpt.c_str(), data.str().c_str(), ids, 2, run.str().c_str()) == WM_OK);
  CHECK(fs::exists(run.path / "0_0.pgm"));
  CHECK(fs::exists(run.path / "5_1.pgm"));

  // model handle: load, predict, destroy
  wm_model* model = nullptr;
  REQUIRE(wm_model_load(ckpt.c_str(), &model) == WM_OK);
  REQUIRE(model != nullptr);
  CHECK(wm_model_classes(model) == 2);
  std::vector<double> image(32 * 32, 0.5);
  double probs[2] = {-1, -1};
  REQUIRE(wm_model_predict(model, image.data(), 32, probs) == WM_OK);
  for (double p : probs) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  CHECK(wm_model_predict(model, image.data(), 16, probs) == WM_ERR_DIMENSION);
  wm_model_destroy(model);

  // checkpoint errors surface as WM_ERR_CHECKPOINT
  wm_model* bad = nullptr;
  CHECK(wm_model_load((data.path / "index.txt").string().c_str(), &bad) == WM_ERR_CHECKPOINT);
  CHECK(bad == nullptr);
  CHECK(wm_model_load("/nonexistent/model.ckpt", &bad) == WM_ERR_IO);

  wm_config_destroy(cfg);
}

TEST_CASE("capi: gradcheck surface") {
  char* table = nullptr;
  int all_pass = 0;
  REQUIRE(wm_gradcheck(7, &table, &all_pass) == WM_OK);
  REQUIRE(table != nullptr);
  CHECK(all_pass == 1);
  CHECK(std::string(table).find("conv2d/input") != std::string::npos);
  CHECK(std::string(table).find("full_model/input") != std::string::npos);
  wm_string_free(table);
}
