#include "weakmap/weakmap.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "checkpoint.hpp"
#include "config.hpp"
#include "eval.hpp"
#include "pipeline.hpp"

using namespace weakmap;

namespace {

thread_local std::string g_last_error;

wm_status status_of(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kConfig: return WM_ERR_CONFIG;
    case ErrorCategory::kIo: return WM_ERR_IO;
    case ErrorCategory::kDimension: return WM_ERR_DIMENSION;
    case ErrorCategory::kCheckpoint: return WM_ERR_CHECKPOINT;
    case ErrorCategory::kInternal: return WM_ERR_INTERNAL;
  }
  return WM_ERR_INTERNAL;
}

template <class Fn>
wm_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return WM_OK;
  } catch (const WmError& e) {
    g_last_error = e.what();
    return status_of(e.category());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return WM_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return WM_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

struct wm_config {
  RunConfig cfg;
};

struct wm_model {
  Checkpoint ckpt;
};

extern "C" {

const char* wm_status_name(wm_status status) {
  switch (status) {
    case WM_OK: return "ok";
    case WM_ERR_CONFIG: return "config";
    case WM_ERR_IO: return "io";
    case WM_ERR_DIMENSION: return "dimension";
    case WM_ERR_CHECKPOINT: return "checkpoint";
    case WM_ERR_INTERNAL: return "internal";
  }
  return "internal";
}

const char* wm_last_error(void) { return g_last_error.c_str(); }

wm_config* wm_config_create(void) { return new (std::nothrow) wm_config(); }

void wm_config_destroy(wm_config* cfg) { delete cfg; }

wm_status wm_config_set(wm_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) {
    g_last_error = "null argument";
    return WM_ERR_CONFIG;
  }
  return guarded([&] { cfg->cfg.set(key, value); });
}

wm_status wm_config_get(const wm_config* cfg, const char* key, char* buf, size_t buflen) {
  if (!cfg || !key || !buf || buflen == 0) {
    g_last_error = "null argument";
    return WM_ERR_CONFIG;
  }
  return guarded([&] {
    const std::string v = cfg->cfg.get(key);
    std::snprintf(buf, buflen, "%s", v.c_str());
  });
}

wm_status wm_config_load_file(wm_config* cfg, const char* path) {
  if (!cfg || !path) {
    g_last_error = "null argument";
    return WM_ERR_CONFIG;
  }
  return guarded([&] { cfg->cfg = RunConfig::load_file(path); });
}

wm_status wm_config_save_file(const wm_config* cfg, const char* path) {
  if (!cfg || !path) {
    g_last_error = "null argument";
    return WM_ERR_CONFIG;
  }
  return guarded([&] { cfg->cfg.save_file(path); });
}

wm_status wm_config_validate(const wm_config* cfg) {
  if (!cfg) {
    g_last_error = "null argument";
    return WM_ERR_CONFIG;
  }
  return guarded([&] { cfg->cfg.validate(); });
}

void wm_string_free(char* s) { std::free(s); }

wm_status wm_generate(const wm_config* cfg, const char* out_dir, int force, char** summary) {
  if (!cfg || !out_dir) {
    g_last_error = "null argument";
    return WM_ERR_CONFIG;
  }
  return guarded([&] {
    GenSummary s = run_gen(cfg->cfg, out_dir, force != 0);
    if (summary) *summary = dup_string(s.text);
  });
}

wm_status wm_train(const wm_config* cfg, const char* data_dir, const char* out_dir, int force,
                   char** summary) {
  if (!cfg || !data_dir || !out_dir) {
    g_last_error = "null argument";
    return WM_ERR_CONFIG;
  }
  return guarded([&] {
    TrainSummary s = run_train(cfg->cfg, data_dir, out_dir, force != 0);
    if (summary) *summary = dup_string(s.text);
  });
}

wm_status wm_evaluate(const char* checkpoint_path, const char* data_dir, const char* out_dir,
                      char** report) {
  if (!checkpoint_path || !data_dir || !out_dir) {
    g_last_error = "null argument";
    return WM_ERR_CONFIG;
  }
  return guarded([&] {
    const std::string text = run_eval(checkpoint_path, data_dir, out_dir);
    if (report) *report = dup_string(text);
  });
}

wm_status wm_heatmaps(const char* checkpoint_path, const char* data_dir, const int* sample_ids,
                      int n_ids, const char* out_dir) {
  if (!checkpoint_path || !data_dir || !out_dir || (!sample_ids && n_ids > 0)) {
    g_last_error = "null argument";
    return WM_ERR_CONFIG;
  }
  return guarded([&] {
    std::vector<int> ids(sample_ids, sample_ids + n_ids);
    run_heatmap(checkpoint_path, data_dir, ids, out_dir);
  });
}

wm_status wm_gradcheck(uint64_t seed, char** table, int* all_pass) {
  return guarded([&] {
    bool ok = false;
    const std::string text = run_gradcheck(seed, &ok);
    if (table) *table = dup_string(text);
    if (all_pass) *all_pass = ok ? 1 : 0;
  });
}

wm_status wm_model_load(const char* checkpoint_path, wm_model** model) {
  if (!checkpoint_path || !model) {
    g_last_error = "null argument";
    return WM_ERR_CONFIG;
  }
  return guarded([&] {
    auto* m = new wm_model();
    try {
      m->ckpt = load_checkpoint(checkpoint_path);
    } catch (...) {
      delete m;
      throw;
    }
    *model = m;
  });
}

void wm_model_destroy(wm_model* model) { delete model; }

int wm_model_classes(const wm_model* model) { return model ? model->ckpt.config.classes : 0; }

wm_status wm_model_predict(wm_model* model, const double* image, int size, double* probs) {
  if (!model || !image || !probs) {
    g_last_error = "null argument";
    return WM_ERR_CONFIG;
  }
  return guarded([&] {
    WM_CHECK(size == model->ckpt.config.image_size, ErrorCategory::kDimension,
             "image is " << size << "x" << size << ", model expects "
                         << model->ckpt.config.image_size);
    Tensor img(Shape{size, size, 1});
    for (int i = 0; i < size * size; ++i) img.v(i) = image[i];
    ChannelStats stats{model->ckpt.norm_mean, model->ckpt.norm_std};
    auto p = ten_crop_predict(model->ckpt.params, model->ckpt.config.backbone(),
                              model->ckpt.config.head(), img, model->ckpt.config.crop_size, stats);
    for (size_t c = 0; c < p.size(); ++c) probs[c] = p[c];
  });
}

}  // extern "C"
