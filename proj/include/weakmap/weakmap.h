/* C interface to the weakmap library: weakly-supervised multi-label lesion
 * classification and localization on synthetic data.
 *
 * All functions return WM_OK on success or an error code; wm_last_error()
 * describes the most recent failure on the calling thread. Objects are
 * opaque handles released with their matching _destroy/_free function.
 */
#ifndef WEAKMAP_WEAKMAP_H_
#define WEAKMAP_WEAKMAP_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum wm_status {
  WM_OK = 0,
  WM_ERR_CONFIG = 1,     /* bad key, value, or parameter range */
  WM_ERR_IO = 2,         /* missing/unwritable files, existing outputs */
  WM_ERR_DIMENSION = 3,  /* shape or dataset/model mismatch */
  WM_ERR_CHECKPOINT = 4, /* corrupt, truncated, or wrong-version checkpoint */
  WM_ERR_INTERNAL = 5
} wm_status;

/* Human-readable category name ("config", "io", ...). */
const char* wm_status_name(wm_status status);

/* Message for the last failure on this thread; empty string if none. */
const char* wm_last_error(void);

/* ---- configuration ------------------------------------------------- */

typedef struct wm_config wm_config;

/* Fresh configuration with every key at its documented default. */
wm_config* wm_config_create(void);
void wm_config_destroy(wm_config* cfg);

wm_status wm_config_set(wm_config* cfg, const char* key, const char* value);
/* Writes the value into buf (NUL-terminated, truncated to buflen). */
wm_status wm_config_get(const wm_config* cfg, const char* key, char* buf, size_t buflen);
wm_status wm_config_load_file(wm_config* cfg, const char* path);
wm_status wm_config_save_file(const wm_config* cfg, const char* path);
/* Range checks across all keys. */
wm_status wm_config_validate(const wm_config* cfg);

/* ---- pipeline commands ---------------------------------------------- */

/* Results are returned as NUL-terminated strings owned by the library;
 * release with wm_string_free. */
void wm_string_free(char* s);

/* Generates the synthetic dataset into out_dir (index.txt + images/).
 * Refuses an existing directory unless force != 0. *summary (optional)
 * receives the per-class positive counts. */
wm_status wm_generate(const wm_config* cfg, const char* out_dir, int force, char** summary);

/* Trains on the dataset in data_dir, writing model.ckpt and train.log to
 * out_dir. An existing checkpoint needs force != 0. */
wm_status wm_train(const wm_config* cfg, const char* data_dir, const char* out_dir, int force,
                   char** summary);

/* Evaluates a checkpoint on the dataset's evaluation split (architecture,
 * split, and normalization come from the checkpoint); writes report.txt to
 * out_dir. *report (optional) receives the report text. */
wm_status wm_evaluate(const char* checkpoint_path, const char* data_dir, const char* out_dir,
                      char** report);

/* Writes one 8-bit PGM per class and sample id: "<sample>_<class>.pgm". */
wm_status wm_heatmaps(const char* checkpoint_path, const char* data_dir, const int* sample_ids,
                      int n_ids, const char* out_dir);

/* Finite-difference check of every operator; *table receives the printable
 * table. *all_pass (optional) is 1 when every operator is below 1e-4. */
wm_status wm_gradcheck(uint64_t seed, char** table, int* all_pass);

/* ---- direct model access -------------------------------------------- */

typedef struct wm_model wm_model;

wm_status wm_model_load(const char* checkpoint_path, wm_model** model);
void wm_model_destroy(wm_model* model);
/* Number of classes the model predicts. */
int wm_model_classes(const wm_model* model);
/* Ten-crop probabilities for a [size x size] grayscale image in [0,1],
 * row-major; probs must hold wm_model_classes() doubles. */
wm_status wm_model_predict(wm_model* model, const double* image, int size, double* probs);

#ifdef __cplusplus
}
#endif

#endif /* WEAKMAP_WEAKMAP_H_ */
