/* C interface to the bright library.
 *
 * Every function that can fail returns a bright_status. On failure the
 * thread-local message from bright_last_error() describes the problem.
 * Objects are opaque handles released with the matching *_free function;
 * strings returned through char** are released with bright_string_free.
 */
#ifndef BRIGHT_H
#define BRIGHT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define BRIGHT_API __declspec(dllexport)
#else
#define BRIGHT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values double as the CLI's process exit codes. */
typedef enum bright_status {
  BRIGHT_OK = 0,
  BRIGHT_ERR_CONFIG = 2,
  BRIGHT_ERR_DATA = 3,
  BRIGHT_ERR_NON_FINITE = 4,
  BRIGHT_ERR_FORMAT = 5,
  BRIGHT_ERR_SHAPE = 6,
  BRIGHT_ERR_IO = 7,
  BRIGHT_ERR_ARGUMENT = 8,
  BRIGHT_ERR_INTERNAL = 9
} bright_status;

typedef struct bright_config bright_config;
typedef struct bright_dataset bright_dataset;
typedef struct bright_model bright_model;
typedef struct bright_hits bright_hits;

BRIGHT_API const char* bright_version(void);
BRIGHT_API const char* bright_last_error(void);
BRIGHT_API void bright_string_free(char* s);

/* ---- configuration ---- */
BRIGHT_API bright_status bright_config_load(const char* path, bright_config** out);
BRIGHT_API bright_status bright_config_parse(const char* text, bright_config** out);
BRIGHT_API bright_status bright_config_desk(uint64_t seed, bright_config** out);
BRIGHT_API bright_status bright_config_gradcheck(uint64_t seed, bright_config** out);
/* Overrides one key using the config-file syntax, then revalidates. */
BRIGHT_API bright_status bright_config_set(bright_config* cfg, const char* key, const char* value);
/* Worker threads for training and statistics (not part of the file format). */
BRIGHT_API bright_status bright_config_set_threads(bright_config* cfg, uint32_t threads);
BRIGHT_API bright_status bright_config_format(const bright_config* cfg, char** out);
BRIGHT_API uint64_t bright_config_seed(const bright_config* cfg);
BRIGHT_API void bright_config_free(bright_config* cfg);

/* ---- datasets ---- */
BRIGHT_API bright_status bright_dataset_synthetic(const bright_config* cfg, bright_dataset** out);
BRIGHT_API bright_status bright_dataset_load_dir(const char* dir, bright_dataset** out);
BRIGHT_API bright_status bright_dataset_load_image(const char* path, bright_dataset** out);
BRIGHT_API size_t bright_dataset_size(const bright_dataset* data);
BRIGHT_API bright_status bright_dataset_save_image(const bright_dataset* data, size_t index,
                                                   const char* path);
BRIGHT_API bright_status bright_dataset_mean_psnr(const bright_dataset* data, double* out);
BRIGHT_API void bright_dataset_free(bright_dataset* data);

/* ---- training and checkpoints ---- */
typedef void (*bright_step_fn)(void* user, uint32_t step, double loss, double psnr);

BRIGHT_API bright_status bright_train(const bright_config* cfg, const bright_dataset* data,
                                      bright_step_fn on_step, void* user, bright_model** out);
BRIGHT_API bright_status bright_model_save(const bright_model* model, const char* path);
BRIGHT_API bright_status bright_model_load(const char* path, bright_model** out);
BRIGHT_API bright_status bright_model_config(const bright_model* model, bright_config** out);
BRIGHT_API uint64_t bright_model_step(const bright_model* model);
BRIGHT_API void bright_model_free(bright_model* model);

/* ---- encoding and decoding ---- */
BRIGHT_API bright_status bright_encode(const bright_model* model, const char* image_path,
                                       const char* keycode_path);
/* When reference_path is non-null, *psnr receives the PSNR against it. */
BRIGHT_API bright_status bright_decode(const bright_model* model, const char* keycode_path,
                                       const char* image_path, const char* reference_path,
                                       double* psnr);
BRIGHT_API bright_status bright_reconstruct(const bright_model* model, const char* image_path,
                                            const char* out_path, double* psnr);
BRIGHT_API bright_status bright_keycode_shape(const char* keycode_path, uint32_t* h, uint32_t* w,
                                              uint32_t* c);

/* ---- evaluation and analysis ---- */
BRIGHT_API bright_status bright_eval_loss(const bright_model* model, const bright_dataset* data,
                                          double amplitude, uint64_t seed, double* out);
BRIGHT_API bright_status bright_sweep(const bright_model* model, const bright_dataset* data,
                                      const double* amplitudes, size_t n, uint64_t seed,
                                      char** csv);

BRIGHT_API bright_status bright_stats(const bright_model* model, const bright_dataset* data,
                                      int noise, uint64_t seed, uint32_t threads,
                                      bright_hits** out);
BRIGHT_API bright_status bright_hits_shape(const bright_hits* hits, uint32_t* groups,
                                           uint32_t* levels);
BRIGHT_API bright_status bright_hits_usage_csv(const bright_hits* hits, char** csv);
BRIGHT_API bright_status bright_hits_histogram_csv(const bright_hits* hits, uint32_t group,
                                                   uint32_t level, char** csv);
BRIGHT_API bright_status bright_hits_summary(const bright_hits* hits, char** text);
/* *has_direct is 0 when no level is direct-mode; *fraction is then 0. */
BRIGHT_API bright_status bright_hits_min_direct_fraction(const bright_hits* hits, int* has_direct,
                                                         double* fraction);
BRIGHT_API void bright_hits_free(bright_hits* hits);

typedef struct bright_param_counts {
  uint64_t table_params;
  uint64_t mlp_params;
  uint64_t total;
} bright_param_counts;

BRIGHT_API bright_status bright_param_count(const bright_config* cfg, bright_param_counts* out);
/* Per-level breakdown: level, resolution, mode, vertices, table_size, params. */
BRIGHT_API bright_status bright_params_csv(const bright_config* cfg, char** csv);

typedef struct bright_gradcheck_report {
  uint32_t probes;
  uint32_t failing;
  uint32_t redrawn;
  double max_rel_error;
  int passed;
} bright_gradcheck_report;

/* precision_bits is 32 or 64. */
BRIGHT_API bright_status bright_gradcheck(const bright_config* cfg, uint32_t probes, double h,
                                          double tol, int precision_bits,
                                          bright_gradcheck_report* out);

BRIGHT_API bright_status bright_f1(double precision, double recall, double* out);

#ifdef __cplusplus
}
#endif

#endif /* BRIGHT_H */
