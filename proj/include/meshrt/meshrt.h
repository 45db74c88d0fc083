/* C interface to the meshrt engine. Every function returns a status code;
 * on failure meshrt_last_error() describes the cause for the calling thread.
 * Handles are opaque and must be released with the matching _free call. */
#ifndef MESHRT_H
#define MESHRT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MESHRT_API __declspec(dllexport)
#else
#define MESHRT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum meshrt_status {
  MESHRT_OK = 0,
  MESHRT_ERR_ARGUMENT = 1, /* null handle, bad buffer, unknown enum text */
  MESHRT_ERR_PARSE = 2,
  MESHRT_ERR_RANGE = 3,
  MESHRT_ERR_CONFIG = 4,
  MESHRT_ERR_SHAPE = 5,
  MESHRT_ERR_DATA = 6,
  MESHRT_ERR_NUMERICAL = 7,
  MESHRT_ERR_DEGENERATE = 8,
  MESHRT_ERR_STATE = 9,
  MESHRT_ERR_IO = 10,
  MESHRT_ERR_BUFFER_TOO_SMALL = 11,
  MESHRT_ERR_INTERNAL = 12
} meshrt_status;

MESHRT_API const char* meshrt_version(void);
MESHRT_API const char* meshrt_status_name(meshrt_status status);
/* Message of the last failed call on this thread; "" if none. */
MESHRT_API const char* meshrt_last_error(void);
/* Byte offset carried by the last MESHRT_ERR_PARSE on this thread, else -1. */
MESHRT_API int64_t meshrt_last_parse_offset(void);

/* Receives one line of progress or report text; `line` has no newline. */
typedef void (*meshrt_line_fn)(const char* line, void* user);

/* Strings are copied into caller buffers with a terminating NUL. When `cap`
 * is too small the call fails with MESHRT_ERR_BUFFER_TOO_SMALL and, if
 * `needed` is non-null, stores the required size including the NUL. */

/* ---- layer plans ------------------------------------------------------- */

typedef struct meshrt_plan_info {
  int l_pre, l_core, n_loop, l_coda;
  int recursive; /* 0 for a bare-integer (vanilla) plan */
  int n_compute;
  int n_unique;
} meshrt_plan_info;

MESHRT_API meshrt_status meshrt_plan_parse(const char* text, meshrt_plan_info* out);
MESHRT_API meshrt_status meshrt_plan_format(const meshrt_plan_info* plan, char* buf, size_t cap, size_t* needed);
/* Percentage, e.g. 33.333... for 4+8R2+4. */
MESHRT_API meshrt_status meshrt_param_reduction(const char* plan, double* percent);
MESHRT_API meshrt_status meshrt_router_param_count(const char* plan, int64_t d_model, int64_t slots, int with_bias,
                                                   int64_t* count);
MESHRT_API meshrt_status meshrt_default_buffer_len(int n_loop, int* slots);

/* ---- run configuration ------------------------------------------------- */

typedef struct meshrt_config meshrt_config;

MESHRT_API meshrt_status meshrt_config_new(meshrt_config** out);
MESHRT_API meshrt_status meshrt_config_parse(const char* text, meshrt_config** out);
MESHRT_API meshrt_status meshrt_config_load(const char* path, meshrt_config** out);
MESHRT_API meshrt_status meshrt_config_set(meshrt_config* cfg, const char* key, const char* value);
MESHRT_API meshrt_status meshrt_config_get(const meshrt_config* cfg, const char* key, char* buf, size_t cap,
                                           size_t* needed);
/* Canonical `key = value` text with every key present. */
MESHRT_API meshrt_status meshrt_config_format(const meshrt_config* cfg, char* buf, size_t cap, size_t* needed);
/* Applies MESH_SEED if set in the environment. */
MESHRT_API meshrt_status meshrt_config_apply_env(meshrt_config* cfg);
MESHRT_API void meshrt_config_free(meshrt_config* cfg);

/* ---- runs ---------------------------------------------------------------- */

/* Trains from scratch. Writes config.txt, loss.csv, checkpoints (and
 * needle_eval.csv for the needle task) under `out_dir`. The mean training
 * loss over the last 5% of steps is stored in `final_loss` if non-null. */
MESHRT_API meshrt_status meshrt_train(const meshrt_config* cfg, const char* out_dir, meshrt_line_fn log, void* user,
                                      double* final_loss);

/* Runs `samples` sequences through a checkpoint with state capture and writes
 * a dump under `dump_dir`. samples <= 0 uses the probe_samples value stored
 * with the checkpoint. */
MESHRT_API meshrt_status meshrt_probe(const char* checkpoint, const char* dump_dir, int samples, meshrt_line_fn log,
                                      void* user);

/* metric: "effort", "cka", "spectrum" or "all". Writes <metric>.csv and
 * <metric>.json under `out_dir` and echoes the CSV rows through `log`. */
MESHRT_API meshrt_status meshrt_report(const char* dump_dir, const char* metric, const char* out_dir, double theta,
                                       int top_k, meshrt_line_fn log, void* user);

/* Trains the config once per k in [k_min, k_max] with B = n_loop + 1 + k,
 * each under out_dir/k<k>, and writes out_dir/ablate_buffer.csv. */
MESHRT_API meshrt_status meshrt_ablate_buffer(const meshrt_config* cfg, const char* out_dir, int k_min, int k_max,
                                              meshrt_line_fn log, void* user);

/* Oracle suite; one line per check. `failures` receives the failed count. */
MESHRT_API meshrt_status meshrt_selftest(meshrt_line_fn log, void* user, int* failures);

/* ---- models ------------------------------------------------------------ */

typedef struct meshrt_model meshrt_model;

MESHRT_API meshrt_status meshrt_model_load(const char* checkpoint, meshrt_model** out);
MESHRT_API meshrt_status meshrt_model_vocab(const meshrt_model* model, int* vocab);
/* `tokens` holds n_seq sequences of seq_len ids; `logits` receives
 * n_seq·seq_len·vocab values in row-major order. */
MESHRT_API meshrt_status meshrt_model_forward(const meshrt_model* model, const int32_t* tokens, size_t n_seq,
                                              size_t seq_len, double* logits, size_t logits_cap);
MESHRT_API void meshrt_model_free(meshrt_model* model);

#ifdef __cplusplus
}
#endif

#endif /* MESHRT_H */
