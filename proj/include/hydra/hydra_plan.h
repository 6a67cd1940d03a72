/* C interface to the hydra planning library.
 *
 * Every call returns a hydra_status; on failure hydra_last_error() holds a
 * message for the calling thread until its next failing call. Handles are
 * opaque and owned by the caller, who releases them with the matching _free.
 * Handles may be shared read-only between threads; a pipeline handle must not
 * be used from two threads at once.
 */
#ifndef HYDRA_PLAN_H
#define HYDRA_PLAN_H

#include <stdint.h>

#if defined(__GNUC__)
#define HYDRA_API __attribute__((visibility("default")))
#else
#define HYDRA_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum hydra_status {
  HYDRA_OK = 0,
  HYDRA_E_ARGUMENT = 1,  /* null handle, bad index, short buffer */
  HYDRA_E_CONFIG = 2,    /* invalid configuration or mismatched shapes */
  HYDRA_E_IO = 3,        /* unreadable, unwritable or malformed file */
  HYDRA_E_INTEGRITY = 4, /* content hash or cross-artifact reference mismatch */
  HYDRA_E_NUMERIC = 5,   /* non-finite loss or gradient */
  HYDRA_E_INTERNAL = 6
} hydra_status;

HYDRA_API const char* hydra_version(void);
HYDRA_API const char* hydra_last_error(void);
HYDRA_API const char* hydra_status_name(hydra_status s);

/* ---- vocabulary ---------------------------------------------------------- */

typedef struct hydra_vocab hydra_vocab;

/* Samples n trajectories with default kinematics and clusters them into k. */
HYDRA_API hydra_status hydra_vocab_build(uint64_t n_samples, uint64_t k, uint64_t seed, hydra_vocab** out);
HYDRA_API hydra_status hydra_vocab_load(const char* path, hydra_vocab** out);
/* Writes the binary file and a JSON provenance sidecar at path + ".json". */
HYDRA_API hydra_status hydra_vocab_save(const hydra_vocab* v, const char* path);
HYDRA_API hydra_status hydra_vocab_info(const hydra_vocab* v, uint64_t* k, uint32_t* horizon, uint64_t* hash);
/* Copies entry `index` as horizon triples (x, y, heading). */
HYDRA_API hydra_status hydra_vocab_entry(const hydra_vocab* v, uint64_t index, double* xyh, uint64_t capacity);
HYDRA_API void hydra_vocab_free(hydra_vocab* v);

/* ---- scenarios ----------------------------------------------------------- */

typedef struct hydra_scenarios hydra_scenarios;

/* Scenarios for seeds first_seed .. first_seed + count - 1, default world. */
HYDRA_API hydra_status hydra_scenarios_generate(uint64_t first_seed, uint64_t count, hydra_scenarios** out);
HYDRA_API hydra_status hydra_scenarios_load(const char* path, hydra_scenarios** out);
HYDRA_API hydra_status hydra_scenarios_save(const hydra_scenarios* s, const char* path);
HYDRA_API uint64_t hydra_scenarios_count(const hydra_scenarios* s);
HYDRA_API void hydra_scenarios_free(hydra_scenarios* s);

/* ---- teacher ------------------------------------------------------------- */

/* Sub-scores are ordered NC, DAC, TTC, C, EP. */
HYDRA_API hydra_status hydra_pdm_score(const double sub_scores[5], double* out);

/* Teacher sub-scores of vocabulary entry `entry` in scenario `scenario`. */
HYDRA_API hydra_status hydra_teacher_scores(const hydra_scenarios* s, uint64_t scenario, const hydra_vocab* v,
                                            uint64_t entry, double out[5]);

/* Label store for every (scenario, entry) pair: columnar binary plus JSON index. */
HYDRA_API hydra_status hydra_simulate(const hydra_scenarios* s, const hydra_vocab* v, const char* bin_path,
                                      const char* index_path);

/* ---- models and inference ------------------------------------------------ */

typedef struct hydra_model hydra_model;

HYDRA_API hydra_status hydra_model_load(const char* path, hydra_model** out);
HYDRA_API void hydra_model_free(hydra_model* m);

HYDRA_API hydra_status hydra_weights_load(const char* path, double weights[4]);

typedef struct hydra_infer_options {
  double cost_weights[4]; /* w1..w4 of the assembled cost */
  double noise_dropout;   /* observation rendering */
  double noise_additive;
  double cell_size;
} hydra_infer_options;

HYDRA_API void hydra_infer_options_default(hydra_infer_options* opts);

typedef struct hydra_selection {
  uint64_t index;   /* selected vocabulary entry */
  double scores[5]; /* teacher NC, DAC, TTC, C, EP of that entry */
  double pdm;
} hydra_selection;

/* Renders each scenario's observation, ensembles the models' sub-scores with
 * `model_weights` (non-negative, summing to one) and selects by assembled cost.
 * `out` must hold one record per scenario. */
HYDRA_API hydra_status hydra_infer(const hydra_model* const* models, const double* model_weights,
                                   uint64_t n_models, const hydra_scenarios* s, const hydra_vocab* v,
                                   const hydra_infer_options* opts, hydra_selection* out, uint64_t capacity);

/* ---- pipeline ------------------------------------------------------------- */

typedef struct hydra_pipeline hydra_pipeline;
typedef void (*hydra_log_fn)(const char* line, void* user);

/* config_path may be NULL for built-in defaults. When has_seed is non-zero,
 * `seed` replaces the configured data seed. */
HYDRA_API hydra_status hydra_pipeline_open(const char* config_path, const char* run_dir, int has_seed,
                                           uint64_t seed, hydra_log_fn log, void* user, hydra_pipeline** out);
/* Runs one stage; *units_run (optional) receives how many units executed
 * rather than being served from the cache. */
HYDRA_API hydra_status hydra_pipeline_run_stage(hydra_pipeline* p, const char* stage, uint64_t* units_run);
/* Runs the configured stages in dependency order. */
HYDRA_API hydra_status hydra_pipeline_run(hydra_pipeline* p);
/* Markdown comparison table. Writes at most capacity bytes including the
 * terminator; *needed receives the full size including the terminator. */
HYDRA_API hydra_status hydra_pipeline_table(const hydra_pipeline* p, char* buf, uint64_t capacity,
                                            uint64_t* needed);
HYDRA_API void hydra_pipeline_free(hydra_pipeline* p);

#ifdef __cplusplus
}
#endif

#endif /* HYDRA_PLAN_H */
