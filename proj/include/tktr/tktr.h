#ifndef TKTR_TKTR_H
#define TKTR_TKTR_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32) && defined(TKTR_BUILD)
#define TKTR_API __declspec(dllexport)
#elif defined(_WIN32)
#define TKTR_API __declspec(dllimport)
#elif defined(__GNUC__)
#define TKTR_API __attribute__((visibility("default")))
#else
#define TKTR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tktr_status {
  TKTR_OK = 0,
  TKTR_ERR_INVALID_INPUT = 1,
  TKTR_ERR_INVALID_RANK = 2,
  TKTR_ERR_INVALID_MODE = 3,
  TKTR_ERR_SHAPE = 4,
  TKTR_ERR_DOMAIN = 5,
  TKTR_ERR_GRAPH = 6,
  TKTR_ERR_FORMAT = 7,
  TKTR_ERR_CORRUPT_RECORD = 8,
  TKTR_ERR_CONSISTENCY = 9,
  TKTR_ERR_CONFIG = 10,
  TKTR_ERR_IO = 11,
  TKTR_ERR_NULL_ARGUMENT = 12,
  TKTR_ERR_INTERNAL = 13
} tktr_status;

typedef enum tktr_phase { TKTR_PHASE_ORIGINAL = 0, TKTR_PHASE_DECOMPOSED = 1, TKTR_PHASE_RECONSTRUCTED = 2 } tktr_phase;

typedef struct tktr_config tktr_config;
typedef struct tktr_experiment tktr_experiment;
typedef struct tktr_checkpoint tktr_checkpoint;

typedef struct tktr_metrics_row {
  int epoch;
  double wall_time_s;
  double train_loss;
  double test_acc;
  uint64_t param_count;
  uint64_t flops_est;
  double lr;
  tktr_phase phase;
} tktr_metrics_row;

/* Message of the last failed call on this thread; empty after a success. */
TKTR_API const char* tktr_last_error(void);
TKTR_API const char* tktr_status_name(tktr_status status);
TKTR_API const char* tktr_version(void);

/* Warnings raised inside the library (for example a decomposition that
   replaced no layer). Without a callback they are dropped. */
typedef void (*tktr_message_fn)(void* user, const char* message);
TKTR_API void tktr_set_message_callback(tktr_message_fn fn, void* user);

/* Strings returned through char** outputs are released with tktr_string_free. */
TKTR_API void tktr_string_free(char* s);

/* ---- configuration ---- */
TKTR_API tktr_status tktr_config_load(const char* path, tktr_config** out);
TKTR_API tktr_status tktr_config_parse(const char* text, tktr_config** out);
TKTR_API tktr_status tktr_config_set_output_dir(tktr_config* cfg, const char* dir);
TKTR_API tktr_status tktr_config_to_text(const tktr_config* cfg, char** out);
TKTR_API void tktr_config_free(tktr_config* cfg);

/* ---- experiment ---- */
/* Loads the data set and initializes the model; the output directory gets a
   fresh metrics.csv. */
TKTR_API tktr_status tktr_experiment_create(const tktr_config* cfg, tktr_experiment** out);
/* Trains one epoch, applies the schedule event due at its end, evaluates and
   appends one metrics row. */
TKTR_API tktr_status tktr_experiment_step(tktr_experiment* exp);
TKTR_API int tktr_experiment_finished(const tktr_experiment* exp);
TKTR_API int tktr_experiment_epoch(const tktr_experiment* exp);
TKTR_API tktr_status tktr_experiment_last_row(const tktr_experiment* exp, tktr_metrics_row* row);
/* Table of the decomposition performed during the run; empty when none happened. */
TKTR_API tktr_status tktr_experiment_decomposition(const tktr_experiment* exp, char** text);
/* Writes final.ckpt and report.json into the output directory. */
TKTR_API tktr_status tktr_experiment_write_outputs(const tktr_experiment* exp);
/* Snapshot continuing under cfg, which may differ only in future schedule
   events and the output directory. */
TKTR_API tktr_status tktr_experiment_fork(const tktr_experiment* exp, const tktr_config* cfg, tktr_experiment** out);
TKTR_API void tktr_experiment_free(tktr_experiment* exp);

/* ---- checkpoints ---- */
TKTR_API tktr_status tktr_checkpoint_load(const char* path, tktr_checkpoint** out);
TKTR_API tktr_status tktr_checkpoint_save(const tktr_checkpoint* ckpt, const char* path);
TKTR_API uint64_t tktr_checkpoint_param_count(const tktr_checkpoint* ckpt);
/* Replaces every eligible conv by its Tucker chain. cfg supplies the
   eligibility settings and may be NULL for the defaults. *decomposed receives
   the number of replaced layers and *report the per-layer table. */
TKTR_API tktr_status tktr_checkpoint_decompose(tktr_checkpoint* ckpt, const tktr_config* cfg, size_t* decomposed,
                                               char** report);
/* Merges every chain back into one conv; *merged receives the count. */
TKTR_API tktr_status tktr_checkpoint_reconstruct(tktr_checkpoint* ckpt, size_t* merged);
/* Per-layer compression and speedup table. */
TKTR_API tktr_status tktr_checkpoint_estimate(const tktr_checkpoint* ckpt, const tktr_config* cfg, char** table);
/* Test-set accuracy using the data set and thread count named in cfg. */
TKTR_API tktr_status tktr_checkpoint_evaluate(const tktr_checkpoint* ckpt, const tktr_config* cfg, double* accuracy);
TKTR_API void tktr_checkpoint_free(tktr_checkpoint* ckpt);

/* ---- artifacts ---- */
/* Overlays the metrics CSVs into one SVG chart; labels may be NULL to use the
   file names. */
TKTR_API tktr_status tktr_plot(const char* const* csv_paths, const char* const* labels, size_t count,
                               const char* svg_path);
/* Writes a CIFAR-10 binary-format synthetic data set into dir. */
TKTR_API tktr_status tktr_write_synthetic_cifar10(const char* dir, uint64_t seed);

#ifdef __cplusplus
}
#endif

#endif
