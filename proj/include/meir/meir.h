/* C interface to the meir toolkit: dataset synthesis, training, prediction,
 * evaluation, retrieval and the analysis reports.
 *
 * Every function returns a meir_status. On failure, meir_last_error() holds a
 * one-line message for the calling thread. Text outputs are returned as
 * meir_text handles owned by the caller. */
#ifndef MEIR_MEIR_H
#define MEIR_MEIR_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MEIR_API __declspec(dllexport)
#else
#define MEIR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum meir_status {
  MEIR_OK = 0,
  MEIR_ERR_VALIDATION = 1,
  MEIR_ERR_FORMAT = 2,
  MEIR_ERR_NOT_FOUND = 3,
  MEIR_ERR_IO = 4,
  MEIR_ERR_EMPTY_INDEX = 5,
  MEIR_ERR_DIVERGED = 6,
  MEIR_ERR_INVALID_ARGUMENT = 7,
  MEIR_ERR_USAGE = 8,
  MEIR_ERR_INTERNAL = 9
} meir_status;

typedef struct meir_config meir_config;
typedef struct meir_model meir_model;
typedef struct meir_text meir_text;

MEIR_API const char* meir_version(void);
MEIR_API const char* meir_status_name(meir_status status);
/* Message of the last failure on this thread; empty after a success. */
MEIR_API const char* meir_last_error(void);

/* Settings as `key = value` pairs. A null config means all defaults. */
MEIR_API meir_status meir_config_create(meir_config** out);
MEIR_API meir_status meir_config_load(const char* path, meir_config** out);
MEIR_API meir_status meir_config_set(meir_config* config, const char* key, const char* value);
MEIR_API meir_status meir_config_dump(const meir_config* config, meir_text** out);
MEIR_API void meir_config_destroy(meir_config* config);

MEIR_API const char* meir_text_data(const meir_text* text);
MEIR_API size_t meir_text_size(const meir_text* text);
MEIR_API void meir_text_destroy(meir_text* text);

/* Writes reference/train/val/test jsonl files, images.feat, gazetteer.tsv and
 * manifest.json into out_dir. */
MEIR_API meir_status meir_synth(const meir_config* config, uint64_t seed, const char* out_dir);

/* Trains on a synth directory and writes the checkpoint plus `<ckpt>.log`.
 * The per-epoch log is also returned when log_out is non-null. */
MEIR_API meir_status meir_train(const char* data_dir, const meir_config* config, uint64_t seed,
                                const char* ckpt_path, meir_text** log_out);

MEIR_API meir_status meir_model_load(const char* ckpt_path, meir_model** out);
MEIR_API void meir_model_destroy(meir_model* model);

/* One line per query: id, integrity_prob, rel_prob, three comma-separated
 * manipulation probabilities (clean, manipulated, unknown), retrieved id. */
MEIR_API meir_status meir_predict(const meir_model* model, const char* query_file,
                                  const char* index_file, meir_text** out);

/* Test-split report as `metric<TAB>value` lines. missing is null or one of
 * "image", "text", "gps". */
MEIR_API meir_status meir_eval(const meir_model* model, const char* data_dir, const char* missing,
                               meir_text** out);

/* `query_id<TAB>rank<TAB>reference_id<TAB>score` lines. The config may set
 * gps_sim. */
MEIR_API meir_status meir_retrieve(const char* query_file, const char* index_file,
                                   const char* modalities, size_t k, const meir_config* config,
                                   meir_text** out);

MEIR_API meir_status meir_importance(const char* data_dir, size_t L, size_t trials, uint64_t seed,
                                     meir_text** out);

MEIR_API meir_status meir_baseline_srs(const char* data_dir, size_t k, meir_text** out);

#ifdef __cplusplus
}
#endif

#endif /* MEIR_MEIR_H */
