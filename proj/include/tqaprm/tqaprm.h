/*
 * C interface to the tqaprm harness.
 *
 * Every function returning tqaprm_status sets a thread-local message readable
 * through tqaprm_last_error() when it fails. Strings returned through char**
 * out-parameters are owned by the caller and released with
 * tqaprm_string_free(). Structured values cross the boundary as JSON text.
 */
#ifndef TQAPRM_H
#define TQAPRM_H

#include <stddef.h>

#if defined(TQAPRM_BUILDING_LIBRARY)
#define TQAPRM_API __attribute__((visibility("default")))
#else
#define TQAPRM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tqaprm_status {
  TQAPRM_OK = 0,
  TQAPRM_E_INVALID_ARGUMENT = 1,
  TQAPRM_E_PARSE = 2,
  TQAPRM_E_VALIDATION = 3,
  TQAPRM_E_IO = 4,
  TQAPRM_E_TRANSPORT = 5,
  TQAPRM_E_RETRIES_EXHAUSTED = 6,
  TQAPRM_E_PROTOCOL = 7,
  TQAPRM_E_CAPABILITY = 8,
  TQAPRM_E_SCRIPTED_MISS = 9,
  TQAPRM_E_CONFIG = 10,
  TQAPRM_E_MISSING_ARTIFACT = 11,
  TQAPRM_E_SAMPLING = 12,
  TQAPRM_E_INTERNAL = 13
} tqaprm_status;

typedef struct tqaprm_pipeline tqaprm_pipeline;
typedef struct tqaprm_session tqaprm_session;

TQAPRM_API const char* tqaprm_version(void);
TQAPRM_API const char* tqaprm_status_name(tqaprm_status status);
/* Message of the last failure on this thread; empty when none. */
TQAPRM_API const char* tqaprm_last_error(void);
TQAPRM_API void tqaprm_string_free(char* s);
/* trace, debug, info, warn, error, off */
TQAPRM_API tqaprm_status tqaprm_set_log_level(const char* level);

/* ---- configuration --------------------------------------------------- */

/* Applies `overrides_json` (object of "dotted.key" -> value text, may be
 * NULL) to `config_json` and resolves relative paths against `base_dir`.
 * `violations_json` receives a JSON array of messages, empty when valid. */
TQAPRM_API tqaprm_status tqaprm_config_check(const char* config_json, const char* overrides_json,
                                             const char* base_dir, char** violations_json,
                                             char** resolved_json);

/* ---- pipeline -------------------------------------------------------- */

/* Fails with TQAPRM_E_VALIDATION listing every violation. */
TQAPRM_API tqaprm_status tqaprm_pipeline_open(const char* config_json, const char* overrides_json,
                                              const char* base_dir, tqaprm_pipeline** out);
TQAPRM_API void tqaprm_pipeline_close(tqaprm_pipeline* pipeline);

/* stage: sample, verify, select, eval, build-train */
TQAPRM_API tqaprm_status tqaprm_pipeline_run(tqaprm_pipeline* pipeline, const char* stage, char** summary_json);

TQAPRM_API tqaprm_status tqaprm_annotations_export(tqaprm_pipeline* pipeline, const char* path, size_t* count);
TQAPRM_API tqaprm_status tqaprm_annotations_import(tqaprm_pipeline* pipeline, const char* path, size_t* count);

TQAPRM_API tqaprm_status tqaprm_session_open(tqaprm_pipeline* pipeline, tqaprm_session** out);
/* `item_json` is set to NULL when no unlabeled step remains. */
TQAPRM_API tqaprm_status tqaprm_session_current(tqaprm_session* session, char** item_json);
/* label: "correct" or "incorrect" */
TQAPRM_API tqaprm_status tqaprm_session_label(tqaprm_session* session, const char* label);
TQAPRM_API tqaprm_status tqaprm_session_skip(tqaprm_session* session);
TQAPRM_API tqaprm_status tqaprm_session_save(tqaprm_session* session);
TQAPRM_API void tqaprm_session_progress(const tqaprm_session* session, size_t* labeled, size_t* total);
TQAPRM_API void tqaprm_session_close(tqaprm_session* session);

/* ---- utilities ------------------------------------------------------- */

/* kind: freeform, binary, ternary */
TQAPRM_API tqaprm_status tqaprm_normalize_answer(const char* text, const char* kind, char** out);
TQAPRM_API tqaprm_status tqaprm_exact_match(const char* pred, const char* gold, const char* kind, int* match);
/* table_json: {"header": [...], "rows": [[...], ...]} */
TQAPRM_API tqaprm_status tqaprm_serialize_table(const char* table_json, char** out);
/* candidates_json: {"instance_id": ..., "candidates": [{"path_id", "answer", "step_rewards"}]};
 * strategy: best-of-n, majority, oracle, pass@1; aggregation: mean, min, last */
TQAPRM_API tqaprm_status tqaprm_select(const char* candidates_json, const char* strategy, const char* gold,
                                       const char* kind, const char* aggregation, char** result_json);
TQAPRM_API tqaprm_status tqaprm_parse_transcript(const char* text, size_t expected_steps, char** verdicts_json);
TQAPRM_API tqaprm_status tqaprm_classify_consistency(const int* labels, size_t count, int* consistent);

#ifdef __cplusplus
}
#endif

#endif /* TQAPRM_H */
