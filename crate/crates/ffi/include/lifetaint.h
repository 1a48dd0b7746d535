#ifndef LIFETAINT_H
#define LIFETAINT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Report information leaks.
 */
#define LT_DETECT_LEAK 1

/**
 * Report SMS misuse.
 */
#define LT_DETECT_SMS 2

typedef enum LtStatus {
  LT_STATUS_OK = 0,
  LT_STATUS_NULL_POINTER = 1,
  LT_STATUS_INVALID_UTF8 = 2,
  LT_STATUS_IO = 3,
  LT_STATUS_PARSE = 4,
  LT_STATUS_VALIDATION = 5,
  LT_STATUS_ANALYSIS = 6,
  LT_STATUS_PANIC = 7,
} LtStatus;

/**
 * A loaded app.
 */
typedef struct LtApp LtApp;

/**
 * A life-cycle model.
 */
typedef struct LtModel LtModel;

/**
 * The report of one analysed app.
 */
typedef struct LtReport LtReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a life-cycle model from a JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LtStatus lt_model_load(const char *path, struct LtModel **out);

/**
 * Number of event sequences derived from `model`.
 *
 * # Safety
 * `model` must come from [`lt_model_load`]; `out` must be valid.
 */
enum LtStatus lt_model_sequence_count(const struct LtModel *model, size_t *out);

/**
 * # Safety
 * `model` must come from [`lt_model_load`] or be null.
 */
void lt_model_free(struct LtModel *model);

/**
 * Loads an app from its IR file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LtStatus lt_app_load(const char *path, struct LtApp **out);

/**
 * # Safety
 * `app` must come from [`lt_app_load`] or be null.
 */
void lt_app_free(struct LtApp *app);

/**
 * Analyses `app` with the bundled models, escalating the permutation width
 * up to `m_max`. `config_path` may be null for the bundled source and sink
 * list. `detect` is a mask of `LT_DETECT_*` flags.
 *
 * # Safety
 * `app` must come from [`lt_app_load`]; `config_path` must be null or a
 * NUL-terminated string; `out` must be valid.
 */
enum LtStatus lt_analyze(const struct LtApp *app,
                         const char *config_path,
                         size_t m_max,
                         uint64_t budget_secs,
                         uint32_t detect,
                         struct LtReport **out);

/**
 * # Safety
 * `report` must come from [`lt_analyze`]; `out` must be valid.
 */
enum LtStatus lt_report_warning_count(const struct LtReport *report, size_t *out);

/**
 * Whether the analysis ran out of time.
 *
 * # Safety
 * `report` must come from [`lt_analyze`]; `out` must be valid.
 */
enum LtStatus lt_report_killed(const struct LtReport *report, bool *out);

/**
 * Renders the report as JSON. Release the string with [`lt_string_free`].
 *
 * # Safety
 * `report` must come from [`lt_analyze`]; `out` must be valid.
 */
enum LtStatus lt_report_to_json(const struct LtReport *report, char **out);

/**
 * # Safety
 * `report` must come from [`lt_analyze`] or be null.
 */
void lt_report_free(struct LtReport *report);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void lt_string_free(char *s);

/**
 * Message of the last failure on this thread, or null after a success.
 * Valid until the next call into the library on the same thread.
 */
const char *lt_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIFETAINT_H */
