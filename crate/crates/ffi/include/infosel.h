#ifndef INFOSEL_H
#define INFOSEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum InfoselProbeKind {
  INFOSEL_PROBE_KIND_LINEAR = 0,
  INFOSEL_PROBE_KIND_NEAREST_PROTOTYPE = 1,
} InfoselProbeKind;

/**
 * Status codes. The non-zero values match the CLI's exit codes where the
 * categories overlap.
 */
typedef enum InfoselStatus {
  INFOSEL_STATUS_OK = 0,
  /**
   * Bad input data or arguments.
   */
  INFOSEL_STATUS_VALIDATION = 2,
  /**
   * File could not be read or written.
   */
  INFOSEL_STATUS_IO = 3,
  /**
   * Computation failed.
   */
  INFOSEL_STATUS_RUNTIME = 4,
  /**
   * A required pointer argument was null.
   */
  INFOSEL_STATUS_NULL_POINTER = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  INFOSEL_STATUS_PANIC = 6,
} InfoselStatus;

typedef enum InfoselIndicator {
  INFOSEL_INDICATOR_DISTANCE_ENTROPY = 0,
  INFOSEL_INDICATOR_PROBABILITY_ENTROPY = 1,
  INFOSEL_INDICATOR_METRIC = 2,
} InfoselIndicator;

typedef enum InfoselScheme {
  INFOSEL_SCHEME_BALANCED = 0,
  INFOSEL_SCHEME_UNBALANCED = 1,
} InfoselScheme;

typedef enum InfoselDirection {
  INFOSEL_DIRECTION_GOODSET = 0,
  INFOSEL_DIRECTION_BADSET = 1,
} InfoselDirection;

/**
 * A budgeted selection.
 */
typedef struct InfoselPlan InfoselPlan;

/**
 * Per-sample indicator scores.
 */
typedef struct InfoselScores InfoselScores;

/**
 * A positive/negative migration split.
 */
typedef struct InfoselSplit InfoselSplit;

/**
 * An embedding table.
 */
typedef struct InfoselTable InfoselTable;

typedef struct InfoselProbeConfig {
  enum InfoselProbeKind kind;
  double step_size;
  uintptr_t epochs;
  double l2;
  uint64_t seed;
} InfoselProbeConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *infosel_version(void);

/**
 * Stable error code (for example `MISSING_LOGITS`) of the last failed call
 * on this thread, or null if it succeeded. Valid until the next call.
 */
const char *infosel_last_error_code(void);

/**
 * Human-readable message of the last failed call on this thread, or null.
 * Valid until the next call.
 */
const char *infosel_last_error_message(void);

/**
 * Default probe settings.
 */
struct InfoselProbeConfig infosel_probe_config_default(void);

/**
 * Reads an EMB1 file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum InfoselStatus infosel_table_load(const char *path, struct InfoselTable **out);

/**
 * Builds a table from row-major arrays. `logits` may be null; otherwise it
 * holds `n * n_classes` values. Rows are reordered by id.
 *
 * # Safety
 * Each non-null array must hold the stated number of elements.
 */
enum InfoselStatus infosel_table_new(uintptr_t n,
                                     uintptr_t dim,
                                     uintptr_t n_classes,
                                     const uint64_t *ids,
                                     const uint32_t *labels,
                                     const float *features,
                                     const float *logits,
                                     struct InfoselTable **out);

/**
 * Writes a table as EMB1.
 *
 * # Safety
 * `table` must be a live handle and `path` a NUL-terminated string.
 */
enum InfoselStatus infosel_table_save(const struct InfoselTable *table, const char *path);

/**
 * Number of rows; 0 for a null handle.
 *
 * # Safety
 * `table` must be null or a live handle.
 */
uintptr_t infosel_table_len(const struct InfoselTable *table);

/**
 * Feature dimension; 0 for a null handle.
 *
 * # Safety
 * `table` must be null or a live handle.
 */
uintptr_t infosel_table_dim(const struct InfoselTable *table);

/**
 * Class count; 0 for a null handle.
 *
 * # Safety
 * `table` must be null or a live handle.
 */
uintptr_t infosel_table_n_classes(const struct InfoselTable *table);

/**
 * Copies the sample ids (ascending) into `dst` and returns the row count.
 *
 * # Safety
 * `table` must be a live handle; `dst` null or writable for `cap` values.
 */
uintptr_t infosel_table_ids(const struct InfoselTable *table, uint64_t *dst, uintptr_t cap);

/**
 * # Safety
 * `table` must be null or a handle not yet freed.
 */
void infosel_table_free(struct InfoselTable *table);

/**
 * Scores every row of `table`. Distance entropy and metric use the class
 * means of `prototypes_from`, or of `table` itself when that is null.
 * Probability entropy needs logits in `table`.
 *
 * # Safety
 * `table` must be a live handle, `prototypes_from` null or a live handle,
 * and `out` writable.
 */
enum InfoselStatus infosel_score(const struct InfoselTable *table,
                                 const struct InfoselTable *prototypes_from,
                                 enum InfoselIndicator indicator,
                                 struct InfoselScores **out);

/**
 * Number of scored rows; 0 for a null handle.
 *
 * # Safety
 * `scores` must be null or a live handle.
 */
uintptr_t infosel_scores_len(const struct InfoselScores *scores);

/**
 * Reads row `index` (rows are in ascending id order).
 *
 * # Safety
 * `scores` must be a live handle; the out pointers writable.
 */
enum InfoselStatus infosel_scores_get(const struct InfoselScores *scores,
                                      uintptr_t index,
                                      uint64_t *id,
                                      uint32_t *label,
                                      double *score);

/**
 * # Safety
 * `scores` must be null or a handle not yet freed.
 */
void infosel_scores_free(struct InfoselScores *scores);

/**
 * Selects `budget` rows from `scores`.
 *
 * # Safety
 * `scores` must be a live handle and `out` writable.
 */
enum InfoselStatus infosel_select(const struct InfoselScores *scores,
                                  uintptr_t budget,
                                  enum InfoselScheme scheme,
                                  enum InfoselDirection direction,
                                  struct InfoselPlan **out);

/**
 * Copies the selected ids (class-major, best first) into `dst` and returns
 * how many there are.
 *
 * # Safety
 * `plan` must be a live handle; `dst` null or writable for `cap` values.
 */
uintptr_t infosel_plan_ids(const struct InfoselPlan *plan, uint64_t *dst, uintptr_t cap);

/**
 * # Safety
 * `plan` must be null or a handle not yet freed.
 */
void infosel_plan_free(struct InfoselPlan *plan);

/**
 * Splits `train` by distance to the class means of `test`. With
 * `per_class` non-zero the `fraction` applies within each class.
 *
 * # Safety
 * `train` and `test` must be live handles and `out` writable.
 */
enum InfoselStatus infosel_split(const struct InfoselTable *train,
                                 const struct InfoselTable *test,
                                 double fraction,
                                 bool per_class,
                                 struct InfoselSplit **out);

/**
 * Copies the positive ids (ascending) into `dst`; returns their count.
 *
 * # Safety
 * `split` must be a live handle; `dst` null or writable for `cap` values.
 */
uintptr_t infosel_split_positive_ids(const struct InfoselSplit *split,
                                     uint64_t *dst,
                                     uintptr_t cap);

/**
 * Copies the negative ids (ascending) into `dst`; returns their count.
 *
 * # Safety
 * `split` must be a live handle; `dst` null or writable for `cap` values.
 */
uintptr_t infosel_split_negative_ids(const struct InfoselSplit *split,
                                     uint64_t *dst,
                                     uintptr_t cap);

/**
 * # Safety
 * `split` must be null or a handle not yet freed.
 */
void infosel_split_free(struct InfoselSplit *split);

/**
 * Fits a probe on `train` and writes its accuracy on `test`.
 *
 * # Safety
 * `train`, `test` and `config` must be valid; `accuracy` writable.
 */
enum InfoselStatus infosel_eval(const struct InfoselTable *train,
                                const struct InfoselTable *test,
                                const struct InfoselProbeConfig *config,
                                double *accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INFOSEL_H */
