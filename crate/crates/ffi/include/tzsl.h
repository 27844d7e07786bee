#ifndef TZSL_H
#define TZSL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TzslStatus {
  TZSL_STATUS_OK = 0,
  TZSL_STATUS_NULL_POINTER = 1,
  TZSL_STATUS_INVALID_ARGUMENT = 2,
  TZSL_STATUS_CONFIG = 3,
  TZSL_STATUS_SHAPE = 4,
  TZSL_STATUS_IO = 5,
  TZSL_STATUS_FORMAT = 6,
  TZSL_STATUS_NON_FINITE = 7,
  TZSL_STATUS_SINGULAR = 8,
  TZSL_STATUS_DIVERGED = 9,
  TZSL_STATUS_MISSING_DATA = 10,
  TZSL_STATUS_PANIC = 11,
} TzslStatus;

typedef enum TzslEvalMode {
  TZSL_EVAL_MODE_TZSL = 0,
  TZSL_EVAL_MODE_GTZSL = 1,
  /**
   * JSON array with one report per feature space.
   */
  TZSL_EVAL_MODE_SPACES = 2,
} TzslEvalMode;

typedef enum TzslPriorMethod {
  TZSL_PRIOR_METHOD_CPE = 0,
  TZSL_PRIOR_METHOD_BBSE = 1,
  TZSL_PRIOR_METHOD_UNIFORM = 2,
} TzslPriorMethod;

/**
 * Opaque dataset handle.
 */
typedef struct TzslDataset TzslDataset;

/**
 * Opaque trained model: nets, unseen prior and the settings they came from.
 */
typedef struct TzslModel TzslModel;

typedef struct TzslDatasetShape {
  size_t num_seen_classes;
  size_t num_unseen_classes;
  size_t feature_dim;
  size_t attribute_dim;
  size_t num_seen;
  size_t num_unseen;
  /**
   * 1 when unseen evaluation labels are present.
   */
  int32_t has_unseen_labels;
} TzslDatasetShape;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread; do not free.
 */
const char *tzsl_last_error(void);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void tzsl_string_free(char *s);

/**
 * Loads a dataset directory. `preprocessing_json` may be null for L2 at
 * radius 1.
 *
 * # Safety
 * Pointers must be valid; `out` must be writable.
 */
enum TzslStatus tzsl_dataset_load(const char *dir,
                                  const char *preprocessing_json,
                                  struct TzslDataset **out);

/**
 * Generates a synthetic dataset. Null `spec_json` gives the standard
 * fixture; null `preprocessing_json` gives L2 at radius 1.
 *
 * # Safety
 * Pointers must be valid or null as documented; `out` must be writable.
 */
enum TzslStatus tzsl_dataset_synthetic(const char *spec_json,
                                       uint64_t seed,
                                       const char *preprocessing_json,
                                       struct TzslDataset **out);

/**
 * # Safety
 * `ds` must come from this library, or be null.
 */
void tzsl_dataset_free(struct TzslDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle and `out` writable.
 */
enum TzslStatus tzsl_dataset_shape(const struct TzslDataset *ds, struct TzslDatasetShape *out);

/**
 * Trains the full transductive pipeline. `config_json` is a strict
 * training config (null for the fixture settings). On success `*out` owns
 * the model and, when `report_json` is non-null, `*report_json` holds the
 * evaluation report.
 *
 * # Safety
 * `ds` must be a live handle; pointers must be valid or null as documented.
 */
enum TzslStatus tzsl_train(const struct TzslDataset *ds,
                           const char *config_json,
                           struct TzslModel **out,
                           char **report_json);

/**
 * Writes a checkpoint directory readable by the command-line tool.
 *
 * # Safety
 * `model` must be a live handle and `dir` a valid string.
 */
enum TzslStatus tzsl_model_save(const struct TzslModel *model, const char *dir);

/**
 * # Safety
 * `dir` must be a valid string and `out` writable.
 */
enum TzslStatus tzsl_model_load(const char *dir, struct TzslModel **out);

/**
 * # Safety
 * `model` must come from this library, or be null.
 */
void tzsl_model_free(struct TzslModel *model);

/**
 * Evaluates a model; the report (or array of reports) is written to
 * `*report_json`.
 *
 * # Safety
 * Handles must be live and `report_json` writable.
 */
enum TzslStatus tzsl_evaluate(const struct TzslModel *model,
                              const struct TzslDataset *ds,
                              enum TzslEvalMode mode,
                              char **report_json);

/**
 * Estimates the unseen class prior into `out_probs[0..len]`, where `len`
 * must equal the number of unseen classes.
 *
 * # Safety
 * Handles must be live and `out_probs` valid for `len` writes.
 */
enum TzslStatus tzsl_prior_estimate(const struct TzslModel *model,
                                    const struct TzslDataset *ds,
                                    enum TzslPriorMethod method,
                                    uint64_t seed,
                                    double *out_probs,
                                    size_t len);

/**
 * Scales `input[0..len]` to norm `radius` into `out` (which may alias
 * `input`).
 *
 * # Safety
 * `input` and `out` must be valid for `len` elements.
 */
enum TzslStatus tzsl_l2_normalize(const double *input, size_t len, double radius, double *out);

/**
 * `2 s u / (s + u)`, and 0 when both are 0.
 */
double tzsl_harmonic_mean(double acc_seen, double acc_unseen);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TZSL_H */
