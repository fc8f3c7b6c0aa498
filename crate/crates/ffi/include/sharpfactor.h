#ifndef SHARPFACTOR_H
#define SHARPFACTOR_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; the nonzero values match the CLI exit codes where they overlap.
 */
typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_IO = 1,
  SF_STATUS_INVALID = 2,
  SF_STATUS_NOT_MINIMIZER = 3,
  SF_STATUS_NO_CONVERGENCE = 4,
  SF_STATUS_SIZE_CAP = 5,
  SF_STATUS_NULL_POINTER = 6,
  SF_STATUS_BUFFER_TOO_SMALL = 7,
  SF_STATUS_PANIC = 8,
} SfStatus;

/**
 * A factor chain together with its target matrix.
 */
typedef struct SfInstance SfInstance;

/**
 * Result of a sharpness computation.
 */
typedef struct SfReport SfReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a random minimizer for widths `dims[0..len]` (standard normal
 * factors, target set to their product).
 *
 * # Safety
 * `dims` must point to `len` readable values and `out` must be writable.
 */
enum SfStatus sf_instance_make_minimizer(const size_t *dims,
                                         size_t len,
                                         uint64_t seed,
                                         struct SfInstance **out);

/**
 * Parses an instance document `{"dims", "factors", "target"}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` must be writable.
 */
enum SfStatus sf_instance_from_json(const char *json, struct SfInstance **out);

/**
 * Serializes an instance; free the string with [`sf_string_free`].
 *
 * # Safety
 * `inst` must be a live handle and `out` must be writable.
 */
enum SfStatus sf_instance_to_json(const struct SfInstance *inst, char **out);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void sf_string_free(char *s);

/**
 * # Safety
 * `inst` must come from this library, or be null.
 */
void sf_instance_free(struct SfInstance *inst);

/**
 * Number of parameters `N`; zero for a null handle.
 *
 * # Safety
 * `inst` must be a live handle or null.
 */
size_t sf_instance_num_params(const struct SfInstance *inst);

/**
 * Depth `L`; zero for a null handle.
 *
 * # Safety
 * `inst` must be a live handle or null.
 */
size_t sf_instance_depth(const struct SfInstance *inst);

/**
 * Copies the `N` flat parameters into `buf`.
 *
 * # Safety
 * `inst` must be a live handle and `buf` must hold `len` values.
 */
enum SfStatus sf_instance_params(const struct SfInstance *inst, double *buf, size_t len);

/**
 * `‖M − W_L⋯W_1‖_F²`.
 *
 * # Safety
 * `inst` must be a live handle and `out` must be writable.
 */
enum SfStatus sf_instance_loss(const struct SfInstance *inst, double *out);

/**
 * Largest Hessian eigenvalue at a certified minimizer, with the maximizing
 * direction. Fails with `NotMinimizer` away from minima.
 *
 * # Safety
 * `inst` must be a live handle and `out` must be writable.
 */
enum SfStatus sf_lambda_max(const struct SfInstance *inst, struct SfReport **out);

/**
 * # Safety
 * `rep` must come from this library, or be null.
 */
void sf_report_free(struct SfReport *rep);

/**
 * NaN for a null handle.
 *
 * # Safety
 * `rep` must be a live handle or null.
 */
double sf_report_lambda_max(const struct SfReport *rep);

/**
 * Static name of the formula used; null for a null handle.
 *
 * # Safety
 * `rep` must be a live handle or null.
 */
const char *sf_report_method(const struct SfReport *rep);

/**
 * 1 if the top eigenvalue looked tied, 0 if not, -1 for a null handle.
 *
 * # Safety
 * `rep` must be a live handle or null.
 */
int32_t sf_report_degenerate(const struct SfReport *rep);

/**
 * Copies the unit-norm extremal direction (length `N`) into `buf`.
 *
 * # Safety
 * `rep` must be a live handle and `buf` must hold `len` values.
 */
enum SfStatus sf_report_direction(const struct SfReport *rep, double *buf, size_t len);

/**
 * Exact second derivative of the loss along the flat direction `dir`.
 *
 * # Safety
 * `inst` must be a live handle, `dir` must hold `len` values and `out`
 * must be writable.
 */
enum SfStatus sf_second_directional(const struct SfInstance *inst,
                                    const double *dir,
                                    size_t len,
                                    double *out);

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * call into the library from the same thread.
 */
const char *sf_last_error_message(void);

const char *sf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHARPFACTOR_H */
