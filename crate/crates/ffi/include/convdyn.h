#ifndef CONVDYN_H
#define CONVDYN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ConvdynClass {
  CONVDYN_CLASS_GLOBAL = 0,
  CONVDYN_CLASS_SPURIOUS_LOCAL = 1,
  CONVDYN_CLASS_UNDETERMINED = 2,
} ConvdynClass;

/**
 * Status codes returned by every fallible call.
 */
typedef enum ConvdynStatus {
  CONVDYN_STATUS_OK = 0,
  CONVDYN_STATUS_NULL_POINTER = 1,
  CONVDYN_STATUS_INVALID_ARGUMENT = 2,
  CONVDYN_STATUS_DIMENSION_MISMATCH = 3,
  CONVDYN_STATUS_DOMAIN = 4,
  CONVDYN_STATUS_PANIC = 5,
} ConvdynStatus;

typedef enum ConvdynStepRule {
  /**
   * Step bound of the convergence theorem at the initial point, times
   * `step_value`.
   */
  CONVDYN_STEP_RULE_AUTO = 0,
  /**
   * `step_value · min{1/k, 1/((‖a*‖² + (1ᵀa*)²)‖w*‖²)}`.
   */
  CONVDYN_STEP_RULE_SAFE = 1,
  /**
   * `step_value` is the step size.
   */
  CONVDYN_STEP_RULE_FIXED = 2,
} ConvdynStepRule;

typedef struct ConvdynRunResult ConvdynRunResult;

typedef struct ConvdynStudent ConvdynStudent;

typedef struct ConvdynTeacher ConvdynTeacher;

/**
 * Options for [`convdyn_run`]. Start from [`convdyn_run_options_default`].
 */
typedef struct ConvdynRunOptions {
  enum ConvdynStepRule step_rule;
  /**
   * Scale for `Auto` and `Safe`, step size for `Fixed`.
   */
  double step_value;
  uint64_t max_iters;
  double grad_tol;
  double class_tol;
  /**
   * Stop once the iterate has settled into a stationary family.
   */
  bool stop_when_classified;
  /**
   * Check the monotonicity invariants at every iteration.
   */
  bool monitor;
} ConvdynRunOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *convdyn_last_error(void);

/**
 * Creates a teacher from `w_star` (length `p`) and `a_star` (length `k`).
 *
 * # Safety
 * The arrays must hold `p` and `k` doubles; `out` must be writable.
 */
enum ConvdynStatus convdyn_teacher_new(const double *w_star,
                                       size_t p,
                                       const double *a_star,
                                       size_t k,
                                       struct ConvdynTeacher **out);

/**
 * # Safety
 * `t` must be null or a handle from [`convdyn_teacher_new`] not yet freed.
 */
void convdyn_teacher_free(struct ConvdynTeacher *t);

/**
 * Creates a student from `v` (length `p`) and `a` (length `k`).
 *
 * # Safety
 * The arrays must hold `p` and `k` doubles; `out` must be writable.
 */
enum ConvdynStatus convdyn_student_new(const double *v,
                                       size_t p,
                                       const double *a,
                                       size_t k,
                                       struct ConvdynStudent **out);

/**
 * # Safety
 * `s` must be null or a handle from [`convdyn_student_new`] not yet freed.
 */
void convdyn_student_free(struct ConvdynStudent *s);

/**
 * Closed-form population loss.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum ConvdynStatus convdyn_loss(const struct ConvdynStudent *s,
                                const struct ConvdynTeacher *t,
                                double *out);

/**
 * Closed-form gradients with respect to `v` and `a`, written to buffers of
 * length `p` and `k`.
 *
 * # Safety
 * Handles must be live; the buffers must hold `p` and `k` doubles.
 */
enum ConvdynStatus convdyn_gradients(const struct ConvdynStudent *s,
                                     const struct ConvdynTeacher *t,
                                     double *grad_v,
                                     size_t p,
                                     double *grad_a,
                                     size_t k);

/**
 * Which stationary family `s` is within `class_tol` of.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum ConvdynStatus convdyn_classify(const struct ConvdynStudent *s,
                                    const struct ConvdynTeacher *t,
                                    double class_tol,
                                    enum ConvdynClass *out);

struct ConvdynRunOptions convdyn_run_options_default(void);

/**
 * Gradient descent from `s0`. Only the final iterate is kept.
 *
 * # Safety
 * Handles must be live; `opts` must be null (defaults) or readable; `out`
 * must be writable.
 */
enum ConvdynStatus convdyn_run(const struct ConvdynStudent *s0,
                               const struct ConvdynTeacher *t,
                               const struct ConvdynRunOptions *opts,
                               struct ConvdynRunResult **out);

/**
 * # Safety
 * `r` must be null or a handle from [`convdyn_run`] not yet freed.
 */
void convdyn_result_free(struct ConvdynRunResult *r);

/**
 * # Safety
 * `r` must be live; `out` must be writable.
 */
enum ConvdynStatus convdyn_result_class(const struct ConvdynRunResult *r, enum ConvdynClass *out);

/**
 * # Safety
 * `r` must be live; `out` must be writable.
 */
enum ConvdynStatus convdyn_result_iters(const struct ConvdynRunResult *r, uint64_t *out);

/**
 * Step size the run used.
 *
 * # Safety
 * `r` must be live; `out` must be writable.
 */
enum ConvdynStatus convdyn_result_eta(const struct ConvdynRunResult *r, double *out);

/**
 * Population loss at the final iterate.
 *
 * # Safety
 * `r` must be live; `out` must be writable.
 */
enum ConvdynStatus convdyn_result_final_loss(const struct ConvdynRunResult *r, double *out);

/**
 * Number of invariant violations seen by the monitor.
 *
 * # Safety
 * `r` must be live; `out` must be writable.
 */
enum ConvdynStatus convdyn_result_violation_count(const struct ConvdynRunResult *r, uint64_t *out);

/**
 * Copies the final `(v, a)` into buffers of length `p` and `k`.
 *
 * # Safety
 * `r` must be live; the buffers must hold `p` and `k` doubles.
 */
enum ConvdynStatus convdyn_result_final_point(const struct ConvdynRunResult *r,
                                              double *v,
                                              size_t p,
                                              double *a,
                                              size_t k);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVDYN_H */
