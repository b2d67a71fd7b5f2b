/* C interface of the logode adaptive rough-differential-equation solver. */

#ifndef LOGODE_H
#define LOGODE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by fallible functions.
typedef enum LogodeStatus {
  LOGODE_STATUS_OK = 0,
  LOGODE_STATUS_INVALID_ARGUMENT = 1,
  LOGODE_STATUS_SOLVE_FAILED = 2,
} LogodeStatus;

// Opaque problem handle: driver path, vector field, payoff and defaults.
typedef struct LogodeProblem LogodeProblem;

// Opaque run handle: the report of one adaptive solve.
typedef struct LogodeRun LogodeRun;

// Solver options; obtain defaults from [`logode_options_default`].
// Non-positive tolerances or `p` select the problem's own defaults;
// non-positive `ode_tol` selects the automatic per-round inner tolerance.
typedef struct LogodeOptions {
  // 0 = er-predicting, 1 = er-testing, 2 = simple-first, 3 = simple-full.
  uint32_t algorithm;
  double tol_abs;
  double tol_rel;
  double p;
  double ode_tol;
  uint32_t max_degree;
  uint32_t subdivisions;
  uint32_t initial_intervals;
  uint32_t max_rounds;
  bool full_error;
} LogodeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The default solver options.
struct LogodeOptions logode_options_default(void);

// Builds a registered example problem (`spike-path`, `spike-field`,
// `changing-roughness`, `langevin`). Returns null on error.
//
// # Safety
// `name` must be a valid NUL-terminated string.
struct LogodeProblem *logode_problem_example(const char *name, uint64_t seed, double horizon);

// Builds a problem from a driver in the path CSV format (`t,x1,…,xd`) and a
// registered field name; `y0` may be null for a zero initial value.
// Returns null on error.
//
// # Safety
// `csv_text` and `field_name` must be valid NUL-terminated strings; when
// `y0` is non-null it must point to `y0_len` readable doubles.
struct LogodeProblem *logode_problem_from_csv(const char *csv_text,
                                              const char *field_name,
                                              const double *y0,
                                              uintptr_t y0_len);

// # Safety
// `problem` must come from a `logode_problem_*` constructor and not have
// been freed.
void logode_problem_free(struct LogodeProblem *problem);

// Runs the adaptive solver. Returns null on error (see
// [`logode_last_error`]); an unconverged run is still returned, with
// `logode_run_converged` false.
//
// # Safety
// `problem` must be a live problem handle; `options` may be null for
// defaults.
struct LogodeRun *logode_solve(const struct LogodeProblem *problem,
                               const struct LogodeOptions *options);

// # Safety
// `run` must come from [`logode_solve`] and not have been freed.
void logode_run_free(struct LogodeRun *run);

// # Safety
// `run` must be a live run handle.
bool logode_run_converged(const struct LogodeRun *run);

// Magnitude of the a-posteriori error estimate (NaN for the simple
// variants, which do not compute it).
//
// # Safety
// `run` must be a live run handle.
double logode_run_estimate(const struct LogodeRun *run);

// Number of intervals in the final partition.
//
// # Safety
// `run` must be a live run handle.
uintptr_t logode_run_intervals(const struct LogodeRun *run);

// Dimension of the payoff vector.
//
// # Safety
// `run` must be a live run handle.
uintptr_t logode_run_payoff_len(const struct LogodeRun *run);

// Copies the terminal payoff `g(ȳ_T)` into `out`.
//
// # Safety
// `run` must be a live run handle and `out` must point to `len` writable
// doubles.
enum LogodeStatus logode_run_payoff(const struct LogodeRun *run, double *out, uintptr_t len);

// The full run report as JSON (17-significant-digit floats); free with
// [`logode_string_free`].
//
// # Safety
// `run` must be a live run handle.
char *logode_run_summary_json(const struct LogodeRun *run);

// The message of the most recent error on this thread; free with
// [`logode_string_free`]. Null when no error has occurred.
char *logode_last_error(void);

// # Safety
// `s` must have been returned by this library and not freed before.
void logode_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* LOGODE_H */
