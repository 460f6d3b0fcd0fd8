/* SPDX-License-Identifier: Apache-2.0 */

#ifndef CRS_H
#define CRS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CrsStatus {
  CRS_STATUS_OK = 0,
  CRS_STATUS_NULL_POINTER = 1,
  CRS_STATUS_INVALID_ARGUMENT = 2,
  CRS_STATUS_DOMAIN = 3,
  CRS_STATUS_CONVERGENCE = 4,
  CRS_STATUS_EXECUTION = 5,
  CRS_STATUS_CALIBRATION = 6,
  CRS_STATUS_IO = 7,
  CRS_STATUS_PANIC = 8,
} CrsStatus;

typedef enum CrsScheme {
  CRS_SCHEME_PC = 0,
  CRS_SCHEME_TC = 1,
} CrsScheme;

/**
 * ECM device parameters.
 */
typedef struct CrsParams CrsParams;

/**
 * A compiled adder program.
 */
typedef struct CrsProgram CrsProgram;

/**
 * Result of running a program.
 */
typedef struct CrsTrace CrsTrace;

/**
 * Pulse parameters of device-level execution.
 */
typedef struct CrsPulseParams {
  double v_w;
  double t_pulse;
  double t_gap;
  size_t samples_per_pulse;
  double i_spike;
} CrsPulseParams;

/**
 * One destructive read recorded during execution.
 */
typedef struct CrsVerdict {
  /**
   * One-based step number.
   */
  size_t step;
  size_t array;
  size_t wl;
  size_t bl;
  bool spike;
  bool bit;
} CrsVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes, 0 if there
 * is none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t crs_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *crs_version(void);

/**
 * Next logic state of a CRS cell.
 */
bool crs_fsm_next(bool z_prev, bool wl, bool bl);

/**
 * Create a parameter set with the default device values.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CrsStatus crs_params_new(struct CrsParams **out);

/**
 * Parse a `key=value` parameter file body.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CrsStatus crs_params_parse(const char *text, struct CrsParams **out);

/**
 * Set one parameter by key. The set is validated as a whole afterwards and
 * left unchanged on failure.
 *
 * # Safety
 * `params` must come from this library; `key` must be NUL-terminated.
 */
enum CrsStatus crs_params_set(struct CrsParams *params, const char *key, double value);

/**
 * Read one parameter by key.
 *
 * # Safety
 * `params` must come from this library; `key` must be NUL-terminated;
 * `value` must be a valid pointer.
 */
enum CrsStatus crs_params_get(const struct CrsParams *params, const char *key, double *value);

/**
 * # Safety
 * `params` must be null or come from this library and not be used again.
 */
void crs_params_free(struct CrsParams *params);

/**
 * Compile an `n`-bit adder (or subtractor).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CrsStatus crs_program_generate(enum CrsScheme scheme,
                                    size_t n,
                                    bool subtract,
                                    struct CrsProgram **out);

/**
 * Number of steps, or 0 for a null handle.
 *
 * # Safety
 * `program` must be null or come from this library.
 */
size_t crs_program_len(const struct CrsProgram *program);

/**
 * Number of cells the program uses, or 0 for a null handle.
 *
 * # Safety
 * `program` must be null or come from this library.
 */
size_t crs_program_devices(const struct CrsProgram *program);

/**
 * Serialize to JSON. Release the string with [`crs_string_free`].
 *
 * # Safety
 * `program` must come from this library; `out` must be a valid pointer.
 */
enum CrsStatus crs_program_to_json(const struct CrsProgram *program, char **out);

/**
 * Parse a program from JSON.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be a valid pointer.
 */
enum CrsStatus crs_program_from_json(const char *json, struct CrsProgram **out);

/**
 * Number of structural problems found in the program (0 means valid).
 *
 * # Safety
 * `program` must be null or come from this library.
 */
size_t crs_program_diagnostic_count(const struct CrsProgram *program);

/**
 * # Safety
 * `program` must be null or come from this library and not be used again.
 */
void crs_program_free(struct CrsProgram *program);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void crs_string_free(char *s);

/**
 * Search pulse parameters for half-select operation.
 *
 * # Safety
 * `params` must come from this library; `out` must be a valid pointer.
 */
enum CrsStatus crs_calibrate(const struct CrsParams *params,
                             double margin,
                             struct CrsPulseParams *out);

/**
 * Run a program on the behavioral FSM array.
 *
 * # Safety
 * `program` must come from this library; `a` and `b` must be
 * NUL-terminated; `out` must be a valid pointer.
 */
enum CrsStatus crs_run_behavioral(const struct CrsProgram *program,
                                  const char *a,
                                  const char *b,
                                  bool c0,
                                  struct CrsTrace **out);

/**
 * Run a program on ECM device pairs. Waveforms are not captured.
 *
 * # Safety
 * As [`crs_run_behavioral`]; additionally `pulse` and `params` must be valid.
 */
enum CrsStatus crs_run_device(const struct CrsProgram *program,
                              const char *a,
                              const char *b,
                              bool c0,
                              const struct CrsPulseParams *pulse,
                              const struct CrsParams *params,
                              struct CrsTrace **out);

/**
 * Write the result word (MSB first, NUL-terminated) into `buf`. Returns the
 * number of result bits, or 0 if `trace` is null. The output is truncated
 * if `len` is too small.
 *
 * # Safety
 * `trace` must be null or come from this library; `buf` must be null or
 * point to `len` writable bytes.
 */
size_t crs_trace_result(const struct CrsTrace *trace, char *buf, size_t len);

/**
 * Number of reads recorded in the trace.
 *
 * # Safety
 * `trace` must be null or come from this library.
 */
size_t crs_trace_verdict_count(const struct CrsTrace *trace);

/**
 * # Safety
 * `trace` must come from this library; `out` must be a valid pointer.
 */
enum CrsStatus crs_trace_verdict(const struct CrsTrace *trace,
                                 size_t index,
                                 struct CrsVerdict *out);

/**
 * Number of cells whose state differed from the FSM prediction.
 *
 * # Safety
 * `trace` must be null or come from this library.
 */
size_t crs_trace_violation_count(const struct CrsTrace *trace);

/**
 * # Safety
 * `trace` must be null or come from this library and not be used again.
 */
void crs_trace_free(struct CrsTrace *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRS_H */
