#ifndef PARMOR_H
#define PARMOR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum ParmorStatus {
  PARMOR_STATUS_OK = 0,
  PARMOR_STATUS_NULL_POINTER = 1,
  PARMOR_STATUS_INVALID_INPUT = 2,
  PARMOR_STATUS_CONFIG_INVALID = 3,
  PARMOR_STATUS_DIMENSION_MISMATCH = 4,
  PARMOR_STATUS_PARAMETER_OUT_OF_RANGE = 5,
  /*
   Solver breakdown, spectrum overlap, loss of stability or rank.
   */
  PARMOR_STATUS_NUMERICAL = 6,
  PARMOR_STATUS_IO = 7,
  PARMOR_STATUS_PANIC = 8,
} ParmorStatus;

/*
 Signal generator `(S, L, w(0))`.
 */
typedef struct ParmorGenerator ParmorGenerator;

/*
 Parametric reduced model.
 */
typedef struct ParmorRom ParmorRom;

/*
 Parametric linear system.
 */
typedef struct ParmorSystem ParmorSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *parmor_last_error(void);

/*
 Frees a string returned by this library.

 # Safety
 `s` must come from this library and not have been freed.
 */
void parmor_string_free(char *s);

/*
 Benchmark system with `k` blocks (`n = 2k`) on `p in [0.1, 1]`.

 # Safety
 `out` must be writable.
 */
enum ParmorStatus parmor_system_benchmark(size_t k, struct ParmorSystem **out);

/*
 Parses a system from its JSON form.

 # Safety
 `json` must be a NUL-terminated string and `out` writable.
 */
enum ParmorStatus parmor_system_from_json(const char *json, struct ParmorSystem **out);

/*
 State dimension, or 0 for a null handle.

 # Safety
 `sys` must be null or a live handle.
 */
size_t parmor_system_order(const struct ParmorSystem *sys);

/*
 # Safety
 `sys` must be null or a live handle, which is invalid afterwards.
 */
void parmor_system_free(struct ParmorSystem *sys);

/*
 `W(s, p) = C(p) (s I - A(p))^{-1} B(p)` at `s = re + i im`.

 # Safety
 `sys` must be a live handle, `out_re` and `out_im` writable.
 */
enum ParmorStatus parmor_system_transfer(const struct ParmorSystem *sys,
                                         double p,
                                         double re,
                                         double im,
                                         double *out_re,
                                         double *out_im);

/*
 Generator with one rotation block per frequency in `freqs` and an
 optional leading zero block.

 # Safety
 `freqs` must point to `count` doubles and `out` be writable.
 */
enum ParmorStatus parmor_generator_new(const double *freqs,
                                       size_t count,
                                       bool include_zero,
                                       struct ParmorGenerator **out);

/*
 Generator order `nu`, or 0 for a null handle.

 # Safety
 `gen` must be null or a live handle.
 */
size_t parmor_generator_nu(const struct ParmorGenerator *gen);

/*
 # Safety
 `gen` must be null or a live handle, which is invalid afterwards.
 */
void parmor_generator_free(struct ParmorGenerator *gen);

/*
 Solves `A X + F = X S` for `X` (n x nu). `a` is n x n, `s` nu x nu, `f`
 and `x_out` n x nu, all row-major.

 # Safety
 The arrays must have the stated sizes.
 */
enum ParmorStatus parmor_solve_sylvester(const double *a,
                                         size_t n,
                                         const double *s,
                                         size_t nu,
                                         const double *f,
                                         double *x_out);

/*
 Solves `A^T X + X A + Q = 0` for symmetric `X`; all arrays n x n row-major.

 # Safety
 The arrays must have the stated sizes.
 */
enum ParmorStatus parmor_solve_lyapunov(const double *a, size_t n, const double *q, double *x_out);

/*
 Exact moment row `C(p) Pi(p)` into `out[0..nu]`.

 # Safety
 Handles must be live and `out` hold `len` doubles.
 */
enum ParmorStatus parmor_exact_moment(const struct ParmorSystem *sys,
                                      const struct ParmorGenerator *gen,
                                      double p,
                                      double *out,
                                      size_t len);

/*
 Reduced model from an order-`order` series at `center`, with the
 stability-preserving gain built from the nested Lyapunov series (`Q = I`).

 # Safety
 Handles must be live and `out` writable.
 */
enum ParmorStatus parmor_rom_series(const struct ParmorSystem *sys,
                                    const struct ParmorGenerator *gen,
                                    double center,
                                    size_t order,
                                    struct ParmorRom **out);

/*
 Parses a reduced model from JSON.

 # Safety
 `json` must be NUL-terminated and `out` writable.
 */
enum ParmorStatus parmor_rom_from_json(const char *json, struct ParmorRom **out);

/*
 Serializes a reduced model; free the string with `parmor_string_free`.

 # Safety
 `rom` must be a live handle and `out` writable.
 */
enum ParmorStatus parmor_rom_to_json(const struct ParmorRom *rom, char **out);

/*
 Reduced order `nu`, or 0 for a null handle.

 # Safety
 `rom` must be null or a live handle.
 */
size_t parmor_rom_order(const struct ParmorRom *rom);

/*
 `W_r(s, p) = H(p) (s I - F(p))^{-1} G(p)`.

 # Safety
 `rom` must be a live handle, `out_re` and `out_im` writable.
 */
enum ParmorStatus parmor_rom_transfer(const struct ParmorRom *rom,
                                      double p,
                                      double re,
                                      double im,
                                      double *out_re,
                                      double *out_im);

/*
 Whether every eigenvalue of `F(p)` has real part below `-margin`.

 # Safety
 `rom` must be a live handle and `out` writable.
 */
enum ParmorStatus parmor_rom_is_stable(const struct ParmorRom *rom,
                                       double p,
                                       double margin,
                                       bool *out);

/*
 # Safety
 `rom` must be null or a live handle, which is invalid afterwards.
 */
void parmor_rom_free(struct ParmorRom *rom);

/*
 Relative H2 error between system and reduced model at `p`, by
 trapezoidal quadrature on `points` log-spaced frequencies in `[lo, hi]`.

 # Safety
 Handles must be live and `out` writable.
 */
enum ParmorStatus parmor_h2_relative_error(const struct ParmorSystem *sys,
                                           const struct ParmorRom *rom,
                                           double p,
                                           double lo,
                                           double hi,
                                           size_t points,
                                           double *out);

/*
 Runs an experiment configuration; the run directory path is returned in
 `run_dir` (free with `parmor_string_free`).

 # Safety
 Strings must be NUL-terminated and `run_dir` writable.
 */
enum ParmorStatus parmor_run_experiment(const char *config_path,
                                        const char *out_dir,
                                        bool force,
                                        char **run_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARMOR_H */
