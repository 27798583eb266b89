#ifndef SCHATTEN_LAB_H
#define SCHATTEN_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum SlStatus {
  SL_STATUS_OK = 0,
  SL_STATUS_INVALID_ARGUMENT = 1,
  SL_STATUS_NULL_POINTER = 2,
  SL_STATUS_BUFFER_TOO_SMALL = 3,
  SL_STATUS_UNRESOLVABLE = 4,
  SL_STATUS_OUTSIDE_WINDOW = 5,
  SL_STATUS_INCOMPATIBLE_GRIDS = 6,
  SL_STATUS_NON_POSITIVE_WEIGHT = 7,
  SL_STATUS_NON_FINITE = 8,
  SL_STATUS_NUMERICAL = 9,
  SL_STATUS_CONFIG = 10,
  SL_STATUS_IO = 11,
  SL_STATUS_PANIC = 12,
} SlStatus;

typedef enum SlRieszMode {
  SL_RIESZ_MODE_PERIODIC = 0,
  SL_RIESZ_MODE_KERNEL = 1,
  SL_RIESZ_MODE_FILTERED = 2,
} SlRieszMode;

/*
 Real samples on a window.
 */
typedef struct SlFunction SlFunction;

/*
 Nonincreasing singular values.
 */
typedef struct SlSpectrum SlSpectrum;

/*
 Positive weight on a window.
 */
typedef struct SlWeight SlWeight;

/*
 Sample window of the unit cube.
 */
typedef struct SlWindow SlWindow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version, a static NUL-terminated string.
 */
const char *sl_version(void);

/*
 Message of the last failure on this thread, or null. Valid until the next failing call on this thread.
 */
const char *sl_last_error(void);

/*
 Window `[0,1)^dim` with `samples` points per side (a power of two).

 # Safety
 `out` must be valid for writes.
 */
enum SlStatus sl_window_new(uintptr_t dim, uintptr_t samples, struct SlWindow **out);

/*
 # Safety
 `w` must be null or a handle from [`sl_window_new`] not yet freed.
 */
void sl_window_free(struct SlWindow *w);

/*
 Number of samples and the coarsest and finest cube levels.

 # Safety
 `w` must be a live handle; the output pointers must be valid for writes.
 */
enum SlStatus sl_window_info(const struct SlWindow *w,
                             uintptr_t *len,
                             int32_t *k_min,
                             int32_t *k_max);

/*
 Function from `len` samples in row-major order, last axis fastest.

 # Safety
 `w` must be a live handle and `values` valid for `len` reads.
 */
enum SlStatus sl_function_from_values(const struct SlWindow *w,
                                      const double *values,
                                      uintptr_t len,
                                      struct SlFunction **out);

/*
 Samples a symbol given in the text form used by the CLI, e.g. `gaussian:0.1` or `sine:1,1`.

 # Safety
 `w` must be a live handle, `spec` a NUL-terminated string, `out` valid for writes.
 */
enum SlStatus sl_function_from_symbol(const struct SlWindow *w,
                                      const char *spec,
                                      struct SlFunction **out);

/*
 Copies the samples into `out`, which must hold at least the window length.

 # Safety
 `f` must be a live handle and `out` valid for `len` writes.
 */
enum SlStatus sl_function_values(const struct SlFunction *f, double *out, uintptr_t len);

/*
 # Safety
 `f` must be null or a live function handle.
 */
void sl_function_free(struct SlFunction *f);

/*
 Weight from its text form: `constant[:c]` or `power:alpha`.

 # Safety
 `w` must be a live handle, `spec` a NUL-terminated string, `out` valid for writes.
 */
enum SlStatus sl_weight_from_spec(const struct SlWindow *w,
                                  const char *spec,
                                  struct SlWeight **out);

/*
 # Safety
 `w` must be null or a live weight handle.
 */
void sl_weight_free(struct SlWeight *w);

/*
 A₂ constant over all shifted window cubes.

 # Safety
 `w` must be a live handle and `out` valid for writes.
 */
enum SlStatus sl_weight_a2(const struct SlWeight *w, double *out);

/*
 Continuous Besov functional over sample pairs.

 # Safety
 `f` must be a live handle and `out` valid for writes.
 */
enum SlStatus sl_besov_continuous(const struct SlFunction *f, double p, double *out);

/*
 Dyadic Besov functional on the standard system.

 # Safety
 `f` must be a live handle and `out` valid for writes.
 */
enum SlStatus sl_besov_dyadic(const struct SlFunction *f, double p, double *out);

/*
 `‖∇f‖_{L^p}` with centered differences.

 # Safety
 `f` must be a live handle and `out` valid for writes.
 */
enum SlStatus sl_sobolev_seminorm(const struct SlFunction *f, double p, double *out);

/*
 Singular values of `[b, R_j]` on `L²(w)`; `weight` may be null for the unweighted space.

 # Safety
 `b` must be a live handle, `weight` null or a live handle on the same window, `out` valid for writes.
 */
enum SlStatus sl_commutator_spectrum(const struct SlFunction *b,
                                     const struct SlWeight *weight,
                                     uintptr_t j,
                                     enum SlRieszMode mode,
                                     struct SlSpectrum **out);

/*
 # Safety
 `s` must be a live handle and `len` valid for writes.
 */
enum SlStatus sl_spectrum_len(const struct SlSpectrum *s, uintptr_t *len);

/*
 # Safety
 `s` must be a live handle and `out` valid for `len` writes.
 */
enum SlStatus sl_spectrum_values(const struct SlSpectrum *s, double *out, uintptr_t len);

/*
 Schatten-Lorentz functional; pass `q = INFINITY` for the weak class.

 # Safety
 `s` must be a live handle and `out` valid for writes.
 */
enum SlStatus sl_spectrum_schatten(const struct SlSpectrum *s, double p, double q, double *out);

/*
 # Safety
 `s` must be null or a live spectrum handle.
 */
void sl_spectrum_free(struct SlSpectrum *s);

/*
 Runs every section of a config given as text. `report_json` receives a JSON
 array with one report per section, to be released with [`sl_string_free`];
 `passed` is 1 when every check holds.

 # Safety
 `config` must be a NUL-terminated string; the output pointers must be valid for writes.
 */
enum SlStatus sl_verify(const char *config, char **report_json_out, int *passed);

/*
 Releases a string returned by this library.

 # Safety
 `s` must be null or a string from this library not yet freed.
 */
void sl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCHATTEN_LAB_H */
