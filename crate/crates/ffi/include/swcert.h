#ifndef SWCERT_H
#define SWCERT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum SwcertStatus {
  SWCERT_STATUS_OK = 0,
  SWCERT_STATUS_NULL_POINTER = 1,
  SWCERT_STATUS_INVALID_ARGUMENT = 2,
  SWCERT_STATUS_CONFIG = 3,
  SWCERT_STATUS_SAMPLING = 4,
  SWCERT_STATUS_SOLVER = 5,
  SWCERT_STATUS_CERTIFY = 6,
  SWCERT_STATUS_PANIC = 7,
} SwcertStatus;

typedef enum SwcertMode {
  SWCERT_MODE_HYBRID = 0,
  SWCERT_MODE_CONTINUOUS = 1,
} SwcertMode;

/*
 Opaque result of one sampled certification.
 */
typedef struct SwcertReport SwcertReport;

/*
 Opaque switching system.
 */
typedef struct SwcertSystem SwcertSystem;

/*
 Scalar summary of a report.
 */
typedef struct SwcertBounds {
  double lambda_star;
  double c_star;
  double epsilon;
  /*
   `INFINITY` when vacuous.
   */
  double rho_primary;
  double rho_alternative;
  double rho_final;
  bool vacuous;
  bool certifies_stability;
} SwcertBounds;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Description of the last failure on this thread, or null. The string
 stays valid until the next failing call on the same thread.
 */
const char *swcert_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *swcert_version(void);

/*
 The built-in networked control example.

 # Safety
 `out` must be valid for one pointer write.
 */
enum SwcertStatus swcert_system_ncs(struct SwcertSystem **out);

/*
 Parses a JSON system description.

 # Safety
 `json` must be a NUL-terminated string and `out` valid for one pointer
 write.
 */
enum SwcertStatus swcert_system_from_json(const char *json, struct SwcertSystem **out);

/*
 Reads a JSON system description from a file.

 # Safety
 `path` must be a NUL-terminated string and `out` valid for one pointer
 write.
 */
enum SwcertStatus swcert_system_load(const char *path, struct SwcertSystem **out);

/*
 # Safety
 `sys` must be null or a pointer obtained from this library that has
 not been freed.
 */
void swcert_system_free(struct SwcertSystem *sys);

/*
 State dimension, or 0 for a null handle.

 # Safety
 `sys` must be null or a live handle.
 */
uintptr_t swcert_system_dimension(const struct SwcertSystem *sys);

/*
 Number of graph nodes, or 0 for a null handle.

 # Safety
 `sys` must be null or a live handle.
 */
uintptr_t swcert_system_node_count(const struct SwcertSystem *sys);

/*
 Number of labels (matrices), or 0 for a null handle.

 # Safety
 `sys` must be null or a live handle.
 */
uintptr_t swcert_system_label_count(const struct SwcertSystem *sys);

/*
 Draws `samples` observations of horizon `horizon`, solves the sampled
 program and bounds the rate with confidence `1 - beta`. `mode` is a
 [`SwcertMode`] value.

 # Safety
 `sys` must be a live handle and `out` valid for one pointer write.
 */
enum SwcertStatus swcert_certify(const struct SwcertSystem *sys,
                                 uint32_t mode,
                                 uintptr_t horizon,
                                 uintptr_t samples,
                                 double noise_radius,
                                 double beta,
                                 uint64_t seed,
                                 struct SwcertReport **out);

/*
 # Safety
 `report` must be null or a pointer obtained from this library that has
 not been freed.
 */
void swcert_report_free(struct SwcertReport *report);

/*
 Copies the scalar results of `report` into `out`.

 # Safety
 `report` must be a live handle and `out` valid for one write.
 */
enum SwcertStatus swcert_report_bounds(const struct SwcertReport *report, struct SwcertBounds *out);

/*
 Number of Lyapunov matrices in `report` (graph nodes in hybrid mode, one
 in continuous mode), or 0 for a null handle.

 # Safety
 `report` must be null or a live handle.
 */
uintptr_t swcert_report_matrix_count(const struct SwcertReport *report);

/*
 Writes Lyapunov matrix `index` row-major into `buffer`, which must hold
 at least `n * n` values.

 # Safety
 `report` must be a live handle and `buffer` valid for `len` writes.
 */
enum SwcertStatus swcert_report_matrix(const struct SwcertReport *report,
                                       uintptr_t index,
                                       double *buffer,
                                       uintptr_t len);

/*
 Largest `ρ(A_w)^{1/|w|}` over closed walks of length at most `max_len`.

 # Safety
 `sys` must be a live handle and `out` valid for one write.
 */
enum SwcertStatus swcert_cycle_lower(const struct SwcertSystem *sys,
                                     uintptr_t max_len,
                                     double *out);

/*
 Model-based quadratic upper bound on the `horizon`-lift, per step.

 # Safety
 `sys` must be a live handle and `out` valid for one write.
 */
enum SwcertStatus swcert_whitebox_upper(const struct SwcertSystem *sys,
                                        uintptr_t horizon,
                                        double gamma_tol,
                                        double *out);

/*
 Violation level `ε(β, N)` for a program with `dimension` decision
 variables.

 # Safety
 `out` must be valid for one write.
 */
enum SwcertStatus swcert_epsilon(double beta, uintptr_t samples, uintptr_t dimension, double *out);

/*
 Angle factor `δ(x)` in dimension `n`; `InvalidArgument` when the bound
 is vacuous at `x`.

 # Safety
 `out` must be valid for one write.
 */
enum SwcertStatus swcert_delta(double x, uintptr_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWCERT_H */
