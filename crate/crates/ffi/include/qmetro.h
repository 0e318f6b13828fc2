#ifndef QMETRO_H
#define QMETRO_H

#include <stddef.h>

typedef enum QmLossMode {
  QM_LOSS_MODE_BOTH_ARMS = 0,
  QM_LOSS_MODE_PHASE_ARM_ONLY = 1,
} QmLossMode;

typedef enum QmStatus {
  QM_STATUS_OK = 0,
  QM_STATUS_NULL_POINTER = 1,
  QM_STATUS_INVALID_ARGUMENT = 2,
  QM_STATUS_PARSE = 3,
  QM_STATUS_TRUNCATION = 4,
  QM_STATUS_NOT_CONVERGED = 5,
  QM_STATUS_ZERO_INFORMATION = 6,
  QM_STATUS_UNSUPPORTED = 7,
  QM_STATUS_INDEX_OUT_OF_RANGE = 8,
  QM_STATUS_PANIC = 9,
  QM_STATUS_OTHER = 10,
} QmStatus;

/**
 * A precision curve over a transmissivity grid.
 */
typedef struct QmCurve QmCurve;

/**
 * A parsed state descriptor.
 */
typedef struct QmState QmState;

/**
 * One curve point. `a_opt` is NaN when the curve has no unbalancing parameter.
 */
typedef struct QmPoint {
  double eta;
  double delta_phi;
  double m;
  double n_phi;
  double a_opt;
} QmPoint;

typedef struct QmUcsOptimum {
  double a;
  double delta_phi;
  double f_q;
} QmUcsOptimum;

typedef struct QmChopOptimum {
  double n_phi;
  double a;
  double delta_phi;
} QmChopOptimum;

typedef struct QmMeasurement {
  double phi;
  double a;
  double f_c;
  double m;
  double delta_phi;
} QmMeasurement;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *qm_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next `qm_` call on the same thread.
 */
const char *qm_last_error(void);

/**
 * Parses a state such as `cat:alpha=3` or `ucs:a=0.7,nphi=4.45`.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum QmStatus qm_state_parse(const char *text, struct QmState **out);

/**
 * # Safety
 * `state` must come from [`qm_state_parse`] and not be freed twice. Null is ignored.
 */
void qm_state_free(struct QmState *state);

/**
 * Writes the canonical text of `state` into `buf` (always NUL-terminated when
 * `len > 0`) and the full length without the NUL into `needed`.
 *
 * # Safety
 * `buf` must hold `len` bytes or be null with `len == 0`.
 */
enum QmStatus qm_state_describe(const struct QmState *state, char *buf, size_t len, size_t *needed);

/**
 * Mean photon number through the phase shift.
 *
 * # Safety
 * Pointers must be valid.
 */
enum QmStatus qm_state_mean_photons(const struct QmState *state, double *out);

/**
 * Quantum Fisher information after loss of transmissivity `eta`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum QmStatus qm_lossy_qfi(const struct QmState *state,
                           double eta,
                           enum QmLossMode loss,
                           double *out);

/**
 * `1 / sqrt(m f_q)`; zero information reports `QM_STATUS_ZERO_INFORMATION`.
 *
 * # Safety
 * `out` must be writable.
 */
enum QmStatus qm_crb(double f_q, double m, double *out);

/**
 * Cramér-Rao curve of `state` on `count` uniform points in `[eta_min, eta_max]`.
 *
 * # Safety
 * Pointers must be valid; free the result with [`qm_curve_free`].
 */
enum QmStatus qm_crb_curve(const struct QmState *state,
                           double eta_min,
                           double eta_max,
                           size_t count,
                           double r_phi,
                           enum QmLossMode loss,
                           struct QmCurve **out);

/**
 * # Safety
 * `curve` must be valid or null (null gives 0).
 */
size_t qm_curve_len(const struct QmCurve *curve);

/**
 * # Safety
 * Pointers must be valid.
 */
enum QmStatus qm_curve_point(const struct QmCurve *curve, size_t index, struct QmPoint *out);

/**
 * # Safety
 * `curve` must come from this library and not be freed twice. Null is ignored.
 */
void qm_curve_free(struct QmCurve *curve);

/**
 * Best unbalancing `a` for a UCS of `n_phi` photons.
 *
 * # Safety
 * `out` must be writable.
 */
enum QmStatus qm_optimize_ucs_a(double n_phi, double eta, double r_phi, struct QmUcsOptimum *out);

/**
 * Best UCS size and unbalancing with the size capped by a balanced cat of `alpha_bal_max`.
 *
 * # Safety
 * `out` must be writable.
 */
enum QmStatus qm_chop_optimize(double eta,
                               double r_phi,
                               double alpha_bal_max,
                               struct QmChopOptimum *out);

/**
 * Best readout phase and implied precision for displacement `beta` and photon counting.
 *
 * # Safety
 * Pointers must be valid.
 */
enum QmStatus qm_measurement_optimum(const struct QmState *state,
                                     double eta,
                                     double beta,
                                     double r_phi,
                                     struct QmMeasurement *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QMETRO_H */
