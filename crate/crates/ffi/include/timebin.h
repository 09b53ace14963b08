#ifndef TIMEBIN_H
#define TIMEBIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of coincidence measurements in a tomography set.
 */
#define TB_N_PROJECTORS 16

typedef enum TbStatus {
  TB_STATUS_OK = 0,
  TB_STATUS_NULL_POINTER = 1,
  /**
   * bad name, index, JSON or parameter value
   */
  TB_STATUS_INVALID_ARGUMENT = 2,
  /**
   * malformed or degenerate input data
   */
  TB_STATUS_INVALID_DATA = 3,
  /**
   * solver, reconstruction or fit failure
   */
  TB_STATUS_NUMERIC = 4,
  TB_STATUS_BUFFER_TOO_SMALL = 5,
  TB_STATUS_PANIC = 6,
} TbStatus;

/**
 * Square complex matrix, usually a two-photon density matrix.
 */
typedef struct TbDensity TbDensity;

/**
 * Model parameters.
 */
typedef struct TbParams TbParams;

/**
 * Fidelity and normalized-counts maps over (Ω₀, τ).
 */
typedef struct TbSweep TbSweep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread.
 *
 * Writes a NUL-terminated copy into `buf`; `*needed` (if non-null) gets the
 * size including the terminator. An empty string means no error yet.
 */
enum TbStatus tb_last_error(char *buf, size_t len, size_t *needed);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tb_version(void);

/**
 * Default operating point. Never null.
 */
struct TbParams *tb_params_default(void);

/**
 * Parses a parameter object; missing fields take their defaults.
 */
enum TbStatus tb_params_from_json(const char *json, struct TbParams **params);

enum TbStatus tb_params_to_json(const struct TbParams *params,
                                char *buf,
                                size_t len,
                                size_t *needed);

/**
 * Sets a field by its JSON name, e.g. `"omega0"`. The value is validated.
 */
enum TbStatus tb_params_set(struct TbParams *params, const char *name, double value);

enum TbStatus tb_params_get(const struct TbParams *params, const char *name, double *value);

void tb_params_free(struct TbParams *params);

/**
 * Peak Rabi frequency (THz) for an average excitation power.
 */
enum TbStatus tb_power_to_omega0(const struct TbParams *params, double power, double *omega0);

/**
 * Evolves the dot from the ground state and fills the sixteen coincidence
 * counts (`counts` must hold [`TB_N_PROJECTORS`] values) and the emission
 * probabilities. `p_x` and `p_b` may be null.
 */
enum TbStatus tb_simulate(const struct TbParams *params, double *counts, double *p_x, double *p_b);

/**
 * Linear-inversion estimate from sixteen counts. The result may have
 * negative eigenvalues; see [`tb_density_project`].
 */
enum TbStatus tb_reconstruct(const double *counts, size_t len, struct TbDensity **density);

/**
 * Builds a `dim`×`dim` matrix from row-major real and imaginary parts.
 * `imag` may be null for a real matrix.
 */
enum TbStatus tb_density_from_parts(size_t dim,
                                    const double *real,
                                    const double *imag,
                                    struct TbDensity **density);

enum TbStatus tb_density_dim(const struct TbDensity *density, size_t *dim);

enum TbStatus tb_density_get(const struct TbDensity *density,
                             size_t row,
                             size_t col,
                             double *re,
                             double *im);

/**
 * Smallest eigenvalue; negative for an unphysical estimate.
 */
enum TbStatus tb_density_min_eigenvalue(const struct TbDensity *density, double *value);

/**
 * Nearest unit-trace positive semidefinite matrix, as a new handle.
 */
enum TbStatus tb_density_project(const struct TbDensity *density, struct TbDensity **projected);

/**
 * Overlap with (|ee⟩ + e^{iφ}|ll⟩)/√2, returned as √⟨Φ|ρ|Φ⟩.
 */
enum TbStatus tb_fidelity_bell(const struct TbDensity *density, double phase, double *fidelity);

/**
 * Uhlmann fidelity tr√(√a b √a).
 */
enum TbStatus tb_fidelity_mixed(const struct TbDensity *a,
                                const struct TbDensity *b,
                                double *fidelity);

void tb_density_free(struct TbDensity *density);

/**
 * Fits `A·exp(-γt) + C` to a lifetime trace (t in ps).
 */
enum TbStatus tb_fit_decay(const double *t,
                           const double *counts,
                           size_t len,
                           double *rate,
                           double *amplitude,
                           double *offset);

/**
 * Runs the pipeline on an evenly spaced grid. Cells that fail hold NaN.
 */
enum TbStatus tb_sweep(const struct TbParams *params,
                       double omega0_min,
                       double omega0_max,
                       size_t n_omega0,
                       double tau_min,
                       double tau_max,
                       size_t n_tau,
                       struct TbSweep **sweep);

enum TbStatus tb_sweep_shape(const struct TbSweep *sweep, size_t *n_omega0, size_t *n_tau);

/**
 * Bell fidelity and normalized counts of cell (i, j); i indexes Ω₀.
 * Either output may be null.
 */
enum TbStatus tb_sweep_cell(const struct TbSweep *sweep,
                            size_t i,
                            size_t j,
                            double *fidelity,
                            double *counts_norm);

void tb_sweep_free(struct TbSweep *sweep);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TIMEBIN_H */
