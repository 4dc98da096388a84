#ifndef FEDBCD_H
#define FEDBCD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every call.
 */
typedef enum FedbcdStatus {
  FEDBCD_STATUS_OK = 0,
  FEDBCD_STATUS_NULL_POINTER = 1,
  FEDBCD_STATUS_INVALID_UTF8 = 2,
  FEDBCD_STATUS_INVALID_CONFIG = 3,
  FEDBCD_STATUS_INVALID_ARGUMENT = 4,
  FEDBCD_STATUS_BUFFER_TOO_SMALL = 5,
  FEDBCD_STATUS_RUNTIME = 6,
  FEDBCD_STATUS_PANIC = 7,
} FedbcdStatus;

/**
 * Opaque simulation handle.
 */
typedef struct FedbcdSimulation FedbcdSimulation;

/**
 * Diagnostics of one round. Accuracies are NaN when the task has no test
 * sets or is a regression.
 */
typedef struct FedbcdMetrics {
  uint64_t round;
  double sim_time;
  double stationarity_gap_mean;
  double z_grad_norm_sq;
  double consensus_max;
  double objective_value;
  double global_accuracy;
  double personalized_accuracy_mean;
} FedbcdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *fedbcd_last_error_message(void);

/**
 * Builds a simulation from a TOML configuration and a seed.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FedbcdStatus fedbcd_simulation_new(const char *config_toml,
                                        uint64_t seed,
                                        struct FedbcdSimulation **out);

/**
 * Releases a simulation. Null is ignored.
 *
 * # Safety
 * `sim` must come from [`fedbcd_simulation_new`] and not be used afterwards.
 */
void fedbcd_simulation_free(struct FedbcdSimulation *sim);

/**
 * Runs one round. `metrics` may be null.
 *
 * # Safety
 * `sim` must be a live handle; `metrics` null or writable.
 */
enum FedbcdStatus fedbcd_simulation_step(struct FedbcdSimulation *sim,
                                         struct FedbcdMetrics *metrics);

/**
 * Metrics of the current state without advancing.
 *
 * # Safety
 * `sim` must be a live handle and `metrics` writable.
 */
enum FedbcdStatus fedbcd_simulation_metrics(const struct FedbcdSimulation *sim,
                                            struct FedbcdMetrics *metrics);

/**
 * Completed rounds; 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
uint64_t fedbcd_simulation_round(const struct FedbcdSimulation *sim);

/**
 * Simulated seconds elapsed; NaN for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
double fedbcd_simulation_sim_time(const struct FedbcdSimulation *sim);

/**
 * Model dimension; 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
uintptr_t fedbcd_simulation_dim(const struct FedbcdSimulation *sim);

/**
 * Number of cloud servers; 0 for a null handle.
 *
 * # Safety
 * `sim` must be null or a live handle.
 */
uintptr_t fedbcd_simulation_num_servers(const struct FedbcdSimulation *sim);

/**
 * Copies the model of `server` into `buf`, which holds `len` doubles and
 * must fit [`fedbcd_simulation_dim`] of them.
 *
 * # Safety
 * `sim` must be a live handle and `buf` valid for `len` writes.
 */
enum FedbcdStatus fedbcd_simulation_server_model(const struct FedbcdSimulation *sim,
                                                 uintptr_t server,
                                                 double *buf,
                                                 uintptr_t len);

/**
 * Monte Carlo estimate of the latency ratio `E[tau_(b)] / E[tau_(n)]` for a
 * distribution spec such as `"exp:1"` or `"weibull:2:1"`. `std_error` may be
 * null.
 *
 * # Safety
 * `dist` must be a NUL-terminated string; `mean` writable; `std_error`
 * null or writable.
 */
enum FedbcdStatus fedbcd_latency_ratio(const char *dist,
                                       uintptr_t n,
                                       uintptr_t b,
                                       uintptr_t trials,
                                       uint64_t seed,
                                       double *mean,
                                       double *std_error);

/**
 * Quantile `F^-1(u)` of a distribution spec, for `u` in (0, 1).
 *
 * # Safety
 * `dist` must be a NUL-terminated string and `out` writable.
 */
enum FedbcdStatus fedbcd_quantile(const char *dist, double u, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDBCD_H */
