#ifndef PEANOSPHERE_H
#define PEANOSPHERE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes.
 */
typedef enum PmcStatus {
  PMC_STATUS_OK = 0,
  PMC_STATUS_NULL_POINTER = 1,
  PMC_STATUS_INVALID_PARAMETER = 2,
  PMC_STATUS_NUMERICAL = 3,
  PMC_STATUS_PANIC = 4,
  PMC_STATUS_CONFIG = 5,
  PMC_STATUS_IO = 6,
} PmcStatus;

/**
 * Sampler of the boundary field covariance.
 */
typedef enum PmcSampler {
  PMC_SAMPLER_RADIAL_LATERAL = 0,
  PMC_SAMPLER_DENSE = 1,
} PmcSampler;

/**
 * Verdict of an experiment report.
 */
typedef enum PmcVerdict {
  PMC_VERDICT_PASS = 0,
  PMC_VERDICT_FAIL = 1,
  PMC_VERDICT_INCONCLUSIVE = 2,
} PmcVerdict;

/**
 * Opaque boundary-field model.
 */
typedef struct PmcFieldModel PmcFieldModel;

/**
 * Opaque experiment outcome.
 */
typedef struct PmcReport PmcReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *pmc_last_error_message(void);

/**
 * Library version, a static string.
 */
const char *pmc_version(void);

/**
 * `c = −cos(4π/κ′)` for `κ′ > 4`.
 */
enum PmcStatus pmc_correlation_from_kappa(double kappa, double *out_c);

/**
 * Cone exponent `π / arccos(c)`.
 */
enum PmcStatus pmc_sigma_from_correlation(double c, double *out_sigma);

/**
 * Closed form of the hitting-time Laplace transform.
 */
enum PmcStatus pmc_laplace_theory(double a,
                                  double gamma,
                                  double lambda,
                                  double delta,
                                  double *out_value);

/**
 * Cone probability of an uncorrelated pair, `(2Φ(δ/√t) − 1)²`.
 */
enum PmcStatus pmc_independent_cone_prob(double delta, double t, double *out_p);

/**
 * Builds a field model on the geometric grid `r q^k` with `n_side` cells
 * per side.
 */
enum PmcStatus pmc_field_model_new(double r,
                                   double q,
                                   size_t n_side,
                                   enum PmcSampler sampler,
                                   struct PmcFieldModel **out_model);

/**
 * Number of field values per sample (both sides).
 */
enum PmcStatus pmc_field_model_dim(const struct PmcFieldModel *model, size_t *out_dim);

/**
 * Draws field sample `index` of stream `seed` into `buf[0..len]`; `len`
 * must equal the model dimension.
 */
enum PmcStatus pmc_field_model_sample(const struct PmcFieldModel *model,
                                      uint64_t seed,
                                      uint64_t index,
                                      double *buf,
                                      size_t len);

void pmc_field_model_free(struct PmcFieldModel *model);

/**
 * Runs experiment `name` (a CLI subcommand name) from TOML text, which may
 * be empty for the defaults.
 */
enum PmcStatus pmc_run_experiment(const char *name,
                                  const char *config_toml,
                                  struct PmcReport **out_report);

enum PmcStatus pmc_report_verdict(const struct PmcReport *report, enum PmcVerdict *out_verdict);

/**
 * JSON report text, owned by the handle.
 */
enum PmcStatus pmc_report_json(const struct PmcReport *report, const char **out_json);

/**
 * Writes CSV tables, report and manifest into `dir`.
 */
enum PmcStatus pmc_report_write(const struct PmcReport *report, const char *dir);

void pmc_report_free(struct PmcReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEANOSPHERE_H */
