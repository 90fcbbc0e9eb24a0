#ifndef IGEO_H
#define IGEO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IgeoStatus {
  IGEO_STATUS_OK = 0,
  IGEO_STATUS_NULL_POINTER = 1,
  IGEO_STATUS_INVALID_ARGUMENT = 2,
  IGEO_STATUS_UNKNOWN_FAMILY = 3,
  IGEO_STATUS_DOMAIN = 4,
  IGEO_STATUS_INVALID_ORDER = 5,
  IGEO_STATUS_NUMERICAL = 6,
  IGEO_STATUS_STRUCTURE = 7,
  IGEO_STATUS_CONFIG = 8,
  IGEO_STATUS_PANIC = 9,
} IgeoStatus;

typedef enum IgeoDivergence {
  IGEO_DIVERGENCE_KL = 0,
  IGEO_DIVERGENCE_ALPHA = 1,
  IGEO_DIVERGENCE_RENYI = 2,
  IGEO_DIVERGENCE_BHATTACHARYYA = 3,
} IgeoDivergence;

typedef enum IgeoLabel {
  IGEO_LABEL_FISHER = 0,
  IGEO_LABEL_E = 1,
  IGEO_LABEL_M = 2,
  IGEO_LABEL_LC = 3,
  IGEO_LABEL_ALPHA = 4,
  IGEO_LABEL_ALPHA_DUAL = 5,
  IGEO_LABEL_RHO = 6,
  IGEO_LABEL_RHO_DUAL = 7,
  IGEO_LABEL_BHATTACHARYYA = 8,
} IgeoLabel;

// Opaque handle to a parametric family.
typedef struct IgeoFamily IgeoFamily;

// Scalar field callback: `theta` has `n` entries.
typedef double (*IgeoScalarFn)(const double *theta, size_t n, void *user);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string.
// Valid until the next call into the library on the same thread.
const char *igeo_last_error(void);

// Library version as a static NUL-terminated string.
const char *igeo_version(void);

// Creates a built-in family such as `"bernoulli-mean"` or `"categorical-3"`.
// `IGEO_QUAD_ORDER` is honoured.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum IgeoStatus igeo_family_builtin(const char *name, struct IgeoFamily **out);

// Creates a family from a JSON definition (see `schemas/family-v1.json`).
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum IgeoStatus igeo_family_from_json(const char *json, struct IgeoFamily **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `family` must come from a constructor and not have been freed.
void igeo_family_free(struct IgeoFamily *family);

// Parameter dimension, or 0 for a null handle.
//
// # Safety
// `family` must be null or a live handle.
size_t igeo_family_dim(const struct IgeoFamily *family);

// `D[θ : θ′]`. `order` is α or ρ and ignored for KL and Bhattacharyya.
//
// # Safety
// `theta` and `theta_prime` must hold `n` values; `out` must be valid.
enum IgeoStatus igeo_divergence(const struct IgeoFamily *family,
                                enum IgeoDivergence kind,
                                double order,
                                const double *theta,
                                const double *theta_prime,
                                size_t n,
                                double *out);

// Fisher metric into `out[n·n]`.
//
// # Safety
// `theta` must hold `n` values and `out` `n·n`.
enum IgeoStatus igeo_fisher(const struct IgeoFamily *family,
                            const double *theta,
                            size_t n,
                            double *out);

// Analytic metric, first-kind connection and its dual for a geometry
// label. Any of the outputs may be null to skip it.
//
// # Safety
// `theta` must hold `n` values; non-null outputs must hold `n·n` and `n·n·n`.
enum IgeoStatus igeo_geometry(const struct IgeoFamily *family,
                              enum IgeoLabel kind,
                              double order,
                              const double *theta,
                              size_t n,
                              double *metric,
                              double *gamma,
                              double *gamma_dual);

// Metric and connections induced by a divergence through its mixed
// partial derivatives on the diagonal. Outputs as in [`igeo_geometry`].
//
// # Safety
// As for [`igeo_geometry`].
enum IgeoStatus igeo_induced_geometry(const struct IgeoFamily *family,
                                      enum IgeoDivergence kind,
                                      double order,
                                      const double *theta,
                                      size_t n,
                                      double *metric,
                                      double *gamma,
                                      double *gamma_dual);

// Log-derivative of Hartigan's prior with parameter `alpha_h`, into `out[n]`.
//
// # Safety
// `theta` and `out` must hold `n` values.
enum IgeoStatus igeo_hartigan(const struct IgeoFamily *family,
                              double alpha_h,
                              const double *theta,
                              size_t n,
                              double *out);

// Log of the covolume prior of a geometry label at `theta`, relative to
// its value at the family anchor.
//
// # Safety
// `theta` must hold `n` values and `out` must be valid.
enum IgeoStatus igeo_log_prior(const struct IgeoFamily *family,
                               enum IgeoLabel kind,
                               double order,
                               const double *theta,
                               size_t n,
                               double *out);

// Laplacian `div ∘ grad` of a callback field under a geometry label.
// Derivatives of the field are taken by finite differences, and the
// callback is only invoked on the calling thread.
//
// # Safety
// `field` must be safe to call with `user` for the duration of the call.
enum IgeoStatus igeo_laplacian(const struct IgeoFamily *family,
                               enum IgeoLabel kind,
                               double order,
                               IgeoScalarFn field,
                               void *user,
                               const double *theta,
                               size_t n,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IGEO_H */
