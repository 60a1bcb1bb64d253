/* C interface for pobounds: high-probability lower/upper bounds on
 * potential outcomes, fitted by the accompanying Rust library and CLI.
 *
 * Usage pattern:
 *   pobounds_model* m = NULL;
 *   if (pobounds_model_load("model.json", &m) != POBOUNDS_OK) {
 *       char buf[256];
 *       pobounds_last_error(buf, sizeof buf);
 *       ...
 *   }
 *   double lo[N], hi[N];
 *   pobounds_predict(m, features, N, n_features, 1, lo, hi);
 *   pobounds_model_free(m);
 *
 * This header is maintained by hand and mirrors crates/capi/src/lib.rs.
 */

#ifndef POBOUNDS_H
#define POBOUNDS_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Error codes returned by every fallible function. */
enum {
    POBOUNDS_OK = 0,
    POBOUNDS_ERR_NULL_POINTER = 1,
    POBOUNDS_ERR_INVALID_UTF8 = 2,
    POBOUNDS_ERR_PARSE = 3,
    POBOUNDS_ERR_IO = 4,
    POBOUNDS_ERR_PREDICT = 5,
    POBOUNDS_ERR_INVALID_ARGUMENT = 6,
    POBOUNDS_ERR_PANIC = 7
};

/* Opaque model handle. */
typedef struct PoboundsModel pobounds_model;

/* Library version as a static NUL-terminated string. */
const char *pobounds_version(void);

/* Copy the most recent error message on this thread into `buffer`
 * (NUL-terminated, truncated to `length` bytes). Returns the full message
 * length in bytes. `buffer` may be NULL to query the length. */
size_t pobounds_last_error(char *buffer, size_t length);

/* Load a model from a JSON artifact written by the CLI `fit` command
 * (bare serialized bound models are accepted too). On success, writes a
 * handle to `*out`; the caller owns it and must free it. */
int pobounds_model_load(const char *path, pobounds_model **out);

/* Same, from an in-memory JSON string. */
int pobounds_model_from_json(const char *json, pobounds_model **out);

/* Number of covariates per query point, or -1 on a NULL handle. */
int pobounds_model_num_features(const pobounds_model *model);

/* Lower/upper bound predictions for `n_rows` query points, row-major, on
 * the raw covariate scale (the model's training standardization is applied
 * internally). `arm` is the treatment arm (0 or 1). `lower` and `upper`
 * must each have room for `n_rows` doubles. */
int pobounds_predict(const pobounds_model *model,
                     const double *features,
                     size_t n_rows,
                     size_t n_features,
                     int arm,
                     double *lower,
                     double *upper);

/* Release a model handle. NULL is a no-op. */
void pobounds_model_free(pobounds_model *model);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* POBOUNDS_H */
