/* C ABI for the velflow library: diffeomorphic normalizing flows.
 *
 * Generated with cbindgen from crates/velflow-ffi (see cbindgen.toml);
 * checked in so bindings work without a Rust toolchain on the consumer side.
 *
 * Conventions:
 *   - every fallible function returns a VfStatus; outputs go through
 *     pointers;
 *   - VfModel handles are owned by the caller and released with
 *     vf_model_free;
 *   - vf_last_error copies a UTF-8 description of the most recent failure
 *     on the calling thread.
 */

#ifndef VELFLOW_H
#define VELFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 * Status codes mirroring the library's error taxonomy.
 */
typedef enum VfStatus {
  VF_STATUS_OK = 0,
  VF_STATUS_NULL_POINTER = 1,
  VF_STATUS_INVALID_ARGUMENT = 2,
  VF_STATUS_NUMERIC = 3,
  VF_STATUS_IO = 4,
} VfStatus;

/*
 * Opaque handle: a loaded model document (flow plus base distribution).
 */
typedef struct VfModel VfModel;

#ifdef __cplusplus
extern "C" {
#endif

/*
 * Copy the last error message on this thread into `buf` (NUL-terminated,
 * truncated to `len` bytes). Returns the full message length.
 */
size_t vf_last_error(char *buf, size_t len);

/*
 * Load a model document written by `velflow fit` or vf_model_save.
 */
VfStatus vf_model_load(const char *path, VfModel **out);

/*
 * Write the model document to `path`.
 */
VfStatus vf_model_save(const VfModel *model, const char *path);

/*
 * Release a model handle. Null is a no-op.
 */
void vf_model_free(VfModel *model);

/*
 * Latent dimension of the flow (0 for a null handle).
 */
size_t vf_model_dim(const VfModel *model);

/*
 * Context dimension (0 for unconditioned flows or a null handle).
 */
size_t vf_model_context_dim(const VfModel *model);

/*
 * Forward map: writes phi(z) to `out_z` (length `dim`) and the accumulated
 * log-determinant to `out_logdet` (may be null).
 */
VfStatus vf_forward(const VfModel *model,
                    const double *z,
                    size_t dim,
                    const double *context,
                    size_t context_dim,
                    double *out_z,
                    double *out_logdet);

/*
 * Inverse map: writes phi^-1(z) and the backward-pass log-determinant.
 */
VfStatus vf_inverse(const VfModel *model,
                    const double *z,
                    size_t dim,
                    const double *context,
                    size_t context_dim,
                    double *out_z,
                    double *out_logdet);

/*
 * Log-density of the pushforward distribution at `z`.
 */
VfStatus vf_log_density(const VfModel *model,
                        const double *z,
                        size_t dim,
                        const double *context,
                        size_t context_dim,
                        double *out);

/*
 * Draw `count` pushforward samples into `out` (row-major `count x dim`),
 * deterministically per seed. Context-conditioned models are not supported
 * through this entry point.
 */
VfStatus vf_sample(const VfModel *model,
                   size_t count,
                   uint64_t seed,
                   double *out);

#ifdef __cplusplus
}  /* extern "C" */
#endif

#endif  /* VELFLOW_H */
