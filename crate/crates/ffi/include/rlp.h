#ifndef RLP_H
#define RLP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RlpArchitecture {
  // d → width → 1 with ReLU.
  RLP_ARCHITECTURE_REGRESSION = 0,
  // d → width → d with ReLU then sigmoid.
  RLP_ARCHITECTURE_AUTOENCODER = 1,
  // 2 → 2 two-class classifier.
  RLP_ARCHITECTURE_MOONS_CLASSIFIER = 2,
} RlpArchitecture;

typedef enum RlpStatus {
  RLP_STATUS_OK = 0,
  RLP_STATUS_NULL_POINTER = 1,
  RLP_STATUS_INVALID_ARGUMENT = 2,
  RLP_STATUS_SHAPE_MISMATCH = 3,
  RLP_STATUS_DATA_ERROR = 4,
  RLP_STATUS_NUMERIC_FAILURE = 5,
  RLP_STATUS_EXHAUSTED = 6,
  RLP_STATUS_IO_ERROR = 7,
  RLP_STATUS_CONFIG_ERROR = 8,
  RLP_STATUS_PANIC = 9,
} RlpStatus;

typedef struct RlpBatchSet RlpBatchSet;

typedef struct RlpMatrix RlpMatrix;

typedef struct RlpModel RlpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null after a success.
// The pointer stays valid until the next call into this library.
const char *rlp_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *rlp_version(void);

// Copies `rows * cols` values from `data` into a new matrix.
//
// # Safety
// `data` must point to `rows * cols` readable doubles; `out` must be writable.
enum RlpStatus rlp_matrix_new(size_t rows, size_t cols, const double *data, struct RlpMatrix **out);

// # Safety
// `m` must be null or a handle from this library not yet freed.
void rlp_matrix_free(struct RlpMatrix *m);

// # Safety
// `m` must be a live matrix handle; `rows` and `cols` must be writable.
enum RlpStatus rlp_matrix_shape(const struct RlpMatrix *m, size_t *rows, size_t *cols);

// Copies the row-major contents into `buf`, which holds `len` doubles.
//
// # Safety
// `m` must be a live matrix handle; `buf` must have room for `len` doubles.
enum RlpStatus rlp_matrix_copy(const struct RlpMatrix *m, double *buf, size_t len);

// Minimum-norm least-squares solution of `x · s ≈ b`; `rank` may be null.
//
// # Safety
// `x` and `b` must be live matrix handles; `out` must be writable.
enum RlpStatus rlp_least_squares(const struct RlpMatrix *x,
                                 const struct RlpMatrix *b,
                                 double rtol,
                                 struct RlpMatrix **out,
                                 size_t *rank);

// Hyperplane loss of one batch: `xb` is M×d, `yb` and `hb` are M×c and
// `probe` holds d values. The loss goes to `value`; when `grad` is not
// null it receives a new M×c matrix with the derivative in `hb`.
//
// # Safety
// Handles must be live, `probe` must hold `probe_len` doubles and `value`
// must be writable.
enum RlpStatus rlp_loss_batch(const struct RlpMatrix *xb,
                              const struct RlpMatrix *yb,
                              const struct RlpMatrix *hb,
                              const double *probe,
                              size_t probe_len,
                              double *value,
                              struct RlpMatrix **grad);

// Mean over rows of the squared error summed across outputs.
//
// # Safety
// Handles must be live and `value` writable.
enum RlpStatus rlp_loss_mse(const struct RlpMatrix *h, const struct RlpMatrix *y, double *value);

// Builds a freshly initialized network. `width` is the hidden or latent
// size; `sigmoid_head` only affects the classifier.
//
// # Safety
// `out` must be writable.
enum RlpStatus rlp_model_build(enum RlpArchitecture architecture,
                               size_t input_dim,
                               size_t width,
                               bool sigmoid_head,
                               uint64_t seed,
                               struct RlpModel **out);

// # Safety
// `m` must be null or a handle from this library not yet freed.
void rlp_model_free(struct RlpModel *m);

// # Safety
// `m` must be a live model handle; the outputs must be writable.
enum RlpStatus rlp_model_info(const struct RlpModel *m,
                              size_t *input_dim,
                              size_t *output_dim,
                              size_t *param_count);

// Network outputs for the rows of `x`.
//
// # Safety
// Handles must be live and `out` writable.
enum RlpStatus rlp_model_forward(const struct RlpModel *m,
                                 const struct RlpMatrix *x,
                                 struct RlpMatrix **out);

// # Safety
// `m` must be a live model handle and `path` a NUL-terminated string.
enum RlpStatus rlp_model_save(const struct RlpModel *m, const char *path);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum RlpStatus rlp_model_load(const char *path, struct RlpModel **out);

// `k` distinct batches of `m` indices from `0..n`.
//
// # Safety
// `out` must be writable.
enum RlpStatus rlp_batches_generate(size_t n,
                                    size_t m,
                                    size_t k,
                                    uint64_t seed,
                                    struct RlpBatchSet **out);

// # Safety
// `b` must be null or a handle from this library not yet freed.
void rlp_batches_free(struct RlpBatchSet *b);

// # Safety
// `b` must be a live handle; `count` and `batch_size` must be writable.
enum RlpStatus rlp_batches_shape(const struct RlpBatchSet *b, size_t *count, size_t *batch_size);

// Copies the indices of batch `index` into `buf`, which holds `len` values.
//
// # Safety
// `b` must be a live handle; `buf` must have room for `len` values.
enum RlpStatus rlp_batches_get(const struct RlpBatchSet *b, size_t index, size_t *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RLP_H */
