#ifndef FRAGMENTVC_H
#define FRAGMENTVC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum FvcStatus {
  FVC_STATUS_OK = 0,
  FVC_STATUS_NULL_ARGUMENT = 1,
  FVC_STATUS_INVALID_ARGUMENT = 2,
  FVC_STATUS_IO = 3,
  FVC_STATUS_FORMAT = 4,
  FVC_STATUS_SHAPE = 5,
  FVC_STATUS_CONFIG = 6,
  FVC_STATUS_UNSUPPORTED_AUDIO = 7,
  FVC_STATUS_PANIC = 8,
} FvcStatus;

// A `rows × cols` matrix of 32-bit floats.
typedef struct FvcMatrix FvcMatrix;

// A loaded checkpoint with its configuration.
typedef struct FvcModel FvcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *fvc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *fvc_version(void);

// Loads an FVCK checkpoint. `config_path` may be null, in which case the
// `config.json` beside the checkpoint (or the defaults) is used.
//
// # Safety
// `checkpoint_path` must be a valid NUL-terminated string, `config_path`
// null or a valid string, and `out` a valid pointer.
enum FvcStatus fvc_model_load(const char *checkpoint_path,
                              const char *config_path,
                              struct FvcModel **out);

// # Safety
// `model` must be null or a handle from [`fvc_model_load`] not yet freed.
void fvc_model_free(struct FvcModel *model);

// Mel-bin count, upstream feature dimension and extractor count of a model.
//
// # Safety
// `model` must be a live handle; each output pointer may be null.
enum FvcStatus fvc_model_dims(const struct FvcModel *model,
                              size_t *n_mel,
                              size_t *upstream_dim,
                              size_t *n_extractors);

// Copies `rows × cols` floats into a new matrix.
//
// # Safety
// `data` must point to `rows * cols` readable floats and `out` be valid.
enum FvcStatus fvc_matrix_new(size_t rows, size_t cols, const float *data, struct FvcMatrix **out);

// # Safety
// `m` must be null or a live matrix handle.
void fvc_matrix_free(struct FvcMatrix *m);

// # Safety
// `m` must be a live matrix handle; outputs may be null.
enum FvcStatus fvc_matrix_shape(const struct FvcMatrix *m, size_t *rows, size_t *cols);

// Pointer to the matrix's row-major data, valid while the handle lives.
//
// # Safety
// `m` must be null or a live matrix handle.
const float *fvc_matrix_data(const struct FvcMatrix *m);

// Copies the matrix into `buf`, which must hold exactly `len` floats.
//
// # Safety
// `m` must be a live handle and `buf` valid for `len` writes.
enum FvcStatus fvc_matrix_copy(const struct FvcMatrix *m, float *buf, size_t len);

// Log-mel spectrogram (`T × 80` with the default analysis settings) of
// 16 kHz mono samples in [-1, 1].
//
// # Safety
// `samples` must point to `n` readable floats and `out` be valid.
enum FvcStatus fvc_log_mel(const float *samples, size_t n, struct FvcMatrix **out);

// Pseudo-upstream source features of a log-mel spectrogram, using the
// model's normalization and feature settings.
//
// # Safety
// `model` and `mel` must be live handles and `out` valid.
enum FvcStatus fvc_model_features(const struct FvcModel *model,
                                  const struct FvcMatrix *mel,
                                  struct FvcMatrix **out);

// Converts source features (`T × upstream_dim`) with `n_targets` log-mel
// target utterances. Writes the converted `T × n_mel` log-mel to
// `out_mel`. When `out_attention` is non-null it must have room for
// `n_attention` handles, which must equal the extractor count; each
// receives that extractor's head-combined `T × S` attention map.
//
// # Safety
// All handles must be live, `targets` must hold `n_targets` handles and
// `out_attention` (if non-null) `n_attention` writable slots.
enum FvcStatus fvc_convert(const struct FvcModel *model,
                           const struct FvcMatrix *source,
                           const struct FvcMatrix *const *targets,
                           size_t n_targets,
                           struct FvcMatrix **out_mel,
                           struct FvcMatrix **out_attention,
                           size_t n_attention);

// Root-mean-square over heads of `heads × rows × cols` attention weights.
//
// # Safety
// `weights` must point to `heads * rows * cols` floats and `out` be valid.
enum FvcStatus fvc_combine_heads_rms(const float *weights,
                                     size_t heads,
                                     size_t rows,
                                     size_t cols,
                                     struct FvcMatrix **out);

// Diagonality score of an attention map (0 for a perfect diagonal).
//
// # Safety
// `map` must be a live handle and `out` valid.
enum FvcStatus fvc_diagonality(const struct FvcMatrix *map, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRAGMENTVC_H */
