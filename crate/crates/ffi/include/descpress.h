#ifndef DESCPRESS_H
#define DESCPRESS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum DpStatus {
  DP_STATUS_OK = 0,
  /*
   A required pointer was null or a string was not UTF-8.
   */
  DP_STATUS_INVALID_ARGUMENT = 1,
  DP_STATUS_SHAPE = 2,
  DP_STATUS_FORMAT = 3,
  DP_STATUS_IO = 4,
  DP_STATUS_NUMERIC = 5,
  DP_STATUS_CONFIG = 6,
  DP_STATUS_STATE = 7,
  /*
   The library panicked; the handle involved should be considered unusable.
   */
  DP_STATUS_PANIC = 8,
} DpStatus;

/*
 Value width of a saved descriptor file.
 */
typedef enum DpPrecision {
  DP_PRECISION_F32 = 4,
  DP_PRECISION_F64 = 8,
} DpPrecision;

typedef enum DpTask {
  DP_TASK_VERIFICATION = 0,
  DP_TASK_MATCHING = 1,
  DP_TASK_RETRIEVAL = 2,
} DpTask;

/*
 Descriptors with labels, sequence ids and optional noise tiers.
 */
typedef struct DpDescriptors DpDescriptors;

/*
 Trained encoder together with its folded single-precision copy.
 */
typedef struct DpEncoder DpEncoder;

typedef struct DpPca DpPca;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null if none. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *dp_last_error(void);

/*
 Library version as a static nul-terminated string.
 */
const char *dp_version(void);

/*
 Loads a DDR1 descriptor file.

 # Safety
 `path` must be a nul-terminated string; `out` must be writable.
 */
enum DpStatus dp_descriptors_load(const char *path, struct DpDescriptors **out);

/*
 Builds a set from `rows × cols` row-major values and per-row labels and
 sequence ids. `sequence_ids` may be null, in which case every row gets 0.

 # Safety
 `data` must hold `rows * cols` doubles; `labels` (and `sequence_ids`, when
 non-null) must hold `rows` values.
 */
enum DpStatus dp_descriptors_from_rows(const double *data,
                                       size_t rows,
                                       size_t cols,
                                       const uint32_t *labels,
                                       const uint32_t *sequence_ids,
                                       struct DpDescriptors **out);

/*
 # Safety
 `path` must be a nul-terminated string; `set` a live handle.
 */
enum DpStatus dp_descriptors_save(const struct DpDescriptors *set,
                                  const char *path,
                                  enum DpPrecision precision);

/*
 Number of rows; 0 for a null handle.

 # Safety
 `set` must be null or a live handle.
 */
size_t dp_descriptors_len(const struct DpDescriptors *set);

/*
 Row width; 0 for a null handle.

 # Safety
 `set` must be null or a live handle.
 */
size_t dp_descriptors_dim(const struct DpDescriptors *set);

/*
 Copies the row-major values into `buf`; `len` must equal `rows * dim`.

 # Safety
 `buf` must be writable for `len` doubles.
 */
enum DpStatus dp_descriptors_copy(const struct DpDescriptors *set, double *buf, size_t len);

/*
 # Safety
 `set` must be null or a handle not yet freed.
 */
void dp_descriptors_free(struct DpDescriptors *set);

/*
 Loads a DNN1 encoder file.

 # Safety
 `path` must be a nul-terminated string; `out` must be writable.
 */
enum DpStatus dp_encoder_load(const char *path, struct DpEncoder **out);

/*
 # Safety
 `enc` must be a live handle; `path` a nul-terminated string.
 */
enum DpStatus dp_encoder_save(const struct DpEncoder *enc, const char *path);

/*
 Trains an encoder. `scheme` is `us`, `ss` or `sv`; `config` is null or
 `key=value` lines (with `#` comments) applied over the scheme defaults.

 # Safety
 `set` must be a live handle; strings nul-terminated; `out` writable.
 */
enum DpStatus dp_train(const struct DpDescriptors *set,
                       const char *scheme,
                       size_t dim,
                       const char *config,
                       struct DpEncoder **out);

/*
 # Safety
 `enc` must be null or a live handle.
 */
size_t dp_encoder_input_dim(const struct DpEncoder *enc);

/*
 # Safety
 `enc` must be null or a live handle.
 */
size_t dp_encoder_output_dim(const struct DpEncoder *enc);

/*
 Projects `rows` single-precision rows through the folded encoder.

 # Safety
 `input` must hold `rows * input_dim` floats and `output` `rows * output_dim`.
 */
enum DpStatus dp_encoder_project_f32(const struct DpEncoder *enc,
                                     const float *input,
                                     size_t rows,
                                     float *output);

/*
 Projects a descriptor set in double precision into a new set.

 # Safety
 `enc` and `set` must be live handles; `out` writable.
 */
enum DpStatus dp_encoder_reduce(const struct DpEncoder *enc,
                                const struct DpDescriptors *set,
                                struct DpDescriptors **out);

/*
 # Safety
 `enc` must be null or a handle not yet freed.
 */
void dp_encoder_free(struct DpEncoder *enc);

/*
 # Safety
 `set` must be a live handle; `out` writable.
 */
enum DpStatus dp_pca_fit(const struct DpDescriptors *set, size_t dim, struct DpPca **out);

/*
 # Safety
 `path` must be a nul-terminated string; `out` writable.
 */
enum DpStatus dp_pca_load(const char *path, struct DpPca **out);

/*
 # Safety
 `pca` must be a live handle; `path` a nul-terminated string.
 */
enum DpStatus dp_pca_save(const struct DpPca *pca, const char *path);

/*
 Projects and ℓ2-normalizes a descriptor set into a new set.

 # Safety
 `pca` and `set` must be live handles; `out` writable.
 */
enum DpStatus dp_pca_reduce(const struct DpPca *pca,
                            const struct DpDescriptors *set,
                            struct DpDescriptors **out);

/*
 # Safety
 `pca` must be null or a handle not yet freed.
 */
void dp_pca_free(struct DpPca *pca);

/*
 Mean average precision of `set` on `task` with default sampling sizes.

 # Safety
 `set` must be a live handle; `map` writable.
 */
enum DpStatus dp_evaluate(const struct DpDescriptors *set,
                          enum DpTask task,
                          uint64_t seed,
                          double *map);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DESCPRESS_H */
