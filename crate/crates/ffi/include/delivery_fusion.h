#ifndef DELIVERY_FUSION_H
#define DELIVERY_FUSION_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum FusionStatus {
  FUSION_STATUS_OK = 0,
  // A required pointer argument was null.
  FUSION_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  FUSION_STATUS_INVALID_UTF8 = 2,
  // Reading a file failed.
  FUSION_STATUS_IO = 3,
  // Two datasets were encoded with different feature dictionaries.
  FUSION_STATUS_DICTIONARY_MISMATCH = 4,
  // Malformed input file or configuration.
  FUSION_STATUS_FORMAT = 5,
  // Inputs are well-formed but violate a precondition.
  FUSION_STATUS_DATA = 6,
  // An index was past the end.
  FUSION_STATUS_OUT_OF_RANGE = 7,
  // The library panicked; this is a bug.
  FUSION_STATUS_PANIC = 8,
} FusionStatus;

// Opaque encoded dataset.
typedef struct FusionDataset FusionDataset;

// Opaque imputation result.
typedef struct FusionImputation FusionImputation;

// Options for `fusion_impute`.
typedef struct FusionImputeOptions {
  // Replace observed targets too, not only missing ones.
  bool impute_all;
  // Break distance ties with a seeded random choice instead of the lowest
  // bucket index.
  bool random_tie_break;
  uint64_t seed;
} FusionImputeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null if it succeeded.
// The pointer stays valid until the next call into this library on the same
// thread.
const char *fusion_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *fusion_version(void);

// Loads an encoded dataset file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FusionStatus fusion_dataset_load(const char *path, struct FusionDataset **out_dataset);

// Releases a dataset. Null is ignored.
//
// # Safety
// `dataset` must come from `fusion_dataset_load` and not be freed twice.
void fusion_dataset_free(struct FusionDataset *dataset);

// Number of samples.
//
// # Safety
// `dataset` must be a live handle; `out_len` must be writable.
enum FusionStatus fusion_dataset_len(const struct FusionDataset *dataset, size_t *out_len);

// Width of the encoded feature vectors.
//
// # Safety
// `dataset` must be a live handle; `out_dim` must be writable.
enum FusionStatus fusion_dataset_dimension(const struct FusionDataset *dataset, size_t *out_dim);

// Number of samples whose target is missing.
//
// # Safety
// `dataset` must be a live handle; `out_count` must be writable.
enum FusionStatus fusion_dataset_missing_count(const struct FusionDataset *dataset,
                                               size_t *out_count);

// Imputes `source` targets from nearest-neighbor buckets of `candidate`.
// `options` may be null for the defaults.
//
// # Safety
// Both datasets must be live handles; `options` null or valid;
// `out_imputation` writable.
enum FusionStatus fusion_impute(const struct FusionDataset *source,
                                const struct FusionDataset *candidate,
                                const struct FusionImputeOptions *options,
                                struct FusionImputation **out_imputation);

// Releases an imputation result. Null is ignored.
//
// # Safety
// `imputation` must come from `fusion_impute` and not be freed twice.
void fusion_imputation_free(struct FusionImputation *imputation);

// Scaling weight `|source| / |candidate|` applied to bucket means.
//
// # Safety
// `imputation` must be a live handle; `out_weight` writable.
enum FusionStatus fusion_imputation_weight(const struct FusionImputation *imputation,
                                           double *out_weight);

// Number of per-sample values (equal to the source length).
//
// # Safety
// `imputation` must be a live handle; `out_len` writable.
enum FusionStatus fusion_imputation_sample_count(const struct FusionImputation *imputation,
                                                 size_t *out_len);

// Target of source sample `index`, imputed or observed.
//
// # Safety
// `imputation` must be a live handle; `out_y` writable.
enum FusionStatus fusion_imputation_sample_y(const struct FusionImputation *imputation,
                                             size_t index,
                                             double *out_y);

// Number of households in the result.
//
// # Safety
// `imputation` must be a live handle; `out_len` writable.
enum FusionStatus fusion_imputation_household_count(const struct FusionImputation *imputation,
                                                    size_t *out_len);

// Copies household totals, in first-appearance order, into `buffer`.
// `capacity` must be at least the household count.
//
// # Safety
// `imputation` must be a live handle; `buffer` must hold `capacity` doubles.
enum FusionStatus fusion_imputation_household_totals(const struct FusionImputation *imputation,
                                                     double *buffer,
                                                     size_t capacity);

// Normalized Hamming distance between two bit arrays of `len` bytes, each
// byte read as 0 or non-zero.
//
// # Safety
// `a` and `b` must each point to `len` readable bytes.
enum FusionStatus fusion_hamming(const uint8_t *a,
                                 const uint8_t *b,
                                 size_t len,
                                 double *out_distance);

// Mean squared error between the ascending sorts of two equal-length arrays.
//
// # Safety
// `a` and `b` must each point to `len` readable doubles.
enum FusionStatus fusion_sorted_mse(const double *a, const double *b, size_t len, double *out_mse);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DELIVERY_FUSION_H */
