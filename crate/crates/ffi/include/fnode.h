#ifndef FNODE_H
#define FNODE_H

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum FnodeStatus {
  FNODE_STATUS_OK = 0,
  FNODE_STATUS_NULL_POINTER = 1,
  FNODE_STATUS_INVALID_ARGUMENT = 2,
  FNODE_STATUS_PARSE = 3,
  FNODE_STATUS_IO = 4,
  /*
   Non-finite values, shape errors or an ODE blow-up.
   */
  FNODE_STATUS_NUMERIC = 5,
  FNODE_STATUS_DIVERGENCE = 6,
  FNODE_STATUS_NO_ACCEPTANCE = 7,
  /*
   The output buffer is smaller than the required element count.
   */
  FNODE_STATUS_BUFFER_TOO_SMALL = 8,
  /*
   A panic inside the library.
   */
  FNODE_STATUS_INTERNAL = 9,
} FnodeStatus;

/*
 A panel dataset.
 */
typedef struct FnodeDataset FnodeDataset;

/*
 A trained model together with its fitted mixture, if any.
 */
typedef struct FnodeModel FnodeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *fnode_version(void);

/*
 Message of the last failed call on this thread, or null. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *fnode_last_error(void);

/*
 Generates a synthetic dataset: `set` 0 draws amplitude classes, 1
 frequency classes.

 # Safety
 `out` must be a valid pointer to writable handle storage.
 */
enum FnodeStatus fnode_dataset_generate(uint32_t set,
                                        size_t n_per_class,
                                        size_t n_classes,
                                        size_t n_points,
                                        uint64_t seed,
                                        struct FnodeDataset **out);

/*
 Reads a dataset file.

 # Safety
 `path` must be a NUL-terminated string and `out` writable handle storage.
 */
enum FnodeStatus fnode_dataset_load(const char *path, struct FnodeDataset **out);

/*
 Parses dataset text.

 # Safety
 `text` must be a NUL-terminated string and `out` writable handle storage.
 */
enum FnodeStatus fnode_dataset_parse(const char *text, struct FnodeDataset **out);

/*
 Writes a dataset file.

 # Safety
 `data` must be a live handle and `path` a NUL-terminated string.
 */
enum FnodeStatus fnode_dataset_save(const struct FnodeDataset *data, const char *path);

/*
 Number of trajectories; 0 for a null handle.

 # Safety
 `data` must be null or a live handle.
 */
size_t fnode_dataset_len(const struct FnodeDataset *data);

/*
 Observations in trajectory `index`.

 # Safety
 `data` must be a live handle and `out_len` writable.
 */
enum FnodeStatus fnode_dataset_trajectory_len(const struct FnodeDataset *data,
                                              size_t index,
                                              size_t *out_len);

/*
 # Safety
 `data` must be null or a handle not yet freed.
 */
void fnode_dataset_free(struct FnodeDataset *data);

/*
 Trains a model on `data` and fits its mixture. `config` holds `key =
 value` lines and may be null for the defaults.

 # Safety
 `data` must be a live handle, `config` null or NUL-terminated, `out`
 writable handle storage.
 */
enum FnodeStatus fnode_train(const struct FnodeDataset *data,
                             const char *config,
                             struct FnodeModel **out);

/*
 Reads a model archive.

 # Safety
 `path` must be a NUL-terminated string and `out` writable handle storage.
 */
enum FnodeStatus fnode_model_load(const char *path, struct FnodeModel **out);

/*
 Writes a model archive.

 # Safety
 `model` must be a live handle and `path` a NUL-terminated string.
 */
enum FnodeStatus fnode_model_save(const struct FnodeModel *model, const char *path);

/*
 Latent, embedding and observation widths. Any output pointer may be null.

 # Safety
 `model` must be a live handle; non-null outputs must be writable.
 */
enum FnodeStatus fnode_model_dims(const struct FnodeModel *model,
                                  size_t *latent_dim,
                                  size_t *gamma_dim,
                                  size_t *obs_dim);

/*
 1 when the model carries a fitted mixture, else 0.

 # Safety
 `model` must be null or a live handle.
 */
int32_t fnode_model_has_mixture(const struct FnodeModel *model);

/*
 # Safety
 `model` must be null or a handle not yet freed.
 */
void fnode_model_free(struct FnodeModel *model);

/*
 Posterior mean of γ for trajectory `index`, `gamma_dim` values.

 # Safety
 Handles must be live and `out` must hold `cap` doubles.
 */
enum FnodeStatus fnode_encode_gamma(const struct FnodeModel *model,
                                    const struct FnodeDataset *data,
                                    size_t index,
                                    double *out,
                                    size_t cap);

/*
 `n` trajectories from the initial state of trajectory `index` with γ
 drawn from the mixture, on `times`. Values are laid out sample-major:
 `out[(s * n_times + t) * obs_dim + j]`.

 # Safety
 Handles must be live, `times` must hold `n_times` doubles and `out` `cap`.
 */
enum FnodeStatus fnode_sample(const struct FnodeModel *model,
                              const struct FnodeDataset *data,
                              size_t index,
                              const double *times,
                              size_t n_times,
                              size_t n,
                              uint64_t seed,
                              double *out,
                              size_t cap);

/*
 Negative log-likelihood of trajectory `index` under the mixture, averaged
 over `n_gamma` posterior draws. Larger is more anomalous.

 # Safety
 Handles must be live and `out` writable.
 */
enum FnodeStatus fnode_ood_score(const struct FnodeModel *model,
                                 const struct FnodeDataset *data,
                                 size_t index,
                                 size_t n_gamma,
                                 uint64_t seed,
                                 double *out);

/*
 Posterior credible band for trajectory `index` on `times`, including
 observation noise. Each output holds `n_times * obs_dim` values.

 # Safety
 Handles must be live, `times` must hold `n_times` doubles and each output
 `cap`.
 */
enum FnodeStatus fnode_credible_band(const struct FnodeModel *model,
                                     const struct FnodeDataset *data,
                                     size_t index,
                                     const double *times,
                                     size_t n_times,
                                     size_t n_draws,
                                     double level,
                                     uint64_t seed,
                                     double *lower,
                                     double *mean,
                                     double *upper,
                                     size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FNODE_H */
