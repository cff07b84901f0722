#ifndef CLIPDIV_H
#define CLIPDIV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum ClipdivStatus {
  CLIPDIV_STATUS_OK = 0,
  CLIPDIV_STATUS_NULL_POINTER = 1,
  /**
   * Bad buffer size, non-UTF-8 path, or shape mismatch.
   */
  CLIPDIV_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Rejected configuration or inconsistent inputs.
   */
  CLIPDIV_STATUS_CONFIG = 3,
  /**
   * Malformed manifest or blob.
   */
  CLIPDIV_STATUS_FORMAT = 4,
  CLIPDIV_STATUS_IO = 5,
  /**
   * Degenerate numeric input (zero vectors, empty classes).
   */
  CLIPDIV_STATUS_NUMERIC = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  CLIPDIV_STATUS_PANIC = 7,
} ClipdivStatus;

typedef enum ClipdivKlDirection {
  CLIPDIV_KL_DIRECTION_GUIDANCE_FIRST = 0,
  CLIPDIV_KL_DIRECTION_MODEL_FIRST = 1,
} ClipdivKlDirection;

/**
 * Opaque dataset handle.
 */
typedef struct ClipdivDataset ClipdivDataset;

/**
 * Opaque trained model plus the class names it predicts.
 */
typedef struct ClipdivModel ClipdivModel;

/**
 * Opaque prompt bank handle.
 */
typedef struct ClipdivPromptBank ClipdivPromptBank;

typedef struct ClipdivShape {
  size_t num_samples;
  size_t dim_input;
  /**
   * 0 when the dataset has no CLIP embeddings.
   */
  size_t dim_clip;
  size_t num_classes;
  bool has_labels;
  bool has_eval_labels;
} ClipdivShape;

typedef struct ClipdivSynthConfig {
  size_t num_classes;
  size_t dim_input;
  size_t dim_clip;
  size_t n_per_domain;
  double domain_gap;
  double clip_fidelity;
  double noise_scale;
  uint64_t seed;
} ClipdivSynthConfig;

typedef struct ClipdivTrainConfig {
  double lambda_abs;
  double lambda_rel;
  double lambda_pl;
  size_t epochs;
  size_t batch_size;
  double lr_extractor;
  double lr_classifier;
  double momentum;
  double eta0;
  double alpha;
  double beta;
  double tau;
  uint64_t seed;
  enum ClipdivKlDirection kl_direction;
  /**
   * Width of the single hidden layer; 0 removes it.
   */
  size_t hidden_dim;
  size_t feature_dim;
} ClipdivTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next failure.
 */
const char *clipdiv_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *clipdiv_version(void);

enum ClipdivStatus clipdiv_dataset_read(const char *path, struct ClipdivDataset **out);

enum ClipdivStatus clipdiv_dataset_write(const struct ClipdivDataset *dataset, const char *path);

enum ClipdivStatus clipdiv_dataset_shape(const struct ClipdivDataset *dataset,
                                         struct ClipdivShape *out);

/**
 * Accepts null.
 */
void clipdiv_dataset_free(struct ClipdivDataset *dataset);

enum ClipdivStatus clipdiv_prompts_read(const char *path, struct ClipdivPromptBank **out);

enum ClipdivStatus clipdiv_prompts_write(const struct ClipdivPromptBank *prompts, const char *path);

/**
 * Accepts null.
 */
void clipdiv_prompts_free(struct ClipdivPromptBank *prompts);

struct ClipdivSynthConfig clipdiv_synth_config_default(void);

enum ClipdivStatus clipdiv_synth_generate(const struct ClipdivSynthConfig *config,
                                          struct ClipdivDataset **out_source,
                                          struct ClipdivDataset **out_target,
                                          struct ClipdivPromptBank **out_prompts);

struct ClipdivTrainConfig clipdiv_train_config_default(void);

/**
 * Trains a model. `out_target_accuracy` may be null; it receives NaN when the
 * target has no evaluation labels.
 */
enum ClipdivStatus clipdiv_train(const struct ClipdivDataset *source,
                                 const struct ClipdivDataset *target,
                                 const struct ClipdivPromptBank *prompts,
                                 const struct ClipdivTrainConfig *config,
                                 struct ClipdivModel **out_model,
                                 double *out_target_accuracy);

enum ClipdivStatus clipdiv_model_read(const char *path, struct ClipdivModel **out);

enum ClipdivStatus clipdiv_model_write(const struct ClipdivModel *model, const char *path);

enum ClipdivStatus clipdiv_model_dims(const struct ClipdivModel *model,
                                      size_t *out_dim_input,
                                      size_t *out_num_classes);

/**
 * Accepts null.
 */
void clipdiv_model_free(struct ClipdivModel *model);

/**
 * Argmax class of each row of the row-major `rows x cols` matrix `inputs`.
 */
enum ClipdivStatus clipdiv_model_predict(const struct ClipdivModel *model,
                                         const double *inputs,
                                         size_t rows,
                                         size_t cols,
                                         uint32_t *out_labels);

enum ClipdivStatus clipdiv_evaluate(const struct ClipdivModel *model,
                                    const struct ClipdivDataset *dataset,
                                    double *out_accuracy);

/**
 * Zero-shot distributions: `image` is `n x d`, `text` is `k x d`, `out` is `n x k`, all row-major.
 */
enum ClipdivStatus clipdiv_zero_shot_probs(const double *image,
                                           size_t n,
                                           size_t d,
                                           const double *text,
                                           size_t k,
                                           double tau,
                                           double *out);

enum ClipdivStatus clipdiv_softmax(const double *logits, size_t k, double tau, double *out);

/**
 * `KL(p || q)` over `k` entries.
 */
enum ClipdivStatus clipdiv_kl_div(const double *p, const double *q, size_t k, double *out);

/**
 * `eta0 / (1 + alpha * theta)^beta`.
 */
enum ClipdivStatus clipdiv_lr_multiplier(double theta,
                                         double eta0,
                                         double alpha,
                                         double beta,
                                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLIPDIV_H */
