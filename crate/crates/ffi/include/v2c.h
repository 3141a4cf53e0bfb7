#ifndef V2C_H
#define V2C_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>

/**
 * Result codes shared by all functions.
 */
typedef enum V2cStatus {
  V2C_STATUS_OK = 0,
  V2C_STATUS_NULL_POINTER = 1,
  V2C_STATUS_INVALID_ARGUMENT = 2,
  V2C_STATUS_IO = 3,
  V2C_STATUS_FORMAT = 4,
  /**
   * Input dimensions do not match the model.
   */
  V2C_STATUS_SHAPE = 5,
  V2C_STATUS_CHECKSUM = 6,
  V2C_STATUS_VERSION = 7,
  V2C_STATUS_NUMERIC = 8,
  V2C_STATUS_PANIC = 9,
} V2cStatus;

/**
 * Loaded checkpoint: model parameters plus its vocabulary.
 */
typedef struct V2cModel V2cModel;

/**
 * Robot vocabulary with its similarity threshold.
 */
typedef struct V2cRobotVocab V2cRobotVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or an empty string.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *v2c_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *v2c_version(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void v2c_string_free(char *s);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum V2cStatus v2c_model_load(const char *path, struct V2cModel **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must come from `v2c_model_load` and not have been freed already.
 */
void v2c_model_free(struct V2cModel *model);

/**
 * Report model dimensions. Any out-pointer may be null.
 *
 * # Safety
 * `model` must be a live handle; non-null out-pointers must be writable.
 */
enum V2cStatus v2c_model_dims(const struct V2cModel *model,
                              size_t *feature_dim,
                              size_t *n_steps,
                              size_t *hidden,
                              size_t *vocab_size);

/**
 * Greedily translate `n_frames` row-major frames of `dim` values each.
 * Frames are sampled or padded to the model's step count; `pad` supplies
 * the pad frame (`dim` values) or is null for zeros. On success `*out`
 * receives the space-separated command.
 *
 * # Safety
 * `frames` must hold `n_frames * dim` doubles; `pad`, if non-null, `dim`
 * doubles; `out` must be writable.
 */
enum V2cStatus v2c_translate_frames(const struct V2cModel *model,
                                    const double *frames,
                                    size_t n_frames,
                                    size_t dim,
                                    const double *pad,
                                    char **out);

/**
 * Greedily translate one feature file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum V2cStatus v2c_translate_file(const struct V2cModel *model, const char *path, char **out);

/**
 * Load a robot vocabulary file (`slot<TAB>word` lines).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum V2cStatus v2c_robot_vocab_load(const char *path, double threshold, struct V2cRobotVocab **out);

/**
 * Parse a robot vocabulary from text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum V2cStatus v2c_robot_vocab_parse(const char *text,
                                     double threshold,
                                     struct V2cRobotVocab **out);

/**
 * Release a robot vocabulary. Null is ignored.
 *
 * # Safety
 * `vocab` must come from this library and not have been freed already.
 */
void v2c_robot_vocab_free(struct V2cRobotVocab *vocab);

/**
 * Map a space-separated command onto the robot vocabulary. `*accepted`
 * is set to 1 or 0; `*out` receives the resolved command when accepted
 * and the rejection reason otherwise.
 *
 * # Safety
 * `vocab` must be a live handle, `command` a NUL-terminated string, and
 * `accepted`/`out` writable.
 */
enum V2cStatus v2c_map_command(const struct V2cRobotVocab *vocab,
                               const char *command,
                               int *accepted,
                               char **out);

/**
 * Normalized edit-distance similarity in `[0, 1]`.
 *
 * # Safety
 * `a` and `b` must be NUL-terminated strings; `out` must be writable.
 */
enum V2cStatus v2c_similarity(const char *a, const char *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* V2C_H */
