#ifndef USGAN_H
#define USGAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UsganStatus {
  USGAN_STATUS_OK = 0,
  USGAN_STATUS_NULL_POINTER = 1,
  USGAN_STATUS_INVALID_ARGUMENT = 2,
  USGAN_STATUS_BUFFER_TOO_SMALL = 3,
  USGAN_STATUS_IO = 4,
  USGAN_STATUS_FORMAT = 5,
  USGAN_STATUS_DEGENERATE = 6,
  USGAN_STATUS_INTERNAL = 7,
} UsganStatus;

/**
 * Opaque handle to a trained generator.
 */
typedef struct UsganGenerator UsganGenerator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * successful one. Valid until the next call on the same thread.
 */
const char *usgan_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *usgan_version(void);

/**
 * Loads a generator checkpoint written by `usgan train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 * The handle written to `*out` must be released with
 * [`usgan_generator_free`].
 */
enum UsganStatus usgan_generator_load(const char *path, struct UsganGenerator **out);

/**
 * Releases a generator. Null is ignored.
 *
 * # Safety
 * `gen` must be null or a handle from [`usgan_generator_load`] that has
 * not been freed.
 */
void usgan_generator_free(struct UsganGenerator *gen);

/**
 * Side length in pixels of the images the generator produces.
 *
 * # Safety
 * `gen` must be a live handle and `out_side` a valid pointer.
 */
enum UsganStatus usgan_generator_resolution(const struct UsganGenerator *gen, size_t *out_side);

/**
 * Samples `n` images as 8-bit grayscale, row-major, one after another.
 * `out` must hold `n * side * side` bytes. Equal seeds give equal images.
 *
 * # Safety
 * `gen` must be a live handle not used concurrently from another
 * thread, and `out` must point to `out_len` writable bytes.
 */
enum UsganStatus usgan_generator_synthesize(struct UsganGenerator *gen,
                                            size_t n,
                                            uint64_t seed,
                                            uint8_t *out,
                                            size_t out_len);

/**
 * Renders the views of one phantom subject. `label` is 0 for healthy
 * and 1 for diseased; `out` must hold `views * resolution^2` bytes where
 * `views` is [`usgan_views_per_subject`].
 *
 * # Safety
 * `out` must point to `out_len` writable bytes.
 */
enum UsganStatus usgan_phantom_subject(uint32_t label,
                                       uint64_t seed,
                                       size_t resolution,
                                       uint8_t *out,
                                       size_t out_len);

/**
 * Number of views rendered per phantom subject.
 */
size_t usgan_views_per_subject(void);

/**
 * Fréchet distance between two feature sets given as row-major
 * `n x dim` matrices.
 *
 * # Safety
 * `real` and `fake` must point to `n_real * dim` and `n_fake * dim`
 * readable doubles; `out` must be a valid pointer.
 */
enum UsganStatus usgan_frechet_distance(const double *real,
                                        size_t n_real,
                                        const double *fake,
                                        size_t n_fake,
                                        size_t dim,
                                        double *out);

/**
 * Inception score of `n` class-probability rows of width `classes`,
 * averaged over `splits` disjoint splits. Writes mean and population
 * standard deviation across splits.
 *
 * # Safety
 * `probs` must point to `n * classes` readable doubles; `out_mean` and
 * `out_std` must be valid pointers.
 */
enum UsganStatus usgan_inception_score(const double *probs,
                                       size_t n,
                                       size_t classes,
                                       size_t splits,
                                       double *out_mean,
                                       double *out_std);

/**
 * Two-tailed paired t-test over `k` pairs.
 *
 * # Safety
 * `a` and `b` must point to `k` readable doubles each; the outputs must
 * be valid pointers.
 */
enum UsganStatus usgan_paired_t_test(const double *a,
                                     const double *b,
                                     size_t k,
                                     double *out_t,
                                     size_t *out_df,
                                     double *out_p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* USGAN_H */
