#ifndef GEOTRANS_H
#define GEOTRANS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GtBackend {
  GT_BACKEND_EXACT = 0,
  GT_BACKEND_SHERMAN = 1,
} GtBackend;

typedef enum GtStatus {
  GT_STATUS_OK = 0,
  GT_STATUS_NULL_POINTER = 1,
  GT_STATUS_INVALID_INPUT = 2,
  GT_STATUS_UNBALANCED = 3,
  GT_STATUS_TOO_LARGE = 4,
  GT_STATUS_OUT_OF_RANGE = 5,
  GT_STATUS_INTERNAL = 6,
  GT_STATUS_PANIC = 7,
} GtStatus;

/**
 * Opaque instance handle.
 */
typedef struct GtInstance GtInstance;

/**
 * Opaque solution handle.
 */
typedef struct GtSolution GtSolution;

typedef struct GtConfig {
  double epsilon;
  uint64_t seed;
  enum GtBackend backend;
  /**
   * Number of shifted trees; 0 picks the default.
   */
  size_t repetitions;
  /**
   * Inner iteration cap; 0 picks the default.
   */
  size_t max_iterations;
} GtConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *gt_last_error(void);

struct GtConfig gt_config_default(void);

/**
 * Builds an instance from `n * d` row-major coordinates and `n` supplies.
 *
 * # Safety
 * `coords` must point to `n * d` doubles and `supplies` to `n` doubles.
 */
enum GtStatus gt_instance_new(size_t d,
                              size_t n,
                              const double *coords,
                              const double *supplies,
                              struct GtInstance **out);

/**
 * Parses the text instance format.
 *
 * # Safety
 * `text` must be a NUL-terminated string.
 */
enum GtStatus gt_instance_parse(const char *text, struct GtInstance **out);

/**
 * # Safety
 * `instance` must come from this library and not be freed twice.
 */
void gt_instance_free(struct GtInstance *instance);

/**
 * # Safety
 * `instance` must be a live handle or null.
 */
size_t gt_instance_len(const struct GtInstance *instance);

/**
 * # Safety
 * `instance` must be a live handle or null.
 */
size_t gt_instance_dim(const struct GtInstance *instance);

/**
 * Runs the approximation pipeline. A null `config` uses the defaults.
 *
 * # Safety
 * `instance` must be a live handle; `config` null or valid.
 */
enum GtStatus gt_solve(const struct GtInstance *instance,
                       const struct GtConfig *config,
                       struct GtSolution **out);

/**
 * Exact optimum on the complete bipartite graph (small instances only).
 *
 * # Safety
 * `instance` must be a live handle.
 */
enum GtStatus gt_solve_exact(const struct GtInstance *instance, struct GtSolution **out);

/**
 * # Safety
 * `solution` must come from this library and not be freed twice.
 */
void gt_solution_free(struct GtSolution *solution);

/**
 * # Safety
 * `solution` must be a live handle or null.
 */
double gt_solution_cost(const struct GtSolution *solution);

/**
 * # Safety
 * `solution` must be a live handle or null.
 */
size_t gt_solution_len(const struct GtSolution *solution);

/**
 * Reads map entry `index`: mass `amount` moves from point `src` to `dst`.
 *
 * # Safety
 * `solution` must be a live handle; output pointers must be writable.
 */
enum GtStatus gt_solution_entry(const struct GtSolution *solution,
                                size_t index,
                                size_t *src,
                                size_t *dst,
                                double *amount);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOTRANS_H */
