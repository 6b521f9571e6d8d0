#ifndef SHADOWSYNC_H
#define SHADOWSYNC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdint.h>
#include <stddef.h>

typedef enum ss_status {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  /**
   * Malformed UTF-8, unknown key or out-of-range value.
   */
  SS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Next-neighbor sync with a radius not below the smallest subdomain edge.
   */
  SS_STATUS_ASSUMPTION_VIOLATED = 3,
  /**
   * Any other engine failure, e.g. the displacement guard.
   */
  SS_STATUS_SIMULATION = 4,
  SS_STATUS_BUFFER_TOO_SMALL = 5,
  SS_STATUS_NOT_FOUND = 6,
  SS_STATUS_PANIC = 7,
} ss_status;

typedef enum ss_strategy {
  SS_STRATEGY_NEXT_NEIGHBOR = 0,
  SS_STRATEGY_SHADOW_OWNER = 1,
} ss_strategy;

/**
 * Opaque simulation handle.
 */
typedef struct ss_world ss_world;

/**
 * Master state of one particle.
 */
typedef struct ss_particle {
  uint64_t id;
  double position[3];
  double velocity[3];
  double angular_velocity[3];
  double radius;
  double mass;
} ss_particle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or an empty
 * string if none occurred. Successful calls leave it unchanged. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *ss_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ss_version(void);

/**
 * Build a world from configuration text (`key = value` lines) and run
 * its startup synchronizations.
 *
 * # Safety
 * `config` must be null or a NUL-terminated string; `out` must be null or
 * writable. On success `*out` receives a handle owned by the caller.
 */
enum ss_status ss_world_new(const char *config, struct ss_world **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `w` must be null or a handle from [`ss_world_new`] not yet freed.
 */
void ss_world_free(struct ss_world *w);

/**
 * Advance `steps` time steps with the configured `dt`.
 *
 * # Safety
 * `w` must be null or a live handle.
 */
enum ss_status ss_world_step(struct ss_world *w, uint64_t steps);

/**
 * One synchronization call without a time step.
 *
 * # Safety
 * `w` must be null or a live handle.
 */
enum ss_status ss_world_sync(struct ss_world *w);

/**
 * Switch the synchronization strategy of a quiesced world.
 *
 * # Safety
 * `w` must be null or a live handle.
 */
enum ss_status ss_world_set_strategy(struct ss_world *w, enum ss_strategy strategy);

/**
 * Counters: total masters, total shadows, ranks and steps taken.
 *
 * # Safety
 * `w` must be null or a live handle; each output pointer must be null
 * (skipped) or writable.
 */
enum ss_status ss_world_counts(struct ss_world *w,
                               uint64_t *masters,
                               uint64_t *shadows,
                               uint64_t *ranks,
                               uint64_t *steps);

/**
 * Master state of particle `id`.
 *
 * # Safety
 * `w` must be null or a live handle; `out` must be null or writable.
 */
enum ss_status ss_world_particle(struct ss_world *w, uint64_t id, struct ss_particle *out);

/**
 * Copy the snapshot text (NUL-terminated) into `buf`. `*len` receives the
 * size needed including the terminator; pass a null `buf` to query it.
 * Returns `BufferTooSmall` without writing when `cap` is insufficient.
 *
 * # Safety
 * `w` must be null or a live handle; `buf` must be null or valid for `cap`
 * bytes; `len` must be null or writable.
 */
enum ss_status ss_world_snapshot(struct ss_world *w, char *buf, uintptr_t cap, uintptr_t *len);

/**
 * Number of cross-rank invariant violations (0 for a consistent,
 * quiesced world). Details go to [`ss_last_error`].
 *
 * # Safety
 * `w` must be null or a live handle; `problems` must be null or writable.
 */
enum ss_status ss_world_check(struct ss_world *w, uint64_t *problems);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHADOWSYNC_H */
