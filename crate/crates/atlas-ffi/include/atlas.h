#ifndef ATLAS_H
#define ATLAS_H

/* Generated by cbindgen from the atlas-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call across the C boundary.
 */
typedef enum AtlasStatus {
  /**
   * The call succeeded.
   */
  ATLAS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  ATLAS_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  ATLAS_STATUS_INVALID_UTF8 = 2,
  /**
   * The input could not be parsed as a routing profile.
   */
  ATLAS_STATUS_PARSE_ERROR = 3,
  /**
   * Routing or scoring failed; see `atlas_last_error_message`.
   */
  ATLAS_STATUS_ROUTE_ERROR = 4,
  /**
   * The profile file could not be read.
   */
  ATLAS_STATUS_IO_ERROR = 5,
  /**
   * The library caught an internal panic at the boundary.
   */
  ATLAS_STATUS_INTERNAL_ERROR = 6,
} AtlasStatus;

/**
 * Opaque handle to a fitted routing profile. Created by
 * `atlas_profile_load` or `atlas_profile_from_json`, released by
 * `atlas_profile_free`.
 */
typedef struct AtlasProfile AtlasProfile;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; never null, never
 * freed by the caller.
 */
const char *atlas_version(void);

/**
 * Detail message for the most recent failure on this thread, or null when
 * the last call succeeded. The pointer stays valid until the next library
 * call on the same thread; do not free it.
 */
const char *atlas_last_error_message(void);

/**
 * Loads a routing profile from a JSON file on disk into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid location to
 * store the handle. On any status other than `Ok`, `*out` is untouched.
 */
enum AtlasStatus atlas_profile_load(const char *path, struct AtlasProfile **out);

/**
 * Parses a routing profile from a JSON string into `*out`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid location to
 * store the handle. On any status other than `Ok`, `*out` is untouched.
 */
enum AtlasStatus atlas_profile_from_json(const char *json, struct AtlasProfile **out);

/**
 * Releases a profile handle. Null is accepted and ignored.
 *
 * # Safety
 * `profile` must be null or a handle produced by this library that has
 * not been freed already.
 */
void atlas_profile_free(struct AtlasProfile *profile);

/**
 * Routes one query through the profile and stores the decision as a JSON
 * string in `*out_json` (fields `model`, `tool`, `cluster_id`, `utility`,
 * `fallback_used`). The caller owns the string and must release it with
 * `atlas_string_free`.
 *
 * # Safety
 * `profile` must be a live handle from this library, `query` a
 * NUL-terminated string, and `out_json` a valid location to store the
 * string. On any status other than `Ok`, `*out_json` is untouched.
 */
enum AtlasStatus atlas_route(const struct AtlasProfile *profile,
                             const char *query,
                             char **out_json);

/**
 * Scores a trajectory's structure against the profile's pool and stores
 * the format reward in `*out_reward`: 0 when the trajectory is
 * well-formed, -1 when any structural rule is violated.
 *
 * # Safety
 * `profile` must be a live handle from this library, `trajectory` a
 * NUL-terminated string, and `out_reward` a valid location to store the
 * value. On any status other than `Ok`, `*out_reward` is untouched.
 */
enum AtlasStatus atlas_format_reward(const struct AtlasProfile *profile,
                                     const char *trajectory,
                                     double *out_reward);

/**
 * Releases a string produced by this library. Null is accepted and
 * ignored.
 *
 * # Safety
 * `text` must be null or a string produced by this library that has not
 * been freed already.
 */
void atlas_string_free(char *text);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATLAS_H */
