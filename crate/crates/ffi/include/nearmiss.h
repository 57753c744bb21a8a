#ifndef NEARMISS_H
#define NEARMISS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum NmStatus {
  NM_STATUS_OK = 0,
  NM_STATUS_NULL_ARGUMENT = 1,
  NM_STATUS_INVALID_UTF8 = 2,
  // Malformed scenario, trace or configuration.
  NM_STATUS_INVALID_INPUT = 3,
  NM_STATUS_UNKNOWN_VARIANT = 4,
  // The trace ends in a collision and cannot be forecast or clipped.
  NM_STATUS_NOT_FAILURE_FREE = 5,
  // The clip window or clip end could not be built.
  NM_STATUS_CLIP_FAILED = 6,
  // No child could be generated from the clip.
  NM_STATUS_MUTATION_FAILED = 7,
  NM_STATUS_OUT_OF_RANGE = 8,
  NM_STATUS_IO = 9,
  NM_STATUS_PANIC = 10,
} NmStatus;

typedef enum NmOutcomeKind {
  NM_OUTCOME_KIND_COMPLETED = 0,
  NM_OUTCOME_KIND_COLLISION = 1,
  NM_OUTCOME_KIND_STUCK = 2,
} NmOutcomeKind;

// Opaque ranked risky-point list.
typedef struct NmForecast NmForecast;

// Opaque scenario handle.
typedef struct NmScenario NmScenario;

// Opaque recorded trace.
typedef struct NmTrace NmTrace;

// Outcome of a finished run. `failure_type` is 1 to 5 for F1 to F5 and 0
// when there was no collision.
typedef struct NmOutcome {
  enum NmOutcomeKind kind;
  uint8_t failure_type;
  uintptr_t frames;
  double duration;
} NmOutcome;

// One ranked risky point. `tier` is 3 for critical-crossing, 2 for
// critical and 1 for crossing NPCs.
typedef struct NmRiskyPoint {
  uint32_t actor_id;
  uintptr_t frame;
  uint8_t tier;
  double distance;
} NmRiskyPoint;

typedef struct NmFuzzSummary {
  uintptr_t children;
  uintptr_t collisions;
  uintptr_t stuck;
} NmFuzzSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *nm_version(void);

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next call into the library from the same thread.
const char *nm_last_error(void);

// Free a string returned by this library. NULL is ignored.
void nm_string_free(char *s);

// Instantiate a built-in scenario such as `crossing-ahead/0`.
enum NmStatus nm_scenario_builtin(const char *name, struct NmScenario **out_scenario);

// Parse and validate a scenario from its JSON form.
enum NmStatus nm_scenario_from_json(const char *json, struct NmScenario **out_scenario);

// Serialize a scenario to JSON. Free the result with [`nm_string_free`].
enum NmStatus nm_scenario_to_json(const struct NmScenario *scenario, char **out_json);

// Number of NPCs in a scenario, 0 for NULL.
uintptr_t nm_scenario_npc_count(const struct NmScenario *scenario);

void nm_scenario_free(struct NmScenario *scenario);

// Simulate a scenario to completion.
enum NmStatus nm_run(const struct NmScenario *scenario, struct NmTrace **out_trace);

enum NmStatus nm_trace_outcome(const struct NmTrace *trace, struct NmOutcome *out_outcome);

// Ego position at `frame`.
enum NmStatus nm_trace_ego_position(const struct NmTrace *trace,
                                    uintptr_t frame,
                                    double *out_x,
                                    double *out_y);

// Write the trace as CSV with its outcome sidecar next to it.
enum NmStatus nm_trace_save(const struct NmTrace *trace, const char *csv_path);

void nm_trace_free(struct NmTrace *trace);

// Rank the risky points of a failure-free trace with default thresholds.
// `seed` drives the ego trajectory perturbations.
enum NmStatus nm_forecast(const struct NmTrace *trace,
                          uint64_t seed,
                          struct NmForecast **out_forecast);

uintptr_t nm_forecast_len(const struct NmForecast *forecast);

// Risky point of rank `index`, 0 being the riskiest.
enum NmStatus nm_forecast_get(const struct NmForecast *forecast,
                              uintptr_t index,
                              struct NmRiskyPoint *out_point);

void nm_forecast_free(struct NmForecast *forecast);

// Cut a runnable clip spanning `o_b` seconds before and `o_a` seconds
// after `frame`. The clip is an ordinary scenario handle.
enum NmStatus nm_clip(const struct NmScenario *scenario,
                      const struct NmTrace *trace,
                      uintptr_t frame,
                      double o_b,
                      double o_a,
                      struct NmScenario **out_clip);

// Generate `children` mutated copies of a clip and run them.
enum NmStatus nm_fuzz(const struct NmScenario *clip,
                      uintptr_t children,
                      uint64_t seed,
                      struct NmFuzzSummary *out_summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEARMISS_H */
