#ifndef LACHESIS_H
#define LACHESIS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LachesisStatus {
  LACHESIS_STATUS_OK = 0,
  LACHESIS_STATUS_NULL_POINTER = 1,
  LACHESIS_STATUS_INVALID_UTF8 = 2,
  LACHESIS_STATUS_INVALID_SCENARIO = 3,
  LACHESIS_STATUS_OUT_OF_RANGE = 4,
  LACHESIS_STATUS_IO = 5,
  // The buffer was too small; the required size was still reported.
  LACHESIS_STATUS_BUFFER_TOO_SMALL = 6,
  LACHESIS_STATUS_PANIC = 7,
} LachesisStatus;

// Opaque handle to a finished run.
typedef struct LachesisRun LachesisRun;

// Opaque scenario handle.
typedef struct LachesisScenario LachesisScenario;

typedef struct LachesisMetrics {
  uint64_t blocks_finalized;
  uint64_t transactions_executed;
  uint64_t events_emitted;
  double avg_ttf;
  double avg_tps;
  uint64_t violations;
} LachesisMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *lachesis_last_error(void);

// Static, NUL-terminated crate version.
const char *lachesis_version(void);

// Unit-stake scenario over `nodes` validators with defaults otherwise.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum LachesisStatus lachesis_scenario_uniform(uint32_t nodes,
                                              uint64_t seed,
                                              struct LachesisScenario **out);

// Parses a scenario from JSON, the same format `run.json` and
// `lachesis-sim run --scenario` use.
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum LachesisStatus lachesis_scenario_from_json(const char *json, struct LachesisScenario **out);

// Scenario as JSON. Writes at most `cap` bytes including the NUL and stores
// the full size (with NUL) in `needed` when it is not null.
//
// # Safety
// `buf` must point to `cap` writable bytes, or be null with `cap == 0`.
enum LachesisStatus lachesis_scenario_to_json(const struct LachesisScenario *s,
                                              char *buf,
                                              size_t cap,
                                              size_t *needed);

// # Safety
// `s` must be a live scenario handle.
enum LachesisStatus lachesis_scenario_set_duration_ms(struct LachesisScenario *s, uint64_t ms);

// Makes `node` equivocate once at `at_ms`.
//
// # Safety
// `s` must be a live scenario handle.
enum LachesisStatus lachesis_scenario_add_fork(struct LachesisScenario *s,
                                               uint32_t node,
                                               uint64_t at_ms);

// # Safety
// `s` must be null or a handle from this library not yet freed.
void lachesis_scenario_free(struct LachesisScenario *s);

// Runs the scenario to completion.
//
// # Safety
// `s` must be a live scenario handle; `out` must be writable.
enum LachesisStatus lachesis_run(const struct LachesisScenario *s, struct LachesisRun **out);

// # Safety
// `r` must be a live run handle; `out` must be writable.
enum LachesisStatus lachesis_run_metrics(const struct LachesisRun *r, struct LachesisMetrics *out);

// Number of nodes, and so of chain transcripts, in the run.
//
// # Safety
// `r` must be a live run handle; `out` must be writable.
enum LachesisStatus lachesis_run_node_count(const struct LachesisRun *r, size_t *out);

// Node `node`'s chain transcript (JSON lines), copied like
// [`lachesis_scenario_to_json`].
//
// # Safety
// `r` must be a live run handle; `buf` must point to `cap` writable bytes.
enum LachesisStatus lachesis_run_chain(const struct LachesisRun *r,
                                       size_t node,
                                       char *buf,
                                       size_t cap,
                                       size_t *needed);

// Writes all run artifacts under `dir`.
//
// # Safety
// `r` must be a live run handle; `dir` must be NUL-terminated.
enum LachesisStatus lachesis_run_write(const struct LachesisRun *r, const char *dir);

// # Safety
// `r` must be null or a handle from this library not yet freed.
void lachesis_run_free(struct LachesisRun *r);

// Compares `n` chain transcripts. `diverged_at` receives 0 when every pair
// agrees on its shared prefix, else the 1-based index of the first bad block.
//
// # Safety
// `texts` must point to `n` NUL-terminated strings; `diverged_at` must be writable.
enum LachesisStatus lachesis_verify(const char *const *texts, size_t n, uint64_t *diverged_at);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LACHESIS_H */
