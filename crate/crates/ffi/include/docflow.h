#ifndef DOCFLOW_H
#define DOCFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DfStatus {
  DF_STATUS_OK = 0,
  DF_STATUS_CONFLICT = 1,
  DF_STATUS_POLICY = 2,
  DF_STATUS_NOT_FOUND = 3,
  DF_STATUS_MALFORMED = 4,
  DF_STATUS_STORAGE = 5,
  DF_STATUS_PANIC = 6,
} DfStatus;

/**
 * An open data directory. Opaque to C.
 */
typedef struct DfEngine DfEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Opens (or creates) a data directory. `snapshot_every` of 0 disables
 * automatic snapshots.
 *
 * # Safety
 * `data_dir` is a NUL-terminated path; `out` is valid for a pointer write.
 */
enum DfStatus df_open(const char *data_dir, uint64_t snapshot_every, struct DfEngine **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `e` is null or a live handle from [`df_open`]; it must not be used again.
 */
void df_close(struct DfEngine *e);

/**
 * Installs the default hierarchies and routes.
 *
 * # Safety
 * `e` is a live handle; the counters are null or valid for writes.
 */
enum DfStatus df_init(const struct DfEngine *e, uint64_t *applied, uint64_t *skipped);

/**
 * Loads fixture text; entities that already exist are skipped.
 *
 * # Safety
 * `e` is a live handle, `fixture_text` a NUL-terminated string, the
 * counters null or valid for writes.
 */
enum DfStatus df_load_fixture(const struct DfEngine *e,
                              const char *fixture_text,
                              uint64_t *applied,
                              uint64_t *skipped);

/**
 * Stores content and returns its hex digest for use in commands.
 *
 * # Safety
 * `bytes` points to `len` readable bytes (or is null with `len` 0);
 * `out_digest` is valid for a pointer write.
 */
enum DfStatus df_put_blob(const struct DfEngine *e,
                          const uint8_t *bytes,
                          size_t len,
                          char **out_digest);

/**
 * Submits one command, given as the JSON object the HTTP audit log shows
 * under `payload`. `actor` is a user name, id, or `system`.
 *
 * On success `out_json` receives `{"seq":..,"data":..}`; on a refusal it
 * receives `{"seq":..,"reason":..,"deny":..,"message":..}`.
 *
 * # Safety
 * `e` is a live handle; `actor` and `command_json` are NUL-terminated;
 * `out_json` is null or valid for a pointer write.
 */
enum DfStatus df_submit(const struct DfEngine *e,
                        const char *actor_name,
                        const char *command_json,
                        char **out_json);

/**
 * Decides `action` for `actor` on a document; `out_decision` receives
 * `Allow` or `Deny(<reason>)`.
 *
 * # Safety
 * `e` is a live handle; strings are NUL-terminated; `out_decision` is valid
 * for a pointer write.
 */
enum DfStatus df_check_access(const struct DfEngine *e,
                              const char *actor_name,
                              uint64_t doc,
                              const char *action,
                              char **out_decision);

/**
 * Searches documents readable by `actor`. `query_json` may be null or an
 * object with optional `class`, `title`, `author` and `archived` keys;
 * `out_json` receives an array of document ids.
 *
 * # Safety
 * `e` is a live handle; strings are NUL-terminated or (for the query) null;
 * `out_json` is valid for a pointer write.
 */
enum DfStatus df_search(const struct DfEngine *e,
                        const char *actor_name,
                        const char *query_json,
                        char **out_json);

/**
 * Current sequence number and state digest.
 *
 * # Safety
 * `e` is a live handle; `out_seq` is null or writable; `out_digest` is valid
 * for a pointer write.
 */
enum DfStatus df_digest(const struct DfEngine *e, uint64_t *out_seq, char **out_digest);

/**
 * Writes a snapshot of the current state.
 *
 * # Safety
 * `e` is a live handle.
 */
enum DfStatus df_snapshot(const struct DfEngine *e);

/**
 * Message for the last failure on this thread, or null. Valid until the
 * next `df_` call on the same thread; do not free.
 */
const char *df_last_error(void);

/**
 * Frees a string returned through an `out` parameter. Null is ignored.
 *
 * # Safety
 * `s` is null or came from this library and has not been freed.
 */
void df_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOCFLOW_H */
