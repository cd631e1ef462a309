/* C bindings for the agentic file system. Generated by cbindgen. */

#ifndef AFS_FFI_H
#define AFS_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum AfsStatus {
  AfsStatus_Ok = 0,
  AfsStatus_UserError = 1,
  AfsStatus_AccessDenied = 2,
  AfsStatus_Internal = 3,
  /**
   * Null handle or null required argument.
   */
  AfsStatus_BadArgument = 4,
} AfsStatus;

/**
 * Opaque session handle.
 */
typedef struct AfsHandle {
  uint8_t _private[0];
} AfsHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Opens (or creates) a store and returns a session handle; NULL on
 * failure. `store_url` is `file:<dir>`; `provider` is `stub` or
 * `external:<command>` (NULL for stub); `clock` is `logical` or
 * `system` (NULL for logical).
 */
struct AfsHandle *afs_open(const char *store_url, const char *provider, const char *clock);

/**
 * Releases a handle. NULL is tolerated.
 */
void afs_close(struct AfsHandle *handle);

/**
 * Frees a string returned by this library.
 */
void afs_string_free(char *text);

/**
 * Frees a byte buffer returned by `afs_read`.
 */
void afs_bytes_free(uint8_t *bytes, uintptr_t len);

/**
 * Machine-readable code of the last error on this handle (e.g.
 * `NotFound`), or an empty string.
 */
enum AfsStatus afs_last_error_code(struct AfsHandle *handle, char **out);

/**
 * Human-readable message of the last error on this handle.
 */
enum AfsStatus afs_last_error_message(struct AfsHandle *handle, char **out);

/**
 * Lists descendants of `path` within `depth` as a JSON array of
 * `{path, kind, revisionId, size, createdAt, modifiedAt}`.
 */
enum AfsStatus afs_list(struct AfsHandle *handle,
                        const char *path,
                        uintptr_t depth,
                        char **out_json);

/**
 * Reads a node's content. The buffer is owned by the caller until
 * `afs_bytes_free`.
 */
enum AfsStatus afs_read(struct AfsHandle *handle,
                        const char *path,
                        uint8_t **out_bytes,
                        uintptr_t *out_len);

/**
 * Writes a data node. `attrs_json` is an optional JSON object of
 * string attributes. Returns the new metadata as JSON.
 */
enum AfsStatus afs_write(struct AfsHandle *handle,
                         const char *path,
                         const uint8_t *bytes,
                         uintptr_t len,
                         const char *attrs_json,
                         char **out_meta_json);

/**
 * Node metadata as JSON.
 */
enum AfsStatus afs_stat(struct AfsHandle *handle, const char *path, char **out_json);

/**
 * Sets one user attribute; returns the new metadata as JSON.
 */
enum AfsStatus afs_set_attr(struct AfsHandle *handle,
                            const char *path,
                            const char *key,
                            const char *value,
                            char **out_json);

/**
 * Searches under `path`. `mode` is `substring`, `regex` or `semantic`.
 * Returns a JSON array of `{path, score, snippet}` ranked hits.
 */
enum AfsStatus afs_search(struct AfsHandle *handle,
                          const char *path,
                          const char *query,
                          const char *mode,
                          uintptr_t limit,
                          char **out_json);

/**
 * Executes an executable node with a JSON object of arguments. Returns
 * `{"result": ..., "eventId": ...}` as JSON.
 */
enum AfsStatus afs_exec(struct AfsHandle *handle,
                        const char *path,
                        const char *args_json,
                        char **out_json);

/**
 * Mounts a host directory at `root`.
 */
enum AfsStatus afs_mount_dir(struct AfsHandle *handle,
                             const char *root,
                             const char *host_root,
                             bool follow_symlinks,
                             bool read_only);

/**
 * Spawns and mounts a tool process at `root`. `args_json` is a JSON
 * array of strings, `env_json` a JSON object of strings; both optional.
 */
enum AfsStatus afs_mount_tool(struct AfsHandle *handle,
                              const char *root,
                              const char *command,
                              const char *args_json,
                              const char *env_json,
                              uint64_t handshake_timeout_ms);

/**
 * Unmounts the mount rooted at `root`.
 */
enum AfsStatus afs_unmount(struct AfsHandle *handle, const char *root);

/**
 * Appends a raw interaction to the immutable history. `origin` is
 * `user`, `agent`, `tool` or `human-reviewer`. Returns the record
 * (id, hashes, timestamps) as JSON.
 */
enum AfsStatus afs_append_history(struct AfsHandle *handle,
                                  const char *origin,
                                  const char *agent_id,
                                  const char *session_id,
                                  const char *model_version,
                                  const uint8_t *payload,
                                  uintptr_t payload_len,
                                  char **out_json);

/**
 * Builds a context manifest for `query` under the given scope and
 * budget; returns the manifest as JSON.
 */
enum AfsStatus afs_construct_context(struct AfsHandle *handle,
                                     const char *query,
                                     const char *agent_id,
                                     uint64_t max_tokens,
                                     uint64_t reserved_for_response,
                                     const char *scope,
                                     char **out_json);

/**
 * Runs a session script (JSON array of user turns) and returns the
 * transcript as JSON.
 */
enum AfsStatus afs_run_session(struct AfsHandle *handle,
                               const char *script_json,
                               const char *agent_id,
                               uint64_t max_tokens,
                               uint64_t reserved_for_response,
                               char **out_json);

/**
 * Verifies the transaction log and the history hash chain. On success
 * writes the number of verified events.
 */
enum AfsStatus afs_log_verify(struct AfsHandle *handle, uint64_t *out_events);

/**
 * Replays the transaction log up to `up_to` (0 = all events) and
 * returns the reconstructed state digest (64 hex chars).
 */
enum AfsStatus afs_replay(struct AfsHandle *handle, uint64_t up_to, char **out_digest);

/**
 * Digest of the live namespace (64 hex chars).
 */
enum AfsStatus afs_state_digest(struct AfsHandle *handle, char **out_digest);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* AFS_FFI_H */
