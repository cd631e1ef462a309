//! C ABI over the agentic file system.
//!
//! Conventions:
//!
//! - A session is an opaque [`AfsHandle`] created by `afs_open` and
//!   released by `afs_close`.
//! - Every fallible call returns an `AfsStatus` (0 success; 1 user
//!   error; 2 access denied; 3 internal). The precise error code name
//!   and message for the last failure on a handle come from
//!   `afs_last_error_code` / `afs_last_error_message`.
//! - Structured results come back as JSON in a newly allocated C
//!   string owned by the caller until passed to `afs_string_free`.
//!   Binary reads use `afs_bytes_free`.
//!
//! The generated header lives at `include/afs.h`.
//!
//! # Safety
//!
//! All functions are `unsafe` in the usual FFI sense: every pointer
//! argument must be valid for the call (strings NUL-terminated, buffers
//! covering their stated length, out-pointers writable), handles must
//! come from `afs_open` and not be used after `afs_close`, and strings
//! and buffers returned by this library must be released exactly once
//! through `afs_string_free` / `afs_bytes_free`.

// The safety contract above applies uniformly; per-function repetition
// adds nothing.
#![allow(clippy::missing_safety_doc)]

use std::collections::BTreeMap;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::ptr;
use std::sync::Mutex;

use afs_core::afs::Caller;
use afs_core::backend::MountOptions;
use afs_core::backends::dir::DirBackendConfig;
use afs_core::backends::tool::ToolProcessConfig;
use afs_core::config::AfsConfig;
use afs_core::error::{AfsError, Result};
use afs_core::path::AfsPath;
use afs_core::pipeline::TokenBudget;
use afs_core::repository::Origin;
use afs_core::system::AfsSystem;
use afs_core::SearchMode;

/// Opaque session handle.
#[repr(C)]
pub struct AfsHandle {
    _private: [u8; 0],
}

struct HandleInner {
    system: AfsSystem,
    caller: Caller,
    last_error: Mutex<Option<AfsError>>,
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum AfsStatus {
    Ok = 0,
    UserError = 1,
    AccessDenied = 2,
    Internal = 3,
    /// Null handle or null required argument.
    BadArgument = 4,
}

fn status_of(err: &AfsError) -> AfsStatus {
    match err.exit_code() {
        2 => AfsStatus::AccessDenied,
        3 => AfsStatus::Internal,
        _ => AfsStatus::UserError,
    }
}

fn inner<'a>(handle: *mut AfsHandle) -> Option<&'a HandleInner> {
    if handle.is_null() {
        return None;
    }
    // SAFETY: handles are created exclusively by afs_open below.
    Some(unsafe { &*(handle as *mut HandleInner) })
}

fn set_error(inner: &HandleInner, err: AfsError) -> AfsStatus {
    let status = status_of(&err);
    *inner.last_error.lock().expect("error slot") = Some(err);
    status
}

fn take_str<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    // SAFETY: caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(ptr) }.to_str().ok()
}

fn give_string(out: *mut *mut c_char, text: String) -> AfsStatus {
    if out.is_null() {
        return AfsStatus::BadArgument;
    }
    match CString::new(text) {
        Ok(cstring) => {
            // SAFETY: out is a valid pointer per the contract.
            unsafe { *out = cstring.into_raw() };
            AfsStatus::Ok
        }
        Err(_) => AfsStatus::Internal,
    }
}

fn complete<T: serde::Serialize>(
    handle: &HandleInner,
    out: *mut *mut c_char,
    result: Result<T>,
) -> AfsStatus {
    match result {
        Ok(value) => match serde_json::to_string_pretty(&value) {
            Ok(json) => give_string(out, json),
            Err(e) => set_error(handle, AfsError::StoreFailure { reason: format!("serialize result: {e}") }),
        },
        Err(err) => set_error(handle, err),
    }
}

/// Opens (or creates) a store and returns a session handle; NULL on
/// failure. `store_url` is `file:<dir>`; `provider` is `stub` or
/// `external:<command>` (NULL for stub); `clock` is `logical` or
/// `system` (NULL for logical).
#[no_mangle]
pub unsafe extern "C" fn afs_open(
    store_url: *const c_char,
    provider: *const c_char,
    clock: *const c_char,
) -> *mut AfsHandle {
    let Some(store_url) = take_str(store_url) else { return ptr::null_mut() };
    let mut config = AfsConfig::default();
    config.store.url = store_url.to_string();
    if let Some(provider) = take_str(provider) {
        if !provider.is_empty() {
            config.provider.kind = provider.to_string();
        }
    }
    if let Some(clock) = take_str(clock) {
        if !clock.is_empty() {
            config.clock.kind = clock.to_string();
        }
    }
    match AfsSystem::open(&config) {
        Ok(system) => {
            let inner = Box::new(HandleInner {
                system,
                caller: Caller::human(),
                last_error: Mutex::new(None),
            });
            Box::into_raw(inner) as *mut AfsHandle
        }
        Err(_) => ptr::null_mut(),
    }
}

/// Releases a handle. NULL is tolerated.
#[no_mangle]
pub unsafe extern "C" fn afs_close(handle: *mut AfsHandle) {
    if handle.is_null() {
        return;
    }
    // SAFETY: handle came from afs_open and is not used afterwards.
    drop(unsafe { Box::from_raw(handle as *mut HandleInner) });
}

/// Frees a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn afs_string_free(text: *mut c_char) {
    if text.is_null() {
        return;
    }
    // SAFETY: text was produced by CString::into_raw in this library.
    drop(unsafe { CString::from_raw(text) });
}

/// Frees a byte buffer returned by `afs_read`.
#[no_mangle]
pub unsafe extern "C" fn afs_bytes_free(bytes: *mut u8, len: usize) {
    if bytes.is_null() {
        return;
    }
    // SAFETY: buffer was produced by Vec::into_raw_parts-style leak below.
    drop(unsafe { Vec::from_raw_parts(bytes, len, len) });
}

/// Machine-readable code of the last error on this handle (e.g.
/// `NotFound`), or an empty string.
#[no_mangle]
pub unsafe extern "C" fn afs_last_error_code(handle: *mut AfsHandle, out: *mut *mut c_char) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let code = inner
        .last_error
        .lock()
        .expect("error slot")
        .as_ref()
        .map(|e| e.code().to_string())
        .unwrap_or_default();
    give_string(out, code)
}

/// Human-readable message of the last error on this handle.
#[no_mangle]
pub unsafe extern "C" fn afs_last_error_message(handle: *mut AfsHandle, out: *mut *mut c_char) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let message = inner
        .last_error
        .lock()
        .expect("error slot")
        .as_ref()
        .map(|e| e.to_string())
        .unwrap_or_default();
    give_string(out, message)
}

/// Lists descendants of `path` within `depth` as a JSON array of
/// `{path, kind, revisionId, size, createdAt, modifiedAt}`.
#[no_mangle]
pub unsafe extern "C" fn afs_list(
    handle: *mut AfsHandle,
    path: *const c_char,
    depth: usize,
    out_json: *mut *mut c_char,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let Some(path) = take_str(path) else { return AfsStatus::BadArgument };
    let result = AfsPath::parse(path).and_then(|path| {
        let items = inner.system.afs().list(&inner.caller, &path, depth)?;
        let rows: Vec<serde_json::Value> = items
            .into_iter()
            .map(|(p, meta)| {
                let mut value = serde_json::to_value(&meta).expect("metadata serializes");
                value["path"] = serde_json::Value::String(p.to_string());
                value
            })
            .collect();
        Ok(rows)
    });
    complete(inner, out_json, result)
}

/// Reads a node's content. The buffer is owned by the caller until
/// `afs_bytes_free`.
#[no_mangle]
pub unsafe extern "C" fn afs_read(
    handle: *mut AfsHandle,
    path: *const c_char,
    out_bytes: *mut *mut u8,
    out_len: *mut usize,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let Some(path) = take_str(path) else { return AfsStatus::BadArgument };
    if out_bytes.is_null() || out_len.is_null() {
        return AfsStatus::BadArgument;
    }
    match AfsPath::parse(path).and_then(|p| inner.system.afs().read(&inner.caller, &p)) {
        Ok((bytes, _meta)) => {
            let mut bytes = bytes.into_boxed_slice();
            // SAFETY: out pointers are valid per the contract.
            unsafe {
                *out_len = bytes.len();
                *out_bytes = bytes.as_mut_ptr();
            }
            std::mem::forget(bytes);
            AfsStatus::Ok
        }
        Err(err) => set_error(inner, err),
    }
}

/// Writes a data node. `attrs_json` is an optional JSON object of
/// string attributes. Returns the new metadata as JSON.
#[no_mangle]
pub unsafe extern "C" fn afs_write(
    handle: *mut AfsHandle,
    path: *const c_char,
    bytes: *const u8,
    len: usize,
    attrs_json: *const c_char,
    out_meta_json: *mut *mut c_char,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let Some(path) = take_str(path) else { return AfsStatus::BadArgument };
    if bytes.is_null() && len > 0 {
        return AfsStatus::BadArgument;
    }
    // SAFETY: caller guarantees `bytes` covers `len` readable bytes.
    let content = if len == 0 { &[][..] } else { unsafe { std::slice::from_raw_parts(bytes, len) } };
    let attrs: BTreeMap<String, String> = match take_str(attrs_json) {
        Some(text) if !text.is_empty() => match serde_json::from_str(text) {
            Ok(attrs) => attrs,
            Err(e) => {
                return set_error(
                    inner,
                    AfsError::ConfigError { reason: format!("attrs must be a JSON string map: {e}") },
                )
            }
        },
        _ => BTreeMap::new(),
    };
    let result = AfsPath::parse(path)
        .and_then(|p| inner.system.afs().write(&inner.caller, &p, content, &attrs));
    complete(inner, out_meta_json, result)
}

/// Node metadata as JSON.
#[no_mangle]
pub unsafe extern "C" fn afs_stat(
    handle: *mut AfsHandle,
    path: *const c_char,
    out_json: *mut *mut c_char,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let Some(path) = take_str(path) else { return AfsStatus::BadArgument };
    let result = AfsPath::parse(path).and_then(|p| inner.system.afs().stat(&inner.caller, &p));
    complete(inner, out_json, result)
}

/// Sets one user attribute; returns the new metadata as JSON.
#[no_mangle]
pub unsafe extern "C" fn afs_set_attr(
    handle: *mut AfsHandle,
    path: *const c_char,
    key: *const c_char,
    value: *const c_char,
    out_json: *mut *mut c_char,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let (Some(path), Some(key), Some(value)) = (take_str(path), take_str(key), take_str(value)) else {
        return AfsStatus::BadArgument;
    };
    let result =
        AfsPath::parse(path).and_then(|p| inner.system.afs().set_attr(&inner.caller, &p, key, value));
    complete(inner, out_json, result)
}

/// Searches under `path`. `mode` is `substring`, `regex` or `semantic`.
/// Returns a JSON array of `{path, score, snippet}` ranked hits.
#[no_mangle]
pub unsafe extern "C" fn afs_search(
    handle: *mut AfsHandle,
    path: *const c_char,
    query: *const c_char,
    mode: *const c_char,
    limit: usize,
    out_json: *mut *mut c_char,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let (Some(path), Some(query), Some(mode)) = (take_str(path), take_str(query), take_str(mode)) else {
        return AfsStatus::BadArgument;
    };
    let result = AfsPath::parse(path).and_then(|p| {
        let mode: SearchMode = mode.parse()?;
        inner.system.afs().search(&inner.caller, &p, query, mode, limit)
    });
    complete(inner, out_json, result)
}

/// Executes an executable node with a JSON object of arguments. Returns
/// `{"result": ..., "eventId": ...}` as JSON.
#[no_mangle]
pub unsafe extern "C" fn afs_exec(
    handle: *mut AfsHandle,
    path: *const c_char,
    args_json: *const c_char,
    out_json: *mut *mut c_char,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let Some(path) = take_str(path) else { return AfsStatus::BadArgument };
    let args: BTreeMap<String, serde_json::Value> = match take_str(args_json) {
        Some(text) if !text.is_empty() => match serde_json::from_str(text) {
            Ok(args) => args,
            Err(e) => {
                return set_error(
                    inner,
                    AfsError::ConfigError { reason: format!("args must be a JSON object: {e}") },
                )
            }
        },
        _ => BTreeMap::new(),
    };
    let result = AfsPath::parse(path).and_then(|p| {
        let (result, event_id) = inner.system.afs().exec(&inner.caller, &p, &args)?;
        Ok(serde_json::json!({ "result": result, "eventId": event_id }))
    });
    complete(inner, out_json, result)
}

/// Mounts a host directory at `root`.
#[no_mangle]
pub unsafe extern "C" fn afs_mount_dir(
    handle: *mut AfsHandle,
    root: *const c_char,
    host_root: *const c_char,
    follow_symlinks: bool,
    read_only: bool,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let (Some(root), Some(host_root)) = (take_str(root), take_str(host_root)) else {
        return AfsStatus::BadArgument;
    };
    let result = AfsPath::parse(root).and_then(|root| {
        inner.system.mount_dir(
            &inner.caller,
            &root,
            DirBackendConfig { host_root: host_root.into(), follow_symlinks },
            MountOptions { read_only, ..MountOptions::default() },
        )
    });
    match result {
        Ok(()) => AfsStatus::Ok,
        Err(err) => set_error(inner, err),
    }
}

/// Spawns and mounts a tool process at `root`. `args_json` is a JSON
/// array of strings, `env_json` a JSON object of strings; both optional.
#[no_mangle]
pub unsafe extern "C" fn afs_mount_tool(
    handle: *mut AfsHandle,
    root: *const c_char,
    command: *const c_char,
    args_json: *const c_char,
    env_json: *const c_char,
    handshake_timeout_ms: u64,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let (Some(root), Some(command)) = (take_str(root), take_str(command)) else {
        return AfsStatus::BadArgument;
    };
    let args: Vec<String> = match take_str(args_json) {
        Some(text) if !text.is_empty() => match serde_json::from_str(text) {
            Ok(args) => args,
            Err(e) => {
                return set_error(
                    inner,
                    AfsError::ConfigError { reason: format!("args must be a JSON string array: {e}") },
                )
            }
        },
        _ => Vec::new(),
    };
    let env: BTreeMap<String, String> = match take_str(env_json) {
        Some(text) if !text.is_empty() => match serde_json::from_str(text) {
            Ok(env) => env,
            Err(e) => {
                return set_error(
                    inner,
                    AfsError::ConfigError { reason: format!("env must be a JSON string map: {e}") },
                )
            }
        },
        _ => BTreeMap::new(),
    };
    let result = AfsPath::parse(root).and_then(|root| {
        inner.system.mount_tool(
            &inner.caller,
            &root,
            ToolProcessConfig {
                command: command.to_string(),
                args,
                env,
                handshake_timeout_ms: if handshake_timeout_ms == 0 { 5000 } else { handshake_timeout_ms },
            },
            MountOptions { read_only: true, ..MountOptions::default() },
        )
    });
    match result {
        Ok(()) => AfsStatus::Ok,
        Err(err) => set_error(inner, err),
    }
}

/// Unmounts the mount rooted at `root`.
#[no_mangle]
pub unsafe extern "C" fn afs_unmount(handle: *mut AfsHandle, root: *const c_char) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let Some(root) = take_str(root) else { return AfsStatus::BadArgument };
    match AfsPath::parse(root).and_then(|root| inner.system.unmount(&inner.caller, &root)) {
        Ok(()) => AfsStatus::Ok,
        Err(err) => set_error(inner, err),
    }
}

/// Appends a raw interaction to the immutable history. `origin` is
/// `user`, `agent`, `tool` or `human-reviewer`. Returns the record
/// (id, hashes, timestamps) as JSON.
#[no_mangle]
pub unsafe extern "C" fn afs_append_history(
    handle: *mut AfsHandle,
    origin: *const c_char,
    agent_id: *const c_char,
    session_id: *const c_char,
    model_version: *const c_char,
    payload: *const u8,
    payload_len: usize,
    out_json: *mut *mut c_char,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let (Some(origin), Some(agent_id)) = (take_str(origin), take_str(agent_id)) else {
        return AfsStatus::BadArgument;
    };
    if payload.is_null() && payload_len > 0 {
        return AfsStatus::BadArgument;
    }
    let session_id = take_str(session_id).unwrap_or("");
    let model_version = take_str(model_version).unwrap_or("");
    // SAFETY: caller guarantees payload covers payload_len bytes.
    let payload =
        if payload_len == 0 { &[][..] } else { unsafe { std::slice::from_raw_parts(payload, payload_len) } };
    let result = Origin::parse(origin)
        .map_err(|_| AfsError::ConfigError { reason: format!("unknown origin {origin:?}") })
        .and_then(|origin| {
            let record = inner.system.repository().append_history(
                &inner.caller,
                origin,
                agent_id,
                session_id,
                model_version,
                payload,
            )?;
            Ok(serde_json::json!({
                "recordId": record.record_id,
                "timestamp": record.timestamp,
                "origin": origin,
                "prevHash": record.prev_hash,
                "selfHash": record.self_hash,
                "path": record.namespace_path().to_string(),
            }))
        });
    complete(inner, out_json, result)
}

/// Builds a context manifest for `query` under the given scope and
/// budget; returns the manifest as JSON.
#[no_mangle]
pub unsafe extern "C" fn afs_construct_context(
    handle: *mut AfsHandle,
    query: *const c_char,
    agent_id: *const c_char,
    max_tokens: u64,
    reserved_for_response: u64,
    scope: *const c_char,
    out_json: *mut *mut c_char,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let (Some(query), Some(agent_id), Some(scope)) =
        (take_str(query), take_str(agent_id), take_str(scope)) else {
        return AfsStatus::BadArgument;
    };
    let budget = TokenBudget::new(max_tokens, reserved_for_response);
    let result =
        inner.system.pipeline().construct_context(&inner.caller, query, agent_id, &budget, scope);
    complete(inner, out_json, result)
}

/// Runs a session script (JSON array of user turns) and returns the
/// transcript as JSON.
#[no_mangle]
pub unsafe extern "C" fn afs_run_session(
    handle: *mut AfsHandle,
    script_json: *const c_char,
    agent_id: *const c_char,
    max_tokens: u64,
    reserved_for_response: u64,
    out_json: *mut *mut c_char,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let (Some(script), Some(agent_id)) = (take_str(script_json), take_str(agent_id)) else {
        return AfsStatus::BadArgument;
    };
    let turns: Vec<String> = match serde_json::from_str(script) {
        Ok(turns) => turns,
        Err(e) => {
            return set_error(
                inner,
                AfsError::ConfigError { reason: format!("script must be a JSON string array: {e}") },
            )
        }
    };
    let budget = TokenBudget::new(max_tokens, reserved_for_response);
    let result = inner.system.pipeline().run_session(&turns, agent_id, &budget);
    complete(inner, out_json, result)
}

/// Verifies the transaction log and the history hash chain. On success
/// writes the number of verified events.
#[no_mangle]
pub unsafe extern "C" fn afs_log_verify(handle: *mut AfsHandle, out_events: *mut u64) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    if out_events.is_null() {
        return AfsStatus::BadArgument;
    }
    let result = inner
        .system
        .afs()
        .provenance()
        .verify()
        .and_then(|events| inner.system.repository().verify_chain().map(|_| events));
    match result {
        Ok(events) => {
            // SAFETY: out_events is valid per the contract.
            unsafe { *out_events = events };
            AfsStatus::Ok
        }
        Err(err) => set_error(inner, err),
    }
}

/// Replays the transaction log up to `up_to` (0 = all events) and
/// returns the reconstructed state digest (64 hex chars).
#[no_mangle]
pub unsafe extern "C" fn afs_replay(
    handle: *mut AfsHandle,
    up_to: u64,
    out_digest: *mut *mut c_char,
) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    let limit = if up_to == 0 { None } else { Some(up_to) };
    match inner.system.afs().provenance().replay(limit) {
        Ok(digest) => give_string(out_digest, digest),
        Err(err) => set_error(inner, err),
    }
}

/// Digest of the live namespace (64 hex chars).
#[no_mangle]
pub unsafe extern "C" fn afs_state_digest(handle: *mut AfsHandle, out_digest: *mut *mut c_char) -> AfsStatus {
    let Some(inner) = inner(handle) else { return AfsStatus::BadArgument };
    match inner.system.state_digest() {
        Ok(digest) => give_string(out_digest, digest),
        Err(err) => set_error(inner, err),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cstr(text: &str) -> CString {
        CString::new(text).unwrap()
    }

    fn open_temp() -> (*mut AfsHandle, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let url = cstr(&format!("file:{}", dir.path().join("store").display()));
        let handle = unsafe { afs_open(url.as_ptr(), ptr::null(), ptr::null()) };
        assert!(!handle.is_null());
        (handle, dir)
    }

    fn read_out_string(out: *mut c_char) -> String {
        assert!(!out.is_null());
        let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
        unsafe { afs_string_free(out) };
        text
    }

    #[test]
    fn write_read_round_trip_over_the_c_abi() {
        let (handle, _dir) = open_temp();
        let path = cstr("/context/memory/alice/user/note1");
        let content = b"favorite_color=blue";
        let mut out_meta: *mut c_char = ptr::null_mut();
        let status = unsafe {
            afs_write(handle, path.as_ptr(), content.as_ptr(), content.len(), ptr::null(), &mut out_meta)
        };
        assert!(matches!(status, AfsStatus::Ok));
        let meta = read_out_string(out_meta);
        assert!(meta.contains("\"revisionId\": 1"));

        let mut bytes: *mut u8 = ptr::null_mut();
        let mut len: usize = 0;
        let status = unsafe { afs_read(handle, path.as_ptr(), &mut bytes, &mut len) };
        assert!(matches!(status, AfsStatus::Ok));
        let read = unsafe { std::slice::from_raw_parts(bytes, len) }.to_vec();
        unsafe { afs_bytes_free(bytes, len) };
        assert_eq!(read, content);
        unsafe { afs_close(handle) };
    }

    #[test]
    fn errors_carry_codes_and_messages() {
        let (handle, _dir) = open_temp();
        let path = cstr("/nowhere/at/all");
        let mut bytes: *mut u8 = ptr::null_mut();
        let mut len: usize = 0;
        let status = unsafe { afs_read(handle, path.as_ptr(), &mut bytes, &mut len) };
        assert!(matches!(status, AfsStatus::UserError));
        let mut out: *mut c_char = ptr::null_mut();
        assert!(matches!(unsafe { afs_last_error_code(handle, &mut out) }, AfsStatus::Ok));
        assert_eq!(read_out_string(out), "NotFound");
        let mut out: *mut c_char = ptr::null_mut();
        assert!(matches!(unsafe { afs_last_error_message(handle, &mut out) }, AfsStatus::Ok));
        assert!(read_out_string(out).contains("/nowhere/at/all"));
        unsafe { afs_close(handle) };
    }

    #[test]
    fn session_and_audit_over_the_c_abi() {
        let (handle, _dir) = open_temp();
        let script = cstr("[\"favorite_color=blue\",\"what are my preferences\"]");
        let agent = cstr("alice");
        let mut out: *mut c_char = ptr::null_mut();
        let status = unsafe {
            afs_run_session(handle, script.as_ptr(), agent.as_ptr(), 2048, 256, &mut out)
        };
        assert!(matches!(status, AfsStatus::Ok));
        let transcript = read_out_string(out);
        assert!(transcript.contains("favorite_color=blue"));

        let mut events: u64 = 0;
        assert!(matches!(unsafe { afs_log_verify(handle, &mut events) }, AfsStatus::Ok));
        assert!(events > 0);

        let mut live: *mut c_char = ptr::null_mut();
        assert!(matches!(unsafe { afs_state_digest(handle, &mut live) }, AfsStatus::Ok));
        let mut replayed: *mut c_char = ptr::null_mut();
        assert!(matches!(unsafe { afs_replay(handle, 0, &mut replayed) }, AfsStatus::Ok));
        assert_eq!(read_out_string(live), read_out_string(replayed));
        unsafe { afs_close(handle) };
    }

    #[test]
    fn null_arguments_are_rejected() {
        assert!(unsafe { afs_open(ptr::null(), ptr::null(), ptr::null()) }.is_null());
        let mut out: *mut c_char = ptr::null_mut();
        assert!(matches!(
            unsafe { afs_last_error_code(ptr::null_mut(), &mut out) },
            AfsStatus::BadArgument
        ));
        unsafe {
            afs_close(ptr::null_mut());
            afs_string_free(ptr::null_mut());
            afs_bytes_free(ptr::null_mut(), 0);
        }
    }
}
