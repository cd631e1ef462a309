//! Backend contract.
//!
//! A backend projects some resource — a host directory, the embedded
//! store, in-process functions, an external tool process — as a tree of
//! nodes. Backends only ever see mount-relative paths; sandboxing,
//! access control and transaction logging happen in the dispatcher,
//! which is the only component allowed to call a backend.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::Value;

use crate::error::{AfsError, Result};
use crate::node::{FunctionDescriptor, NodeMetadata};
use crate::path::AfsPath;

/// A path as seen by a backend: `full` for error reporting, `rel` for
/// lookup inside the backend.
#[derive(Debug, Clone)]
pub struct ResolvedPath {
    pub full: AfsPath,
    pub rel: AfsPath,
}

impl ResolvedPath {
    pub fn full_text(&self) -> String {
        self.full.to_string()
    }
}

/// Everything the dispatcher needs to know about one node.
#[derive(Debug, Clone)]
pub struct NodeRecord {
    pub meta: NodeMetadata,
    /// Hash of the bytes `read` would return (empty hash for directories).
    pub content_hash: String,
    /// Present exactly when `meta.kind == Executable`.
    pub descriptor: Option<FunctionDescriptor>,
}

/// What a backend supports. The uniform operation contract still holds
/// for unsupported operations — they fail with the documented error
/// instead of succeeding.
#[derive(Debug, Clone, Copy)]
pub struct BackendCaps {
    pub writable: bool,
    pub executable: bool,
}

pub trait Backend: Send + Sync {
    fn caps(&self) -> BackendCaps;

    /// Node record at `rel`; `NotFound` when absent.
    fn node(&self, path: &ResolvedPath) -> Result<NodeRecord>;

    /// Sorted child names of a directory node. `NotFound` when absent,
    /// empty for non-directories.
    fn children(&self, path: &ResolvedPath) -> Result<Vec<String>>;

    fn read(&self, path: &ResolvedPath) -> Result<Vec<u8>>;

    fn write(
        &self,
        path: &ResolvedPath,
        content: &[u8],
        attrs: &BTreeMap<String, String>,
        scope: &str,
        now: u64,
    ) -> Result<NodeMetadata> {
        let _ = (content, attrs, scope, now);
        Err(AfsError::ReadOnlyMount { path: path.full_text() })
    }

    fn set_attr(
        &self,
        path: &ResolvedPath,
        key: &str,
        value: &str,
        now: u64,
    ) -> Result<NodeMetadata> {
        let _ = (key, value, now);
        Err(AfsError::ReadOnlyMount { path: path.full_text() })
    }

    fn exec(
        &self,
        path: &ResolvedPath,
        args: &BTreeMap<String, Value>,
        timeout_ms: u64,
    ) -> Result<BTreeMap<String, Value>> {
        let _ = (args, timeout_ms);
        Err(AfsError::NotExecutable { path: path.full_text() })
    }
}

pub type BackendHandle = Arc<dyn Backend>;

/// Per-mount options.
#[derive(Debug, Clone)]
pub struct MountOptions {
    pub read_only: bool,
    pub max_depth: usize,
    pub exec_timeout_ms: u64,
}

pub const DEFAULT_MAX_DEPTH: usize = 16;
pub const DEFAULT_EXEC_TIMEOUT_MS: u64 = 10_000;

impl Default for MountOptions {
    fn default() -> Self {
        MountOptions {
            read_only: false,
            max_depth: DEFAULT_MAX_DEPTH,
            exec_timeout_ms: DEFAULT_EXEC_TIMEOUT_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MountId(pub u64);

pub struct MountPoint {
    pub id: MountId,
    pub root: AfsPath,
    pub backend: BackendHandle,
    pub options: MountOptions,
}

/// Mount table with longest-prefix resolution.
#[derive(Default)]
pub struct MountTable {
    mounts: Vec<MountPoint>,
    next_id: u64,
}

pub enum Resolution<'a> {
    /// Longest-prefix mount covering the path.
    Mounted { mount: &'a MountPoint, rel: AfsPath },
    /// Proper prefix of at least one mount root (or the namespace root):
    /// a synthesized directory.
    Virtual,
    Unresolved,
}

impl MountTable {
    pub fn add(&mut self, root: AfsPath, backend: BackendHandle, options: MountOptions) -> Result<MountId> {
        if root.is_root() {
            return Err(AfsError::InvalidPath {
                path: "/".to_string(),
                reason: "the namespace root is reserved and cannot be a mount root".into(),
            });
        }
        if self.mounts.iter().any(|m| m.root == root) {
            return Err(AfsError::DuplicateMount { root: root.to_string() });
        }
        self.next_id += 1;
        let id = MountId(self.next_id);
        self.mounts.push(MountPoint { id, root, backend, options });
        Ok(id)
    }

    pub fn remove(&mut self, id: MountId) -> Result<MountPoint> {
        let idx = self
            .mounts
            .iter()
            .position(|m| m.id == id)
            .ok_or_else(|| AfsError::UnknownMount { what: format!("mount id {}", id.0) })?;
        Ok(self.mounts.remove(idx))
    }

    pub fn id_of_root(&self, root: &AfsPath) -> Result<MountId> {
        self.mounts
            .iter()
            .find(|m| &m.root == root)
            .map(|m| m.id)
            .ok_or_else(|| AfsError::UnknownMount { what: root.to_string() })
    }

    pub fn mounts(&self) -> &[MountPoint] {
        &self.mounts
    }

    pub fn resolve(&self, path: &AfsPath) -> Resolution<'_> {
        let mut best: Option<&MountPoint> = None;
        for mount in &self.mounts {
            if path.starts_with(&mount.root) {
                match best {
                    Some(b) if b.root.depth() >= mount.root.depth() => {}
                    _ => best = Some(mount),
                }
            }
        }
        if let Some(mount) = best {
            let rel = path.strip_prefix(&mount.root).expect("prefix checked");
            return Resolution::Mounted { mount, rel };
        }
        if path.is_root() || self.mounts.iter().any(|m| m.root.starts_with(path) && m.root != *path) {
            return Resolution::Virtual;
        }
        Resolution::Unresolved
    }

    /// Child names contributed by mount roots directly beneath `path`.
    pub fn mount_child_names(&self, path: &AfsPath) -> Vec<String> {
        let mut names: Vec<String> = self
            .mounts
            .iter()
            .filter(|m| m.root.starts_with(path) && m.root.depth() > path.depth())
            .map(|m| m.root.segments()[path.depth()].clone())
            .collect();
        names.sort();
        names.dedup();
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct NullBackend;
    impl Backend for NullBackend {
        fn caps(&self) -> BackendCaps {
            BackendCaps { writable: false, executable: false }
        }
        fn node(&self, path: &ResolvedPath) -> Result<NodeRecord> {
            Err(AfsError::NotFound { path: path.full_text() })
        }
        fn children(&self, _path: &ResolvedPath) -> Result<Vec<String>> {
            Ok(vec![])
        }
        fn read(&self, path: &ResolvedPath) -> Result<Vec<u8>> {
            Err(AfsError::NotFound { path: path.full_text() })
        }
    }

    fn p(text: &str) -> AfsPath {
        AfsPath::parse(text).unwrap()
    }

    #[test]
    fn longest_prefix_wins() {
        let mut table = MountTable::default();
        table.add(p("/a"), Arc::new(NullBackend), MountOptions::default()).unwrap();
        let inner = table.add(p("/a/b"), Arc::new(NullBackend), MountOptions::default()).unwrap();
        match table.resolve(&p("/a/b/c")) {
            Resolution::Mounted { mount, rel } => {
                assert_eq!(mount.id, inner);
                assert_eq!(rel.to_string(), "/c");
            }
            _ => panic!("expected mounted resolution"),
        }
    }

    #[test]
    fn duplicate_and_root_mounts_rejected() {
        let mut table = MountTable::default();
        table.add(p("/a"), Arc::new(NullBackend), MountOptions::default()).unwrap();
        let err = table.add(p("/a"), Arc::new(NullBackend), MountOptions::default()).unwrap_err();
        assert_eq!(err.code(), "DuplicateMount");
        let err = table.add(AfsPath::root(), Arc::new(NullBackend), MountOptions::default()).unwrap_err();
        assert_eq!(err.code(), "InvalidPath");
    }

    #[test]
    fn virtual_prefixes_resolve_to_directories() {
        let mut table = MountTable::default();
        table.add(p("/context/history"), Arc::new(NullBackend), MountOptions::default()).unwrap();
        assert!(matches!(table.resolve(&p("/context")), Resolution::Virtual));
        assert!(matches!(table.resolve(&AfsPath::root()), Resolution::Virtual));
        assert!(matches!(table.resolve(&p("/elsewhere")), Resolution::Unresolved));
        assert_eq!(table.mount_child_names(&p("/context")), vec!["history".to_string()]);
    }

    #[test]
    fn unmount_leaves_other_mounts_resolvable() {
        // Oracle: replay the mount table by hand — after removing /a,
        // /b must still resolve and /a must not.
        let mut table = MountTable::default();
        let a = table.add(p("/a"), Arc::new(NullBackend), MountOptions::default()).unwrap();
        table.add(p("/b"), Arc::new(NullBackend), MountOptions::default()).unwrap();
        table.remove(a).unwrap();
        assert!(matches!(table.resolve(&p("/a/x")), Resolution::Unresolved));
        assert!(matches!(table.resolve(&p("/b/x")), Resolution::Mounted { .. }));
        assert_eq!(table.remove(a).err().expect("expected error").code(), "UnknownMount");
    }
}
