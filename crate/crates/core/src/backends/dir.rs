//! Host directory backend.
//!
//! Projects a host directory as data/directory nodes. Resolution is
//! sandboxed: resolved host paths are re-checked after canonicalization
//! and must stay under the host root; with `follow_symlinks = false`
//! (the default) any symlink component denies access.
//!
//! Host files carry no revision history or user attributes, so both are
//! tracked per backend instance: revisions count writes made through
//! this process (pre-existing files report revision 1) and attributes
//! live in a sidecar map. The embedded store is the durable backend;
//! this one is a projection.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;
use std::time::UNIX_EPOCH;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendCaps, NodeRecord, ResolvedPath};
use crate::digest::{sha256_hex, EMPTY_SHA256};
use crate::error::{AfsError, Result};
use crate::node::{NodeKind, NodeMetadata};
use crate::path::AfsPath;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirBackendConfig {
    #[serde(rename = "hostRoot")]
    pub host_root: PathBuf,
    #[serde(rename = "followSymlinks", default)]
    pub follow_symlinks: bool,
}

pub struct DirBackend {
    canonical_root: PathBuf,
    follow_symlinks: bool,
    overlay: RwLock<DirOverlay>,
}

#[derive(Default)]
struct DirOverlay {
    revisions: BTreeMap<AfsPath, u64>,
    attrs: BTreeMap<AfsPath, BTreeMap<String, String>>,
}

fn mtime_ms(meta: &fs::Metadata) -> u64 {
    meta.modified()
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn created_ms(meta: &fs::Metadata) -> u64 {
    // Birth time when the platform has it, mtime otherwise.
    meta.created()
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .map(|d| d.as_millis() as u64)
        .unwrap_or_else(|| mtime_ms(meta))
}

impl DirBackend {
    pub fn new(config: DirBackendConfig) -> Result<DirBackend> {
        let canonical_root = fs::canonicalize(&config.host_root).map_err(|_| {
            AfsError::HostRootMissing { host_root: config.host_root.display().to_string() }
        })?;
        if !canonical_root.is_dir() {
            return Err(AfsError::HostRootMissing {
                host_root: config.host_root.display().to_string(),
            });
        }
        Ok(DirBackend {
            canonical_root,
            follow_symlinks: config.follow_symlinks,
            overlay: RwLock::new(DirOverlay::default()),
        })
    }

    /// Maps a relative namespace path to a host path, enforcing the
    /// sandbox. Missing final components are allowed (for writes);
    /// symlinks are rejected unless configured otherwise.
    fn host_path(&self, path: &ResolvedPath, must_exist: bool) -> Result<PathBuf> {
        let mut host = self.canonical_root.clone();
        for (i, seg) in path.rel.segments().iter().enumerate() {
            host.push(seg);
            match fs::symlink_metadata(&host) {
                Ok(meta) => {
                    if meta.file_type().is_symlink() && !self.follow_symlinks {
                        return Err(AfsError::AccessDenied {
                            path: path.full_text(),
                            right: "read".into(),
                            reason: "symlinks are not followed under this mount".into(),
                        });
                    }
                }
                Err(_) if must_exist => {
                    return Err(AfsError::NotFound { path: path.full_text() });
                }
                Err(_) => {
                    // Writes may create the remaining components. The
                    // segment grammar has no separators or traversal, so
                    // the appended suffix cannot escape the root.
                    for rest in &path.rel.segments()[i + 1..] {
                        host.push(rest);
                    }
                    return Ok(host);
                }
            }
        }
        // Canonicalize and re-check containment after symlink policy.
        let canonical = fs::canonicalize(&host)
            .map_err(|_| AfsError::NotFound { path: path.full_text() })?;
        if !canonical.starts_with(&self.canonical_root) {
            return Err(AfsError::AccessDenied {
                path: path.full_text(),
                right: "read".into(),
                reason: "resolved host path escapes the mount root".into(),
            });
        }
        Ok(canonical)
    }

    fn record_for(&self, path: &ResolvedPath, host: &Path) -> Result<NodeRecord> {
        let meta = fs::metadata(host).map_err(|_| AfsError::NotFound { path: path.full_text() })?;
        let overlay = self.overlay.read().expect("dir overlay lock");
        let revision_id = overlay.revisions.get(&path.rel).copied().unwrap_or(1);
        let user_attrs = overlay.attrs.get(&path.rel).cloned().unwrap_or_default();
        let (kind, size, content_hash) = if meta.is_dir() {
            (NodeKind::Directory, 0, EMPTY_SHA256.to_string())
        } else {
            let bytes = fs::read(host).map_err(|e| AfsError::store_io("read host file", e))?;
            (NodeKind::Data, meta.len(), sha256_hex(&bytes))
        };
        Ok(NodeRecord {
            meta: NodeMetadata {
                created_at: created_ms(&meta),
                modified_at: mtime_ms(&meta),
                size,
                kind,
                source_id: None,
                revision_id,
                access_scope: "system".to_string(),
                user_attrs,
                archived: false,
            },
            content_hash,
            descriptor: None,
        })
    }
}

impl Backend for DirBackend {
    fn caps(&self) -> BackendCaps {
        BackendCaps { writable: true, executable: false }
    }

    fn node(&self, path: &ResolvedPath) -> Result<NodeRecord> {
        let host = self.host_path(path, true)?;
        self.record_for(path, &host)
    }

    fn children(&self, path: &ResolvedPath) -> Result<Vec<String>> {
        let host = self.host_path(path, true)?;
        if !host.is_dir() {
            return Ok(vec![]);
        }
        let mut names = Vec::new();
        let entries = fs::read_dir(&host).map_err(|e| AfsError::store_io("read host dir", e))?;
        for entry in entries {
            let entry = entry.map_err(|e| AfsError::store_io("read host dir", e))?;
            if let Some(name) = entry.file_name().to_str() {
                // Only names representable in the path grammar are projected.
                if AfsPath::root().child(name).is_ok() {
                    names.push(name.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    fn read(&self, path: &ResolvedPath) -> Result<Vec<u8>> {
        let host = self.host_path(path, true)?;
        if host.is_dir() {
            return Err(AfsError::IsDirectory { path: path.full_text() });
        }
        fs::read(&host).map_err(|e| AfsError::store_io("read host file", e))
    }

    fn write(
        &self,
        path: &ResolvedPath,
        content: &[u8],
        attrs: &BTreeMap<String, String>,
        _scope: &str,
        _now: u64,
    ) -> Result<NodeMetadata> {
        if path.rel.is_root() {
            return Err(AfsError::IsDirectory { path: path.full_text() });
        }
        for key in attrs.keys() {
            if key.is_empty() {
                return Err(AfsError::SchemaViolation {
                    path: path.full_text(),
                    reason: "attribute keys must be nonempty".into(),
                });
            }
        }
        let host = self.host_path(path, false)?;
        if host.is_dir() {
            return Err(AfsError::IsDirectory { path: path.full_text() });
        }
        let existed_before = host.exists();
        if let Some(parent) = host.parent() {
            fs::create_dir_all(parent).map_err(|e| AfsError::store_io("create host dirs", e))?;
        }
        fs::write(&host, content).map_err(|e| AfsError::store_io("write host file", e))?;
        {
            let mut overlay = self.overlay.write().expect("dir overlay lock");
            let next = match overlay.revisions.get(&path.rel) {
                // Pre-existing host files report implicit revision 1.
                Some(rev) => rev + 1,
                None if existed_before => 2,
                None => 1,
            };
            overlay.revisions.insert(path.rel.clone(), next);
            let slot = overlay.attrs.entry(path.rel.clone()).or_default();
            for (k, v) in attrs {
                slot.insert(k.clone(), v.clone());
            }
        }
        self.node(path).map(|r| r.meta)
    }

    fn set_attr(&self, path: &ResolvedPath, key: &str, value: &str, _now: u64) -> Result<NodeMetadata> {
        if key.is_empty() {
            return Err(AfsError::SchemaViolation {
                path: path.full_text(),
                reason: "attribute keys must be nonempty".into(),
            });
        }
        // Ensure the node exists first.
        let _ = self.node(path)?;
        {
            let mut overlay = self.overlay.write().expect("dir overlay lock");
            overlay
                .attrs
                .entry(path.rel.clone())
                .or_default()
                .insert(key.to_string(), value.to_string());
            let rev = overlay.revisions.entry(path.rel.clone()).or_insert(1);
            *rev += 1;
        }
        self.node(path).map(|r| r.meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rp(text: &str) -> ResolvedPath {
        let rel = AfsPath::parse(text).unwrap();
        ResolvedPath { full: AfsPath::parse("/docs").unwrap().join(&rel), rel }
    }

    fn backend(dir: &Path) -> DirBackend {
        DirBackend::new(DirBackendConfig { host_root: dir.to_path_buf(), follow_symlinks: false })
            .unwrap()
    }

    #[test]
    fn missing_root_is_reported() {
        let err = DirBackend::new(DirBackendConfig {
            host_root: PathBuf::from("/definitely/not/here"),
            follow_symlinks: false,
        })
        .err()
        .expect("expected error");
        assert_eq!(err.code(), "HostRootMissing");
    }

    #[test]
    fn projects_files_and_directories() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), b"alpha").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/b.txt"), b"beta!").unwrap();
        let backend = backend(dir.path());

        assert_eq!(backend.children(&rp("/")).unwrap(), vec!["a.txt", "sub"]);
        let node = backend.node(&rp("/a.txt")).unwrap();
        assert_eq!(node.meta.kind, NodeKind::Data);
        // Oracle: node size equals the host file byte count.
        assert_eq!(node.meta.size, fs::metadata(dir.path().join("a.txt")).unwrap().len());
        assert_eq!(backend.node(&rp("/sub")).unwrap().meta.kind, NodeKind::Directory);
        assert_eq!(backend.read(&rp("/sub/b.txt")).unwrap(), b"beta!");
    }

    #[cfg(unix)]
    #[test]
    fn symlink_escape_is_denied() {
        let outside = tempfile::tempdir().unwrap();
        fs::write(outside.path().join("secret"), b"no").unwrap();
        let dir = tempfile::tempdir().unwrap();
        std::os::unix::fs::symlink(outside.path().join("secret"), dir.path().join("leak")).unwrap();
        let backend = backend(dir.path());
        let err = backend.read(&rp("/leak")).unwrap_err();
        assert_eq!(err.code(), "AccessDenied");
    }

    #[test]
    fn writes_bump_revisions() {
        let dir = tempfile::tempdir().unwrap();
        let backend = backend(dir.path());
        let meta = backend.write(&rp("/new.txt"), b"one", &BTreeMap::new(), "system", 0).unwrap();
        assert_eq!(meta.revision_id, 1);
        let meta = backend.write(&rp("/new.txt"), b"two", &BTreeMap::new(), "system", 0).unwrap();
        assert_eq!(meta.revision_id, 2);
    }
}
