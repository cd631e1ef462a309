//! In-process function mount.
//!
//! Each registered function appears as one executable node directly
//! under the mount root. Reading an executable node returns its
//! descriptor serialization and never invokes it.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::Value;

use crate::backend::{Backend, BackendCaps, NodeRecord, ResolvedPath};
use crate::digest::{sha256_hex, EMPTY_SHA256};
use crate::error::{AfsError, Result};
use crate::node::{FunctionDescriptor, NodeKind, NodeMetadata};

pub type FunctionImpl =
    Arc<dyn Fn(&BTreeMap<String, Value>) -> std::result::Result<BTreeMap<String, Value>, String> + Send + Sync>;

struct FunctionEntry {
    descriptor: FunctionDescriptor,
    implementation: FunctionImpl,
}

pub struct FunctionBackend {
    functions: BTreeMap<String, FunctionEntry>,
}

impl FunctionBackend {
    pub fn new(
        functions: Vec<(String, FunctionDescriptor, FunctionImpl)>,
    ) -> Result<FunctionBackend> {
        let mut map = BTreeMap::new();
        for (name, descriptor, implementation) in functions {
            if map.insert(name.clone(), FunctionEntry { descriptor, implementation }).is_some() {
                return Err(AfsError::DuplicateName { name });
            }
        }
        Ok(FunctionBackend { functions: map })
    }

    fn entry(&self, path: &ResolvedPath) -> Result<&FunctionEntry> {
        let segments = path.rel.segments();
        if segments.len() != 1 {
            return Err(AfsError::NotFound { path: path.full_text() });
        }
        self.functions
            .get(&segments[0])
            .ok_or_else(|| AfsError::NotFound { path: path.full_text() })
    }

    fn node_meta(descriptor: &FunctionDescriptor) -> (NodeMetadata, String) {
        let text = descriptor.to_text();
        let meta = NodeMetadata {
            created_at: 0,
            modified_at: 0,
            size: text.len() as u64,
            kind: NodeKind::Executable,
            source_id: None,
            revision_id: 1,
            access_scope: "system".to_string(),
            user_attrs: BTreeMap::new(),
            archived: false,
        };
        (meta, sha256_hex(text.as_bytes()))
    }
}

impl Backend for FunctionBackend {
    fn caps(&self) -> BackendCaps {
        BackendCaps { writable: false, executable: true }
    }

    fn node(&self, path: &ResolvedPath) -> Result<NodeRecord> {
        if path.rel.is_root() {
            return Ok(NodeRecord {
                meta: NodeMetadata::directory(0),
                content_hash: EMPTY_SHA256.to_string(),
                descriptor: None,
            });
        }
        let entry = self.entry(path)?;
        let (meta, content_hash) = Self::node_meta(&entry.descriptor);
        Ok(NodeRecord { meta, content_hash, descriptor: Some(entry.descriptor.clone()) })
    }

    fn children(&self, path: &ResolvedPath) -> Result<Vec<String>> {
        if path.rel.is_root() {
            return Ok(self.functions.keys().cloned().collect());
        }
        self.entry(path)?;
        Ok(vec![])
    }

    fn read(&self, path: &ResolvedPath) -> Result<Vec<u8>> {
        if path.rel.is_root() {
            return Err(AfsError::IsDirectory { path: path.full_text() });
        }
        Ok(self.entry(path)?.descriptor.to_text().into_bytes())
    }

    fn exec(
        &self,
        path: &ResolvedPath,
        args: &BTreeMap<String, Value>,
        _timeout_ms: u64,
    ) -> Result<BTreeMap<String, Value>> {
        if path.rel.is_root() {
            return Err(AfsError::NotExecutable { path: path.full_text() });
        }
        let entry = self.entry(path)?;
        (entry.implementation)(args)
            .map_err(|message| AfsError::ToolFailure { path: path.full_text(), reason: message })
    }
}
