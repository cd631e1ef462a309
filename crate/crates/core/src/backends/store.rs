//! Embedded persistent store.
//!
//! Layout under the store directory:
//!
//! ```text
//! nodes/            content files addressed by SHA-256
//! meta.ndjson       one metadata record per mutation, latest wins
//! log.ndjson        transaction log (written by the provenance module)
//! blobs/            payload side store (provenance module)
//! index/            persisted search index (indexer module)
//! history-blocks/   compacted history payload blocks
//! ```
//!
//! The store survives restart: reopening folds `meta.ndjson` and
//! verifies every referenced content file against its hash
//! (`StoreCorrupt` on mismatch). A [`StoreView`] projects one subtree of
//! the store as a mountable backend, so one on-disk store can back
//! several mount points (`/context/history`, `/context/memory`, ...).

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{Backend, BackendCaps, NodeRecord, ResolvedPath};
use crate::digest::{sha256_hex, EMPTY_SHA256};
use crate::error::{AfsError, Result};
use crate::node::{NodeKind, NodeMetadata};
use crate::path::AfsPath;
use crate::provenance::NodeEffect;

pub const NODES_DIR: &str = "nodes";
pub const META_FILE: &str = "meta.ndjson";
pub const BLOCKS_DIR: &str = "history-blocks";

/// Where a node's content currently lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum ContentLocation {
    Inline(String),
    Block { block: u64, off: u64, len: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetaRecord {
    path: String,
    kind: NodeKind,
    rev: u64,
    hash: String,
    size: u64,
    created: u64,
    modified: u64,
    scope: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    attrs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    archived: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    loc: ContentLocation,
}

#[derive(Debug, Clone)]
struct StoreNode {
    meta: NodeMetadata,
    content_hash: String,
    location: ContentLocation,
}

impl StoreNode {
    fn to_record(&self) -> NodeRecord {
        NodeRecord { meta: self.meta.clone(), content_hash: self.content_hash.clone(), descriptor: None }
    }

    fn to_meta_record(&self, path: &AfsPath) -> MetaRecord {
        MetaRecord {
            path: path.to_string(),
            kind: self.meta.kind,
            rev: self.meta.revision_id,
            hash: self.content_hash.clone(),
            size: self.meta.size,
            created: self.meta.created_at,
            modified: self.meta.modified_at,
            scope: self.meta.access_scope.clone(),
            attrs: self.meta.user_attrs.clone(),
            archived: self.meta.archived,
            source: self.meta.source_id.clone(),
            loc: self.location.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlockIndexEntry {
    path: String,
    off: u64,
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlockIndex {
    block: u64,
    /// SHA-256 of the compressed block file.
    checksum: String,
    entries: Vec<BlockIndexEntry>,
}

struct StoreState {
    nodes: BTreeMap<AfsPath, StoreNode>,
    meta_writer: File,
}

/// Shared embedded store. Thread-safe; writers are serialized, readers
/// proceed concurrently.
pub struct StoreInner {
    root: PathBuf,
    state: RwLock<StoreState>,
    /// Most recently decompressed block, kept to make sequential reads
    /// of compacted history cheap.
    block_cache: Mutex<Option<(u64, Vec<u8>)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreBackendConfig {
    /// Locator of the store directory, `file:<dir>` (a bare path is
    /// accepted too).
    #[serde(rename = "storeUrl")]
    pub store_url: String,
}

impl StoreBackendConfig {
    pub fn directory(&self) -> PathBuf {
        PathBuf::from(self.store_url.strip_prefix("file:").unwrap_or(&self.store_url))
    }
}

impl StoreInner {
    /// Opens or creates a store, folding metadata and verifying content
    /// checksums.
    pub fn open(config: &StoreBackendConfig) -> Result<Arc<StoreInner>> {
        let root = config.directory();
        fs::create_dir_all(root.join(NODES_DIR)).map_err(|e| AfsError::store_io("create store", e))?;
        fs::create_dir_all(root.join(BLOCKS_DIR)).map_err(|e| AfsError::store_io("create store", e))?;

        let mut nodes: BTreeMap<AfsPath, StoreNode> = BTreeMap::new();
        let meta_path = root.join(META_FILE);
        if meta_path.exists() {
            let file = File::open(&meta_path).map_err(|e| AfsError::store_io("open meta", e))?;
            let mut reader = BufReader::new(file);
            let mut buf = Vec::new();
            let mut line_no = 0usize;
            loop {
                buf.clear();
                let n = reader
                    .read_until(b'\n', &mut buf)
                    .map_err(|e| AfsError::store_io("read meta", e))?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                if buf.last() != Some(&b'\n') {
                    return Err(AfsError::StoreCorrupt {
                        reason: format!("meta.ndjson truncated at line {line_no}"),
                    });
                }
                let record: MetaRecord = serde_json::from_slice(&buf[..buf.len() - 1])
                    .map_err(|e| AfsError::StoreCorrupt {
                        reason: format!("meta.ndjson line {line_no}: {e}"),
                    })?;
                let path = AfsPath::parse(&record.path).map_err(|e| AfsError::StoreCorrupt {
                    reason: format!("meta.ndjson line {line_no}: {e}"),
                })?;
                let node = StoreNode {
                    meta: NodeMetadata {
                        created_at: record.created,
                        modified_at: record.modified,
                        size: record.size,
                        kind: record.kind,
                        source_id: record.source,
                        revision_id: record.rev,
                        access_scope: record.scope,
                        user_attrs: record.attrs,
                        archived: record.archived,
                    },
                    content_hash: record.hash,
                    location: record.loc,
                };
                nodes.insert(path, node);
            }
        }

        let store = StoreInner {
            root: root.clone(),
            state: RwLock::new(StoreState {
                nodes,
                meta_writer: OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&meta_path)
                    .map_err(|e| AfsError::store_io("open meta", e))?,
            }),
            block_cache: Mutex::new(None),
        };
        store.verify_checksums()?;
        Ok(Arc::new(store))
    }

    pub fn root_dir(&self) -> &Path {
        &self.root
    }

    fn verify_checksums(&self) -> Result<()> {
        let state = self.state.read().expect("store lock");
        let mut checked_blocks: BTreeMap<u64, ()> = BTreeMap::new();
        for (path, node) in &state.nodes {
            if node.meta.kind == NodeKind::Directory {
                continue;
            }
            match &node.location {
                ContentLocation::Inline(hash) => {
                    let file = self.root.join(NODES_DIR).join(hash);
                    let bytes = fs::read(&file).map_err(|_| AfsError::StoreCorrupt {
                        reason: format!("content file for {path} missing"),
                    })?;
                    if sha256_hex(&bytes) != *hash {
                        return Err(AfsError::StoreCorrupt {
                            reason: format!("checksum mismatch for {path}"),
                        });
                    }
                }
                ContentLocation::Block { block, .. } => {
                    if checked_blocks.insert(*block, ()).is_none() {
                        let index = self.read_block_index(*block)?;
                        let file = self.block_file(*block);
                        let bytes = fs::read(&file).map_err(|_| AfsError::StoreCorrupt {
                            reason: format!("block {block} missing"),
                        })?;
                        if sha256_hex(&bytes) != index.checksum {
                            return Err(AfsError::StoreCorrupt {
                                reason: format!("checksum mismatch for block {block}"),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn append_meta(state: &mut StoreState, record: &MetaRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)
            .map_err(|e| AfsError::StoreFailure { reason: format!("serialize meta: {e}") })?;
        line.push('\n');
        state
            .meta_writer
            .write_all(line.as_bytes())
            .and_then(|_| state.meta_writer.flush())
            .map_err(|e| AfsError::store_io("append meta", e))
    }

    fn content_file(&self, hash: &str) -> PathBuf {
        self.root.join(NODES_DIR).join(hash)
    }

    fn block_file(&self, block: u64) -> PathBuf {
        self.root.join(BLOCKS_DIR).join(format!("block-{block:010}.bin"))
    }

    fn block_index_file(&self, block: u64) -> PathBuf {
        self.root.join(BLOCKS_DIR).join(format!("block-{block:010}.idx.json"))
    }

    fn read_block_index(&self, block: u64) -> Result<BlockIndex> {
        let bytes = fs::read(self.block_index_file(block)).map_err(|_| AfsError::StoreCorrupt {
            reason: format!("block index {block} missing"),
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| AfsError::StoreCorrupt { reason: format!("block index {block}: {e}") })
    }

    pub fn get(&self, path: &AfsPath) -> Option<NodeRecord> {
        let state = self.state.read().expect("store lock");
        state.nodes.get(path).map(|n| n.to_record())
    }

    pub fn children(&self, path: &AfsPath) -> Vec<String> {
        let state = self.state.read().expect("store lock");
        let mut names: Vec<String> = state
            .nodes
            .keys()
            .filter(|p| p.depth() == path.depth() + 1 && p.starts_with(path))
            .filter_map(|p| p.name().map(|s| s.to_string()))
            .collect();
        names.sort();
        names
    }

    /// All nodes under `prefix` (inclusive), for mount snapshots.
    pub fn nodes_under(&self, prefix: &AfsPath) -> Vec<(AfsPath, NodeRecord)> {
        let state = self.state.read().expect("store lock");
        state
            .nodes
            .iter()
            .filter(|(p, _)| p.starts_with(prefix))
            .map(|(p, n)| (p.clone(), n.to_record()))
            .collect()
    }

    pub fn read(&self, path: &AfsPath) -> Result<Vec<u8>> {
        let location = {
            let state = self.state.read().expect("store lock");
            let node = state.nodes.get(path).ok_or_else(|| AfsError::NotFound { path: path.to_string() })?;
            if node.meta.kind == NodeKind::Directory {
                return Err(AfsError::IsDirectory { path: path.to_string() });
            }
            node.location.clone()
        };
        match location {
            ContentLocation::Inline(hash) => {
                fs::read(self.content_file(&hash)).map_err(|e| AfsError::store_io("read content", e))
            }
            ContentLocation::Block { block, off, len } => {
                let decompressed = self.load_block(block)?;
                let start = off as usize;
                let end = start + len as usize;
                if end > decompressed.len() {
                    return Err(AfsError::StoreCorrupt {
                        reason: format!("block {block} slice out of range for {path}"),
                    });
                }
                Ok(decompressed[start..end].to_vec())
            }
        }
    }

    fn load_block(&self, block: u64) -> Result<Vec<u8>> {
        let mut cache = self.block_cache.lock().expect("block cache lock");
        if let Some((cached, bytes)) = cache.as_ref() {
            if *cached == block {
                return Ok(bytes.clone());
            }
        }
        let compressed = fs::read(self.block_file(block))
            .map_err(|_| AfsError::StoreCorrupt { reason: format!("block {block} missing") })?;
        let mut decoder = DeflateDecoder::new(&compressed[..]);
        let mut bytes = Vec::new();
        decoder
            .read_to_end(&mut bytes)
            .map_err(|e| AfsError::StoreCorrupt { reason: format!("block {block} corrupt: {e}") })?;
        *cache = Some((block, bytes.clone()));
        Ok(bytes)
    }

    /// Creates intermediate directories for `path` (excluding the node
    /// itself); returns effects for directories that were created.
    fn ensure_parents(
        &self,
        state: &mut StoreState,
        path: &AfsPath,
        scope: &str,
        now: u64,
    ) -> Result<Vec<NodeEffect>> {
        let mut effects = Vec::new();
        let mut ancestors = Vec::new();
        let mut cursor = path.parent();
        while let Some(a) = cursor {
            if a.is_root() {
                break;
            }
            ancestors.push(a.clone());
            cursor = a.parent();
        }
        ancestors.reverse();
        for dir in ancestors {
            match state.nodes.get(&dir) {
                Some(node) if node.meta.kind == NodeKind::Directory => {}
                Some(_) => {
                    return Err(AfsError::InvalidPath {
                        path: path.to_string(),
                        reason: format!("ancestor {dir} is not a directory"),
                    });
                }
                None => {
                    let mut meta = NodeMetadata::directory(now);
                    meta.access_scope = scope.to_string();
                    let node = StoreNode {
                        meta,
                        content_hash: EMPTY_SHA256.to_string(),
                        location: ContentLocation::Inline(EMPTY_SHA256.to_string()),
                    };
                    Self::append_meta(state, &node.to_meta_record(&dir))?;
                    effects.push(NodeEffect {
                        path: dir.clone(),
                        kind: NodeKind::Directory,
                        revision_id: 1,
                        content_hash: EMPTY_SHA256.to_string(),
                        archived: false,
                    });
                    state.nodes.insert(dir, node);
                }
            }
        }
        Ok(effects)
    }

    /// Ensures a directory node exists at `path` (used for mount view
    /// roots). Idempotent.
    pub fn ensure_directory(&self, path: &AfsPath, scope: &str, now: u64) -> Result<Vec<NodeEffect>> {
        let mut state = self.state.write().expect("store lock");
        let mut effects = self.ensure_parents(&mut state, path, scope, now)?;
        if path.is_root() {
            return Ok(effects);
        }
        match state.nodes.get(path) {
            Some(node) if node.meta.kind == NodeKind::Directory => {}
            Some(_) => {
                return Err(AfsError::InvalidPath {
                    path: path.to_string(),
                    reason: "exists and is not a directory".into(),
                });
            }
            None => {
                let mut meta = NodeMetadata::directory(now);
                meta.access_scope = scope.to_string();
                let node = StoreNode {
                    meta,
                    content_hash: EMPTY_SHA256.to_string(),
                    location: ContentLocation::Inline(EMPTY_SHA256.to_string()),
                };
                Self::append_meta(&mut state, &node.to_meta_record(path))?;
                effects.push(NodeEffect {
                    path: path.clone(),
                    kind: NodeKind::Directory,
                    revision_id: 1,
                    content_hash: EMPTY_SHA256.to_string(),
                    archived: false,
                });
                state.nodes.insert(path.clone(), node);
            }
        }
        Ok(effects)
    }

    /// Writes or overwrites a data node. Attributes merge over existing
    /// ones; the revision increases by exactly one per write to the same
    /// path. Returns the new metadata plus the node effects (including
    /// any directories created along the way).
    pub fn put(
        &self,
        path: &AfsPath,
        content: &[u8],
        attrs: &BTreeMap<String, String>,
        scope: &str,
        source_id: Option<String>,
        now: u64,
    ) -> Result<(NodeMetadata, Vec<NodeEffect>)> {
        for key in attrs.keys() {
            if key.is_empty() {
                return Err(AfsError::SchemaViolation {
                    path: path.to_string(),
                    reason: "attribute keys must be nonempty".into(),
                });
            }
        }
        if path.is_root() {
            return Err(AfsError::IsDirectory { path: path.to_string() });
        }
        let mut state = self.state.write().expect("store lock");
        let mut effects = self.ensure_parents(&mut state, path, scope, now)?;
        let hash = sha256_hex(content);
        let content_path = self.content_file(&hash);
        if !content_path.exists() {
            fs::write(&content_path, content).map_err(|e| AfsError::store_io("write content", e))?;
        }
        let node = match state.nodes.get(path) {
            Some(existing) => {
                if existing.meta.kind == NodeKind::Directory {
                    return Err(AfsError::IsDirectory { path: path.to_string() });
                }
                let mut meta = existing.meta.clone();
                meta.modified_at = now;
                meta.size = content.len() as u64;
                meta.revision_id += 1;
                if source_id.is_some() {
                    meta.source_id = source_id.clone();
                }
                for (k, v) in attrs {
                    meta.user_attrs.insert(k.clone(), v.clone());
                }
                StoreNode { meta, content_hash: hash.clone(), location: ContentLocation::Inline(hash.clone()) }
            }
            None => StoreNode {
                meta: NodeMetadata {
                    created_at: now,
                    modified_at: now,
                    size: content.len() as u64,
                    kind: NodeKind::Data,
                    source_id,
                    revision_id: 1,
                    access_scope: scope.to_string(),
                    user_attrs: attrs.clone(),
                    archived: false,
                },
                content_hash: hash.clone(),
                location: ContentLocation::Inline(hash.clone()),
            },
        };
        Self::append_meta(&mut state, &node.to_meta_record(path))?;
        effects.push(NodeEffect {
            path: path.clone(),
            kind: node.meta.kind,
            revision_id: node.meta.revision_id,
            content_hash: hash,
            archived: node.meta.archived,
        });
        let meta = node.meta.clone();
        state.nodes.insert(path.clone(), node);
        Ok((meta, effects))
    }

    /// Single-attribute update; bumps the revision.
    pub fn set_attr(
        &self,
        path: &AfsPath,
        key: &str,
        value: &str,
        now: u64,
    ) -> Result<(NodeMetadata, NodeEffect)> {
        if key.is_empty() {
            return Err(AfsError::SchemaViolation {
                path: path.to_string(),
                reason: "attribute keys must be nonempty".into(),
            });
        }
        let mut state = self.state.write().expect("store lock");
        let node = state
            .nodes
            .get(path)
            .cloned()
            .ok_or_else(|| AfsError::NotFound { path: path.to_string() })?;
        let mut node = node;
        node.meta.user_attrs.insert(key.to_string(), value.to_string());
        node.meta.modified_at = now;
        node.meta.revision_id += 1;
        Self::append_meta(&mut state, &node.to_meta_record(path))?;
        let effect = NodeEffect {
            path: path.clone(),
            kind: node.meta.kind,
            revision_id: node.meta.revision_id,
            content_hash: node.content_hash.clone(),
            archived: node.meta.archived,
        };
        let meta = node.meta.clone();
        state.nodes.insert(path.clone(), node);
        Ok((meta, effect))
    }

    /// Flips the archived flag. Does not bump the revision.
    pub fn set_archived(&self, path: &AfsPath, archived: bool) -> Result<()> {
        let mut state = self.state.write().expect("store lock");
        let node = state
            .nodes
            .get(path)
            .cloned()
            .ok_or_else(|| AfsError::NotFound { path: path.to_string() })?;
        let mut node = node;
        node.meta.archived = archived;
        Self::append_meta(&mut state, &node.to_meta_record(path))?;
        state.nodes.insert(path.clone(), node);
        Ok(())
    }

    /// True when the node's content already lives in a compacted block.
    pub fn is_compacted(&self, path: &AfsPath) -> bool {
        let state = self.state.read().expect("store lock");
        matches!(
            state.nodes.get(path).map(|n| &n.location),
            Some(ContentLocation::Block { .. })
        )
    }

    /// Losslessly re-encodes the given nodes into one compressed block:
    /// payloads are concatenated, deflated, and an index preserving
    /// random access is written alongside. Content bytes served by
    /// `read` are unchanged. Inline content files whose hash is no
    /// longer referenced by any live node are removed.
    pub fn compact_into_block(&self, block: u64, paths: &[AfsPath]) -> Result<()> {
        let mut concatenated = Vec::new();
        let mut entries = Vec::new();
        let mut originals = Vec::new();
        for path in paths {
            let bytes = self.read(path)?;
            entries.push(BlockIndexEntry {
                path: path.to_string(),
                off: concatenated.len() as u64,
                len: bytes.len() as u64,
            });
            concatenated.extend_from_slice(&bytes);
            originals.push(bytes);
        }
        let mut encoder = DeflateEncoder::new(Vec::new(), Compression::default());
        encoder
            .write_all(&concatenated)
            .and_then(|_| encoder.flush())
            .map_err(|e| AfsError::store_io("compress block", e))?;
        let compressed = encoder
            .finish()
            .map_err(|e| AfsError::store_io("compress block", e))?;
        fs::write(self.block_file(block), &compressed)
            .map_err(|e| AfsError::store_io("write block", e))?;
        let index = BlockIndex { block, checksum: sha256_hex(&compressed), entries };
        fs::write(
            self.block_index_file(block),
            serde_json::to_vec_pretty(&index)
                .map_err(|e| AfsError::StoreFailure { reason: format!("serialize block index: {e}") })?,
        )
        .map_err(|e| AfsError::store_io("write block index", e))?;

        let mut state = self.state.write().expect("store lock");
        let mut freed_hashes = Vec::new();
        for (i, path) in paths.iter().enumerate() {
            let node = state
                .nodes
                .get(path)
                .cloned()
                .ok_or_else(|| AfsError::NotFound { path: path.to_string() })?;
            let mut node = node;
            if let ContentLocation::Inline(hash) = &node.location {
                freed_hashes.push(hash.clone());
            }
            node.location = ContentLocation::Block {
                block,
                off: index.entries[i].off,
                len: index.entries[i].len,
            };
            Self::append_meta(&mut state, &node.to_meta_record(path))?;
            state.nodes.insert(path.clone(), node);
        }
        for hash in freed_hashes {
            let still_referenced = state
                .nodes
                .values()
                .any(|n| matches!(&n.location, ContentLocation::Inline(h) if *h == hash));
            if !still_referenced && hash != EMPTY_SHA256 {
                let _ = fs::remove_file(self.content_file(&hash));
            }
        }
        Ok(())
    }
}

/// Mountable view of one subtree of a shared store.
pub struct StoreView {
    inner: Arc<StoreInner>,
    prefix: AfsPath,
}

impl StoreView {
    pub fn new(inner: Arc<StoreInner>, prefix: AfsPath) -> StoreView {
        StoreView { inner, prefix }
    }

    pub fn store(&self) -> &Arc<StoreInner> {
        &self.inner
    }

    fn internal(&self, rel: &AfsPath) -> AfsPath {
        self.prefix.join(rel)
    }
}

impl Backend for StoreView {
    fn caps(&self) -> BackendCaps {
        BackendCaps { writable: true, executable: false }
    }

    fn node(&self, path: &ResolvedPath) -> Result<NodeRecord> {
        let internal = self.internal(&path.rel);
        if path.rel.is_root() {
            // The view root exists as a directory even before anything
            // is stored under the prefix.
            return Ok(self.inner.get(&internal).unwrap_or_else(|| NodeRecord {
                meta: NodeMetadata::directory(0),
                content_hash: EMPTY_SHA256.to_string(),
                descriptor: None,
            }));
        }
        self.inner
            .get(&internal)
            .ok_or_else(|| AfsError::NotFound { path: path.full_text() })
    }

    fn children(&self, path: &ResolvedPath) -> Result<Vec<String>> {
        let internal = self.internal(&path.rel);
        // The view root is a directory even before anything is stored
        // under the prefix.
        if !path.rel.is_root() && self.inner.get(&internal).is_none() {
            return Err(AfsError::NotFound { path: path.full_text() });
        }
        Ok(self.inner.children(&internal))
    }

    fn read(&self, path: &ResolvedPath) -> Result<Vec<u8>> {
        self.inner.read(&self.internal(&path.rel)).map_err(|e| match e {
            AfsError::NotFound { .. } => AfsError::NotFound { path: path.full_text() },
            AfsError::IsDirectory { .. } => AfsError::IsDirectory { path: path.full_text() },
            other => other,
        })
    }

    fn write(
        &self,
        path: &ResolvedPath,
        content: &[u8],
        attrs: &BTreeMap<String, String>,
        scope: &str,
        now: u64,
    ) -> Result<NodeMetadata> {
        let (meta, _) = self.inner.put(&self.internal(&path.rel), content, attrs, scope, None, now)?;
        Ok(meta)
    }

    fn set_attr(&self, path: &ResolvedPath, key: &str, value: &str, now: u64) -> Result<NodeMetadata> {
        let (meta, _) = self.inner.set_attr(&self.internal(&path.rel), key, value, now).map_err(|e| {
            match e {
                AfsError::NotFound { .. } => AfsError::NotFound { path: path.full_text() },
                other => other,
            }
        })?;
        Ok(meta)
    }

    fn exec(
        &self,
        path: &ResolvedPath,
        _args: &BTreeMap<String, Value>,
        _timeout_ms: u64,
    ) -> Result<BTreeMap<String, Value>> {
        Err(AfsError::NotExecutable { path: path.full_text() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> AfsPath {
        AfsPath::parse(text).unwrap()
    }

    fn open(dir: &Path) -> Arc<StoreInner> {
        StoreInner::open(&StoreBackendConfig { store_url: format!("file:{}", dir.display()) }).unwrap()
    }

    #[test]
    fn fresh_store_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let store = open(dir.path());
        assert!(store.nodes_under(&AfsPath::root()).is_empty());
    }

    #[test]
    fn write_close_reopen_reads_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = open(dir.path());
            store.put(&p("/memory/a/x"), b"hello bytes", &BTreeMap::new(), "system", None, 7).unwrap();
        }
        let store = open(dir.path());
        assert_eq!(store.read(&p("/memory/a/x")).unwrap(), b"hello bytes");
        let rec = store.get(&p("/memory/a/x")).unwrap();
        assert_eq!(rec.meta.size, 11);
        assert_eq!(rec.meta.revision_id, 1);
        // Implicit parents exist as directories.
        assert_eq!(store.get(&p("/memory")).unwrap().meta.kind, NodeKind::Directory);
    }

    #[test]
    fn revisions_survive_reopen_exactly() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = open(dir.path());
            for i in 0..1000u64 {
                let path = p(&format!("/pad/t/{}", i % 10));
                store.put(&path, format!("v{i}").as_bytes(), &BTreeMap::new(), "system", None, i).unwrap();
            }
        }
        let store = open(dir.path());
        for slot in 0..10u64 {
            let rec = store.get(&p(&format!("/pad/t/{slot}"))).unwrap();
            assert_eq!(rec.meta.revision_id, 100, "slot {slot}");
        }
    }

    #[test]
    fn checksum_mismatch_is_store_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let hash = {
            let store = open(dir.path());
            store.put(&p("/x"), b"payload", &BTreeMap::new(), "system", None, 1).unwrap();
            sha256_hex(b"payload")
        };
        let content = dir.path().join(NODES_DIR).join(&hash);
        fs::write(&content, b"tampered").unwrap();
        let err = StoreInner::open(&StoreBackendConfig { store_url: dir.path().display().to_string() })
            .err()
            .expect("expected error");
        assert_eq!(err.code(), "StoreCorrupt");
    }

    #[test]
    fn attrs_merge_and_bump_revisions() {
        let dir = tempfile::tempdir().unwrap();
        let store = open(dir.path());
        let mut attrs = BTreeMap::new();
        attrs.insert("topic".to_string(), "ml".to_string());
        store.put(&p("/notes/n1"), b"c1", &attrs, "system", None, 1).unwrap();
        let (meta, _) = store.set_attr(&p("/notes/n1"), "grade", "a", 2).unwrap();
        assert_eq!(meta.revision_id, 2);
        assert_eq!(meta.user_attrs.get("topic").map(String::as_str), Some("ml"));
        assert_eq!(meta.user_attrs.get("grade").map(String::as_str), Some("a"));
    }

    #[test]
    fn compaction_preserves_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let store = open(dir.path());
        let mut paths = Vec::new();
        let mut contents = Vec::new();
        for i in 0..20u64 {
            let path = p(&format!("/history/{i:010}"));
            let content = format!("record payload {i} with some repeated text text text").into_bytes();
            store.put(&path, &content, &BTreeMap::new(), "system", None, i).unwrap();
            paths.push(path);
            contents.push(content);
        }
        store.compact_into_block(0, &paths).unwrap();
        for (path, content) in paths.iter().zip(&contents) {
            assert_eq!(&store.read(path).unwrap(), content, "{path}");
        }
        // Reopen still verifies and reads.
        drop(store);
        let store = open(dir.path());
        for (path, content) in paths.iter().zip(&contents) {
            assert_eq!(&store.read(path).unwrap(), content, "{path}");
        }
    }

    #[test]
    fn archived_flag_does_not_bump_revision() {
        let dir = tempfile::tempdir().unwrap();
        let store = open(dir.path());
        store.put(&p("/pad/t1/e1"), b"scratch", &BTreeMap::new(), "system", None, 1).unwrap();
        store.set_archived(&p("/pad/t1/e1"), true).unwrap();
        let rec = store.get(&p("/pad/t1/e1")).unwrap();
        assert!(rec.meta.archived);
        assert_eq!(rec.meta.revision_id, 1);
        assert_eq!(store.read(&p("/pad/t1/e1")).unwrap(), b"scratch");
    }
}
