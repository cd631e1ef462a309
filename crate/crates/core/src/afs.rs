//! The namespace dispatcher.
//!
//! [`Afs`] owns the mount table, consults governance on every
//! operation, commits one transaction event per operation attempted
//! (success or failure), and routes resolved paths to backends.
//! Backends are reachable only through this dispatcher.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;
use serde_json::Value;

use crate::backend::{BackendHandle, MountId, MountOptions, MountTable, NodeRecord, ResolvedPath, Resolution, DEFAULT_MAX_DEPTH};
use crate::clock::SharedClock;
use crate::digest::EMPTY_SHA256;
use crate::error::{AfsError, Result};
use crate::governance::{AccessDecision, Right, ScopeRegistry, SYSTEM_SCOPE};
use crate::indexer;
use crate::node::{validate_schema, NodeKind, NodeMetadata};
use crate::path::AfsPath;
use crate::provenance::{
    canonical_json, hex_field, EventDraft, EventEffect, EventPayload, NodeEffect, OpType, Outcome,
    Provenance,
};

/// Identity an operation runs under.
#[derive(Debug, Clone)]
pub struct Caller {
    /// `"human"`, `"system"`, or an agent id.
    pub actor: String,
    pub scope: String,
    pub session_id: Option<String>,
    pub reasoning_id: Option<String>,
}

impl Caller {
    pub fn system() -> Caller {
        Caller { actor: "system".into(), scope: SYSTEM_SCOPE.into(), session_id: None, reasoning_id: None }
    }

    pub fn human() -> Caller {
        Caller { actor: "human".into(), scope: SYSTEM_SCOPE.into(), session_id: None, reasoning_id: None }
    }

    pub fn agent(agent_id: &str, scope: &str, session_id: Option<String>) -> Caller {
        Caller { actor: agent_id.into(), scope: scope.into(), session_id, reasoning_id: None }
    }

    pub fn with_reasoning(mut self, reasoning_id: &str) -> Caller {
        self.reasoning_id = Some(reasoning_id.to_string());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Substring,
    Regex,
    Semantic,
}

impl std::str::FromStr for SearchMode {
    type Err = AfsError;

    fn from_str(s: &str) -> Result<SearchMode> {
        match s {
            "substring" => Ok(SearchMode::Substring),
            "regex" => Ok(SearchMode::Regex),
            "semantic" => Ok(SearchMode::Semantic),
            other => Err(AfsError::BadPattern { reason: format!("unknown search mode {other:?}") }),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchHit {
    pub path: AfsPath,
    pub score: f64,
    pub snippet: String,
}

#[derive(Serialize)]
struct ListInput<'a> {
    path: &'a AfsPath,
    depth: usize,
}

#[derive(Serialize)]
struct PathInput<'a> {
    path: &'a AfsPath,
}

#[derive(Serialize)]
struct WriteInput<'a> {
    path: &'a AfsPath,
    #[serde(rename = "contentHex")]
    content_hex: String,
    attrs: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct SetAttrInput<'a> {
    path: &'a AfsPath,
    key: &'a str,
    value: &'a str,
}

#[derive(Serialize)]
struct SearchInput<'a> {
    path: &'a AfsPath,
    query: &'a str,
    mode: SearchMode,
    limit: usize,
}

#[derive(Serialize)]
struct ExecInput<'a> {
    path: &'a AfsPath,
    args: &'a BTreeMap<String, Value>,
}

#[derive(Serialize)]
struct MountInput<'a> {
    root: &'a AfsPath,
    #[serde(rename = "readOnly")]
    read_only: bool,
    #[serde(rename = "maxDepth")]
    max_depth: usize,
}

/// The dispatcher. Shareable across threads; writes, execs and mount
/// table changes are serialized, reads and listings proceed
/// concurrently.
pub struct Afs {
    table: RwLock<MountTable>,
    governance: RwLock<ScopeRegistry>,
    provenance: Arc<Provenance>,
    clock: SharedClock,
    immutable_prefixes: RwLock<Vec<(AfsPath, String)>>,
    mutate_lock: Mutex<()>,
}

impl Afs {
    pub fn new(provenance: Arc<Provenance>, clock: SharedClock) -> Afs {
        Afs {
            table: RwLock::new(MountTable::default()),
            governance: RwLock::new(ScopeRegistry::with_builtins()),
            provenance,
            clock,
            immutable_prefixes: RwLock::new(Vec::new()),
            mutate_lock: Mutex::new(()),
        }
    }

    pub fn provenance(&self) -> &Arc<Provenance> {
        &self.provenance
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    pub fn governance(&self) -> &RwLock<ScopeRegistry> {
        &self.governance
    }

    /// Marks a namespace prefix as immutable to generic writes. Used for
    /// the history area, which only accepts appends through the
    /// repository.
    pub fn add_immutable_prefix(&self, prefix: AfsPath, reason: &str) {
        self.immutable_prefixes
            .write()
            .expect("immutable prefixes lock")
            .push((prefix, reason.to_string()));
    }

    fn draft(&self, caller: &Caller, op_type: OpType, path: Option<&AfsPath>) -> EventDraft {
        let mut draft = EventDraft::new(op_type, &caller.actor);
        draft.session_id = caller.session_id.clone();
        draft.reasoning_id = caller.reasoning_id.clone();
        draft.path = path.cloned();
        draft
    }

    fn check(&self, caller: &Caller, path: &AfsPath, right: Right) -> Result<()> {
        let governance = self.governance.read().expect("governance lock");
        match governance.check_access(&caller.scope, path, right)? {
            AccessDecision::Allow => Ok(()),
            AccessDecision::Deny { reason } => Err(AfsError::AccessDenied {
                path: path.to_string(),
                right: right.as_str().to_string(),
                reason,
            }),
        }
    }

    fn check_immutable(&self, path: &AfsPath) -> Result<()> {
        let prefixes = self.immutable_prefixes.read().expect("immutable prefixes lock");
        for (prefix, reason) in prefixes.iter() {
            if path.starts_with(prefix) {
                return Err(AfsError::ImmutableNode { path: path.to_string(), reason: reason.clone() });
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Resolution and traversal (internal, no events)
    // ------------------------------------------------------------------

    pub(crate) fn node_record(&self, path: &AfsPath) -> Result<NodeRecord> {
        let table = self.table.read().expect("mount table lock");
        match table.resolve(path) {
            Resolution::Mounted { mount, rel } => {
                let resolved = ResolvedPath { full: path.clone(), rel };
                match mount.backend.node(&resolved) {
                    Ok(record) => Ok(record),
                    // An ancestor of a nested mount root is a directory
                    // even when the outer backend has no node there.
                    Err(AfsError::NotFound { .. })
                        if table.mounts().iter().any(|m| m.root.starts_with(path) && m.root != *path) =>
                    {
                        Ok(virtual_directory_record())
                    }
                    Err(e) => Err(e),
                }
            }
            Resolution::Virtual => Ok(virtual_directory_record()),
            Resolution::Unresolved => Err(AfsError::NotFound { path: path.to_string() }),
        }
    }

    pub(crate) fn children_at(&self, path: &AfsPath) -> Result<Vec<String>> {
        let table = self.table.read().expect("mount table lock");
        let mut names: BTreeSet<String> = BTreeSet::new();
        match table.resolve(path) {
            Resolution::Mounted { mount, rel } => {
                let resolved = ResolvedPath { full: path.clone(), rel };
                match mount.backend.children(&resolved) {
                    Ok(children) => names.extend(children),
                    Err(AfsError::NotFound { .. })
                        if table.mounts().iter().any(|m| m.root.starts_with(path) && m.root != *path) => {}
                    Err(e) => return Err(e),
                }
            }
            Resolution::Virtual => {}
            Resolution::Unresolved => {
                return Err(AfsError::NotFound { path: path.to_string() });
            }
        }
        names.extend(table.mount_child_names(path));
        Ok(names.into_iter().collect())
    }

    /// Pre-order traversal from `start` (inclusive), resolution-aware
    /// across nested mounts. Archived nodes and their subtrees are
    /// skipped unless `include_archived`.
    pub(crate) fn walk(
        &self,
        start: &AfsPath,
        include_archived: bool,
        max_depth: usize,
    ) -> Result<Vec<(AfsPath, NodeRecord)>> {
        let mut out = Vec::new();
        let start_record = self.node_record(start)?;
        let mut stack: Vec<(AfsPath, NodeRecord, usize)> = vec![(start.clone(), start_record, 0)];
        while let Some((path, record, depth)) = stack.pop() {
            if !include_archived && record.meta.archived && path != *start {
                continue;
            }
            let is_dir = record.meta.kind == NodeKind::Directory;
            out.push((path.clone(), record));
            if is_dir && depth < max_depth {
                let children = self.children_at(&path)?;
                for name in children.iter().rev() {
                    let child = path.child(name)?;
                    let child_record = self.node_record(&child)?;
                    stack.push((child, child_record, depth + 1));
                }
            }
        }
        Ok(out)
    }

    /// Content bytes without access checks or an event; internal
    /// traversal for the indexer, pipeline gathering and digests.
    pub(crate) fn read_raw(&self, path: &AfsPath) -> Result<Vec<u8>> {
        let record = self.node_record(path)?;
        if record.meta.kind == NodeKind::Directory {
            return Err(AfsError::IsDirectory { path: path.to_string() });
        }
        let table = self.table.read().expect("mount table lock");
        match table.resolve(path) {
            Resolution::Mounted { mount, rel } => {
                mount.backend.read(&ResolvedPath { full: path.clone(), rel })
            }
            _ => Err(AfsError::NotFound { path: path.to_string() }),
        }
    }

    /// Snapshot of the currently visible region under `root`, as node
    /// effects. Empty when nothing resolves there.
    fn region_snapshot(&self, root: &AfsPath) -> Vec<NodeEffect> {
        match self.walk(root, true, usize::MAX) {
            Ok(nodes) => nodes
                .into_iter()
                .map(|(path, record)| NodeEffect {
                    path,
                    kind: record.meta.kind,
                    revision_id: record.meta.revision_id,
                    content_hash: record.content_hash,
                    archived: record.meta.archived,
                })
                .collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Digest of the full live namespace (canonical serialization,
    /// archived nodes included).
    pub fn state_digest(&self) -> Result<String> {
        let mut map = BTreeMap::new();
        for (path, record) in self.walk(&AfsPath::root(), true, usize::MAX)? {
            map.insert(
                path,
                crate::provenance::DigestNode {
                    kind: record.meta.kind,
                    revision_id: record.meta.revision_id,
                    content_hash: record.content_hash,
                },
            );
        }
        Ok(crate::provenance::digest_node_map(&map))
    }

    // ------------------------------------------------------------------
    // Operations
    // ------------------------------------------------------------------

    pub fn mount(
        &self,
        caller: &Caller,
        root: &AfsPath,
        backend: BackendHandle,
        options: MountOptions,
    ) -> Result<MountId> {
        let _guard = self.mutate_lock.lock().expect("mutate lock");
        let mut draft = self.draft(caller, OpType::Mount, Some(root));
        draft.input = EventPayload::stored(canonical_json(&MountInput {
            root,
            read_only: options.read_only,
            max_depth: options.max_depth,
        }));
        let inner = {
            let mut table = self.table.write().expect("mount table lock");
            table.add(root.clone(), backend, options)
        };
        match &inner {
            Ok(_) => {
                draft.effects = vec![
                    EventEffect::Remove { prefix: root.clone() },
                    EventEffect::Snapshot { nodes: self.region_snapshot(root) },
                ];
            }
            Err(e) => draft.outcome = Outcome::error(e.code()),
        }
        self.provenance.commit(draft)?;
        inner
    }

    pub fn unmount(&self, caller: &Caller, id: MountId) -> Result<()> {
        let _guard = self.mutate_lock.lock().expect("mutate lock");
        let mut draft = self.draft(caller, OpType::Unmount, None);
        let inner = {
            let mut table = self.table.write().expect("mount table lock");
            table.remove(id)
        };
        match &inner {
            Ok(mount) => {
                draft.path = Some(mount.root.clone());
                draft.input = EventPayload::stored(canonical_json(&PathInput { path: &mount.root }));
                draft.effects = vec![
                    EventEffect::Remove { prefix: mount.root.clone() },
                    EventEffect::Snapshot { nodes: self.region_snapshot(&mount.root) },
                ];
            }
            Err(e) => draft.outcome = Outcome::error(e.code()),
        }
        self.provenance.commit(draft)?;
        inner.map(|_| ())
    }

    pub fn unmount_root(&self, caller: &Caller, root: &AfsPath) -> Result<()> {
        let id = {
            let table = self.table.read().expect("mount table lock");
            table.id_of_root(root)
        };
        match id {
            Ok(id) => self.unmount(caller, id),
            Err(e) => {
                let mut draft = self.draft(caller, OpType::Unmount, Some(root));
                draft.outcome = Outcome::error(e.code());
                self.provenance.commit(draft)?;
                Err(e)
            }
        }
    }

    pub fn mount_id_of(&self, root: &AfsPath) -> Result<MountId> {
        let table = self.table.read().expect("mount table lock");
        table.id_of_root(root)
    }

    pub fn mount_roots(&self) -> Vec<AfsPath> {
        let table = self.table.read().expect("mount table lock");
        let mut roots: Vec<AfsPath> = table.mounts().iter().map(|m| m.root.clone()).collect();
        roots.sort();
        roots
    }

    fn max_depth_at(&self, path: &AfsPath) -> usize {
        let table = self.table.read().expect("mount table lock");
        match table.resolve(path) {
            Resolution::Mounted { mount, .. } => mount.options.max_depth,
            _ => DEFAULT_MAX_DEPTH,
        }
    }

    /// All descendants of `path` within `depth`, sorted lexicographically
    /// by canonical path text. `depth` must be in `1..=max_depth` of the
    /// path's mount.
    pub fn list(&self, caller: &Caller, path: &AfsPath, depth: usize) -> Result<Vec<(AfsPath, NodeMetadata)>> {
        let mut draft = self.draft(caller, OpType::List, Some(path));
        draft.input = EventPayload::digest_of(&canonical_json(&ListInput { path, depth }));
        let inner = self.list_inner(caller, path, depth);
        match &inner {
            Ok(items) => {
                let paths: Vec<String> = items.iter().map(|(p, _)| p.to_string()).collect();
                draft.output = EventPayload::digest_of(&canonical_json(&paths));
            }
            Err(e) => draft.outcome = Outcome::error(e.code()),
        }
        self.provenance.commit(draft)?;
        inner
    }

    fn list_inner(&self, caller: &Caller, path: &AfsPath, depth: usize) -> Result<Vec<(AfsPath, NodeMetadata)>> {
        let limit = self.max_depth_at(path);
        if depth == 0 || depth > limit {
            return Err(AfsError::DepthExceeded { path: path.to_string(), requested: depth, limit });
        }
        self.check(caller, path, Right::List)?;
        let mut items: Vec<(AfsPath, NodeMetadata)> = self
            .walk(path, false, depth)?
            .into_iter()
            .filter(|(p, _)| p != path)
            .map(|(p, record)| (p, record.meta))
            .collect();
        items.sort_by_key(|(path, _)| path.to_string());
        Ok(items)
    }

    pub fn read(&self, caller: &Caller, path: &AfsPath) -> Result<(Vec<u8>, NodeMetadata)> {
        let mut draft = self.draft(caller, OpType::Read, Some(path));
        draft.input = EventPayload::digest_of(&canonical_json(&PathInput { path }));
        let inner = self.read_inner(caller, path);
        match &inner {
            Ok((bytes, _)) => draft.output = EventPayload::digest_of(bytes),
            Err(e) => draft.outcome = Outcome::error(e.code()),
        }
        self.provenance.commit(draft)?;
        inner
    }

    fn read_inner(&self, caller: &Caller, path: &AfsPath) -> Result<(Vec<u8>, NodeMetadata)> {
        self.check(caller, path, Right::Read)?;
        let record = self.node_record(path)?;
        if record.meta.kind == NodeKind::Directory {
            return Err(AfsError::IsDirectory { path: path.to_string() });
        }
        let table = self.table.read().expect("mount table lock");
        match table.resolve(path) {
            Resolution::Mounted { mount, rel } => {
                let bytes = mount.backend.read(&ResolvedPath { full: path.clone(), rel })?;
                Ok((bytes, record.meta))
            }
            _ => Err(AfsError::NotFound { path: path.to_string() }),
        }
    }

    pub fn write(
        &self,
        caller: &Caller,
        path: &AfsPath,
        content: &[u8],
        attrs: &BTreeMap<String, String>,
    ) -> Result<NodeMetadata> {
        let _guard = self.mutate_lock.lock().expect("mutate lock");
        let mut draft = self.draft(caller, OpType::Write, Some(path));
        draft.input = EventPayload::stored(canonical_json(&WriteInput {
            path,
            content_hex: hex_field(content),
            attrs,
        }));
        let inner = self.write_inner(caller, path, content, attrs, &mut draft);
        if let Err(e) = &inner {
            draft.outcome = Outcome::error(e.code());
            draft.effects.clear();
            draft.content_blobs.clear();
        }
        self.provenance.commit(draft)?;
        inner
    }

    fn write_inner(
        &self,
        caller: &Caller,
        path: &AfsPath,
        content: &[u8],
        attrs: &BTreeMap<String, String>,
        draft: &mut EventDraft,
    ) -> Result<NodeMetadata> {
        self.check(caller, path, Right::Write)?;
        self.check_immutable(path)?;
        // Ancestors that exist only after this write are part of its
        // effects.
        let mut missing_ancestors = Vec::new();
        {
            let mut cursor = path.parent();
            while let Some(a) = cursor {
                if a.is_root() || self.node_record(&a).is_ok() {
                    break;
                }
                missing_ancestors.push(a.clone());
                cursor = a.parent();
            }
        }
        let meta = {
            let table = self.table.read().expect("mount table lock");
            let Resolution::Mounted { mount, rel } = table.resolve(path) else {
                return Err(AfsError::NotFound { path: path.to_string() });
            };
            if mount.options.read_only {
                return Err(AfsError::ReadOnlyMount { path: path.to_string() });
            }
            mount.backend.write(
                &ResolvedPath { full: path.clone(), rel },
                content,
                attrs,
                &caller.scope,
                self.clock.now_ms(),
            )?
        };
        missing_ancestors.reverse();
        for ancestor in missing_ancestors {
            if let Ok(record) = self.node_record(&ancestor) {
                draft.effects.push(EventEffect::Put {
                    node: NodeEffect {
                        path: ancestor,
                        kind: record.meta.kind,
                        revision_id: record.meta.revision_id,
                        content_hash: record.content_hash,
                        archived: record.meta.archived,
                    },
                });
            }
        }
        let record = self.node_record(path)?;
        draft.effects.push(EventEffect::Put {
            node: NodeEffect {
                path: path.clone(),
                kind: record.meta.kind,
                revision_id: record.meta.revision_id,
                content_hash: record.content_hash,
                archived: record.meta.archived,
            },
        });
        draft.content_blobs.push(content.to_vec());
        draft.output = EventPayload::digest_of(&canonical_json(&meta));
        Ok(meta)
    }

    pub fn stat(&self, caller: &Caller, path: &AfsPath) -> Result<NodeMetadata> {
        let mut draft = self.draft(caller, OpType::Stat, Some(path));
        draft.input = EventPayload::digest_of(&canonical_json(&PathInput { path }));
        let inner = self.stat_inner(caller, path);
        match &inner {
            Ok(meta) => draft.output = EventPayload::digest_of(&canonical_json(meta)),
            Err(e) => draft.outcome = Outcome::error(e.code()),
        }
        self.provenance.commit(draft)?;
        inner
    }

    fn stat_inner(&self, caller: &Caller, path: &AfsPath) -> Result<NodeMetadata> {
        self.check(caller, path, Right::Read)?;
        Ok(self.node_record(path)?.meta)
    }

    pub fn set_attr(&self, caller: &Caller, path: &AfsPath, key: &str, value: &str) -> Result<NodeMetadata> {
        let _guard = self.mutate_lock.lock().expect("mutate lock");
        let mut draft = self.draft(caller, OpType::SetAttr, Some(path));
        draft.input = EventPayload::stored(canonical_json(&SetAttrInput { path, key, value }));
        let inner = self.set_attr_inner(caller, path, key, value, &mut draft);
        if let Err(e) = &inner {
            draft.outcome = Outcome::error(e.code());
            draft.effects.clear();
            draft.content_blobs.clear();
        }
        self.provenance.commit(draft)?;
        inner
    }

    fn set_attr_inner(
        &self,
        caller: &Caller,
        path: &AfsPath,
        key: &str,
        value: &str,
        draft: &mut EventDraft,
    ) -> Result<NodeMetadata> {
        self.check(caller, path, Right::Write)?;
        self.check_immutable(path)?;
        let meta = {
            let table = self.table.read().expect("mount table lock");
            let Resolution::Mounted { mount, rel } = table.resolve(path) else {
                return Err(AfsError::NotFound { path: path.to_string() });
            };
            if mount.options.read_only {
                return Err(AfsError::ReadOnlyMount { path: path.to_string() });
            }
            mount.backend.set_attr(&ResolvedPath { full: path.clone(), rel }, key, value, self.clock.now_ms())?
        };
        let record = self.node_record(path)?;
        if record.meta.kind != NodeKind::Directory {
            // The revision bump keeps the prior content addressable.
            let content = {
                let table = self.table.read().expect("mount table lock");
                match table.resolve(path) {
                    Resolution::Mounted { mount, rel } => {
                        mount.backend.read(&ResolvedPath { full: path.clone(), rel })?
                    }
                    _ => Vec::new(),
                }
            };
            draft.content_blobs.push(content);
        }
        draft.effects.push(EventEffect::Put {
            node: NodeEffect {
                path: path.clone(),
                kind: record.meta.kind,
                revision_id: record.meta.revision_id,
                content_hash: record.content_hash,
                archived: record.meta.archived,
            },
        });
        draft.output = EventPayload::digest_of(&canonical_json(&meta));
        Ok(meta)
    }

    pub fn search(
        &self,
        caller: &Caller,
        path: &AfsPath,
        query: &str,
        mode: SearchMode,
        limit: usize,
    ) -> Result<Vec<SearchHit>> {
        let mut draft = self.draft(caller, OpType::Search, Some(path));
        draft.input = EventPayload::digest_of(&canonical_json(&SearchInput { path, query, mode, limit }));
        let inner = self.search_inner(caller, path, query, mode, limit);
        match &inner {
            Ok(hits) => draft.output = EventPayload::digest_of(&canonical_json(hits)),
            Err(e) => draft.outcome = Outcome::error(e.code()),
        }
        self.provenance.commit(draft)?;
        inner
    }

    fn search_inner(
        &self,
        caller: &Caller,
        path: &AfsPath,
        query: &str,
        mode: SearchMode,
        limit: usize,
    ) -> Result<Vec<SearchHit>> {
        self.check(caller, path, Right::List)?;
        if query.is_empty() {
            return Err(AfsError::BadPattern { reason: "empty query".into() });
        }
        let pattern = match mode {
            SearchMode::Regex => Some(
                regex::Regex::new(query)
                    .map_err(|e| AfsError::BadPattern { reason: e.to_string() })?,
            ),
            _ => None,
        };
        let query_embedding = indexer::embed(query.as_bytes());
        let mut hits = Vec::new();
        for (node_path, record) in self.walk(path, false, usize::MAX)? {
            if record.meta.kind == NodeKind::Directory {
                continue;
            }
            if !self
                .governance
                .read()
                .expect("governance lock")
                .check_access(&caller.scope, &node_path, Right::Read)?
                .is_allow()
            {
                continue;
            }
            let content = {
                let table = self.table.read().expect("mount table lock");
                match table.resolve(&node_path) {
                    Resolution::Mounted { mount, rel } => {
                        mount.backend.read(&ResolvedPath { full: node_path.clone(), rel })?
                    }
                    _ => continue,
                }
            };
            let content_text = String::from_utf8_lossy(&content).into_owned();
            match mode {
                SearchMode::Substring | SearchMode::Regex => {
                    // Candidate text covers the canonical path too, so
                    // executable nodes match by name.
                    let candidate = format!("{node_path}\n{content_text}");
                    let (count, matched_line) = match &pattern {
                        Some(re) => {
                            let count = re.find_iter(&candidate).count();
                            let line = content_text.lines().find(|l| re.is_match(l));
                            (count, line)
                        }
                        None => {
                            let count = candidate.matches(query).count();
                            let line = content_text.lines().find(|l| l.contains(query));
                            (count, line)
                        }
                    };
                    if count > 0 {
                        let snippet = matched_line.unwrap_or(&node_path.to_string()).to_string();
                        hits.push(SearchHit { path: node_path, score: count as f64, snippet: clip(&snippet) });
                    }
                }
                SearchMode::Semantic => {
                    let doc_embedding = indexer::embed(&content);
                    let score = indexer::cosine(&query_embedding, &doc_embedding);
                    let snippet = content_text.lines().next().unwrap_or("").to_string();
                    hits.push(SearchHit { path: node_path, score, snippet: clip(&snippet) });
                }
            }
        }
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.path.to_string().cmp(&b.path.to_string()))
        });
        hits.truncate(limit);
        Ok(hits)
    }

    /// Executes an executable node. Returns the validated result map and
    /// the id of the transaction event that recorded the call.
    pub fn exec(
        &self,
        caller: &Caller,
        path: &AfsPath,
        args: &BTreeMap<String, Value>,
    ) -> Result<(BTreeMap<String, Value>, u64)> {
        let _guard = self.mutate_lock.lock().expect("mutate lock");
        let mut draft = self.draft(caller, OpType::Exec, Some(path));
        draft.input = EventPayload::stored(canonical_json(&ExecInput { path, args }));
        let inner = self.exec_inner(caller, path, args);
        match &inner {
            Ok(result) => draft.output = EventPayload::stored(canonical_json(result)),
            Err(e) => draft.outcome = Outcome::error(e.code()),
        }
        let event_id = self.provenance.commit(draft)?;
        inner.map(|result| (result, event_id))
    }

    fn exec_inner(
        &self,
        caller: &Caller,
        path: &AfsPath,
        args: &BTreeMap<String, Value>,
    ) -> Result<BTreeMap<String, Value>> {
        self.check(caller, path, Right::Exec)?;
        let record = self.node_record(path)?;
        if record.meta.kind != NodeKind::Executable {
            return Err(AfsError::NotExecutable { path: path.to_string() });
        }
        let descriptor = record.descriptor.as_ref().ok_or_else(|| AfsError::NotExecutable {
            path: path.to_string(),
        })?;
        validate_schema(&descriptor.input_schema, args, &path.to_string(), "input")?;
        let result = {
            let table = self.table.read().expect("mount table lock");
            let Resolution::Mounted { mount, rel } = table.resolve(path) else {
                return Err(AfsError::NotFound { path: path.to_string() });
            };
            mount.backend.exec(
                &ResolvedPath { full: path.clone(), rel },
                args,
                mount.options.exec_timeout_ms,
            )?
        };
        validate_schema(&descriptor.output_schema, &result, &path.to_string(), "output")?;
        Ok(result)
    }
}

fn virtual_directory_record() -> NodeRecord {
    NodeRecord {
        meta: NodeMetadata::directory(0),
        content_hash: EMPTY_SHA256.to_string(),
        descriptor: None,
    }
}

fn clip(text: &str) -> String {
    if text.len() <= 120 {
        return text.to_string();
    }
    let mut end = 120;
    while end > 0 && !text.is_char_boundary(end) {
        end -= 1;
    }
    text[..end].to_string()
}
