//! Persistent context repository: immutable hash-chained history, typed
//! memory, scratchpads, lifecycle transitions and retention.
//!
//! Namespace contract (all backed by one embedded store):
//!
//! ```text
//! /context/history/{recordId}
//! /context/memory/{agentId}/{memoryType}/{entryId}
//! /context/pad/{taskId}/{entryId}
//! /context/human/{annotationId}
//! ```
//!
//! History is global and permanent: there is no delete API, and
//! compaction losslessly re-encodes payload blocks while preserving
//! random access. Memory is per-agent and versioned. Scratchpads are
//! transient yet auditable: archiving hides them from default listings
//! but they stay readable by explicit path.
//!
//! Every public operation here commits exactly one transaction event;
//! compound transitions (e.g. promotion, which also appends history)
//! fold all node effects into that single event.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::afs::{Afs, Caller};
use crate::clock::SharedClock;
use crate::digest::{sha256_fields, ZERO_HASH};
use crate::error::{AfsError, Result};
use crate::backends::store::StoreInner;
use crate::indexer;
use crate::node::NodeKind;
use crate::path::AfsPath;
use crate::provenance::{
    canonical_json, hex_field, EventDraft, EventEffect, EventPayload, NodeEffect, OpType, Outcome,
};

pub const CONTEXT_ROOT: &str = "/context";
pub const AREA_HISTORY: &str = "history";
pub const AREA_MEMORY: &str = "memory";
pub const AREA_PAD: &str = "pad";
pub const AREA_HUMAN: &str = "human";
pub const AREA_MANIFEST: &str = "manifest";
pub const AREA_SCOPES: &str = "scopes";

/// Payload block size for history compaction.
pub const COMPACTION_BLOCK: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    User,
    Agent,
    Tool,
    HumanReviewer,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::User => "user",
            Origin::Agent => "agent",
            Origin::Tool => "tool",
            Origin::HumanReviewer => "human-reviewer",
        }
    }

    pub fn parse(text: &str) -> Result<Origin> {
        match text {
            "user" => Ok(Origin::User),
            "agent" => Ok(Origin::Agent),
            "tool" => Ok(Origin::Tool),
            "human-reviewer" => Ok(Origin::HumanReviewer),
            other => Err(AfsError::StoreCorrupt { reason: format!("unknown origin {other:?}") }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HistoryRecord {
    pub record_id: String,
    pub timestamp: u64,
    pub origin: Origin,
    pub agent_id: String,
    pub session_id: String,
    pub model_version: String,
    pub payload: Vec<u8>,
    pub prev_hash: String,
    pub self_hash: String,
}

impl HistoryRecord {
    /// SHA-256 over the length-prefixed fields in declaration order.
    #[allow(clippy::too_many_arguments)]
    pub fn compute_hash(
        record_id: &str,
        timestamp: u64,
        origin: Origin,
        agent_id: &str,
        session_id: &str,
        model_version: &str,
        payload: &[u8],
        prev_hash: &str,
    ) -> String {
        let ts = timestamp.to_le_bytes();
        sha256_fields([
            record_id.as_bytes(),
            &ts,
            origin.as_str().as_bytes(),
            agent_id.as_bytes(),
            session_id.as_bytes(),
            model_version.as_bytes(),
            payload,
            prev_hash.as_bytes(),
        ])
    }

    pub fn namespace_path(&self) -> AfsPath {
        context_path(&[AREA_HISTORY, &self.record_id])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryType {
    Scratchpad,
    Episodic,
    Fact,
    Experiential,
    Procedural,
    User,
}

impl MemoryType {
    pub fn as_str(&self) -> &'static str {
        match self {
            MemoryType::Scratchpad => "scratchpad",
            MemoryType::Episodic => "episodic",
            MemoryType::Fact => "fact",
            MemoryType::Experiential => "experiential",
            MemoryType::Procedural => "procedural",
            MemoryType::User => "user",
        }
    }

    pub fn parse(text: &str) -> Result<MemoryType> {
        match text {
            "scratchpad" => Ok(MemoryType::Scratchpad),
            "episodic" => Ok(MemoryType::Episodic),
            "fact" => Ok(MemoryType::Fact),
            "experiential" => Ok(MemoryType::Experiential),
            "procedural" => Ok(MemoryType::Procedural),
            "user" => Ok(MemoryType::User),
            other => Err(AfsError::ConfigError { reason: format!("unknown memory type {other:?}") }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Representation {
    PlainText,
    EmbeddingVector,
    KeyValue,
    StructuredLog,
}

impl Representation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Representation::PlainText => "plainText",
            Representation::EmbeddingVector => "embeddingVector",
            Representation::KeyValue => "keyValue",
            Representation::StructuredLog => "structuredLog",
        }
    }

    pub fn parse(text: &str) -> Result<Representation> {
        match text {
            "plainText" => Ok(Representation::PlainText),
            "embeddingVector" => Ok(Representation::EmbeddingVector),
            "keyValue" => Ok(Representation::KeyValue),
            "structuredLog" => Ok(Representation::StructuredLog),
            other => Err(AfsError::StoreCorrupt { reason: format!("unknown representation {other:?}") }),
        }
    }
}

/// Memory-type/representation pairs allowed by the taxonomy.
pub fn representation_allowed(memory_type: MemoryType, representation: Representation) -> bool {
    use MemoryType::*;
    use Representation::*;
    matches!(
        (memory_type, representation),
        (Fact, KeyValue)
            | (Episodic, PlainText)
            | (Episodic, EmbeddingVector)
            | (Experiential, StructuredLog)
            | (Procedural, PlainText)
            | (User, PlainText)
            | (User, EmbeddingVector)
            | (Scratchpad, PlainText)
            | (Scratchpad, EmbeddingVector)
    )
}

#[derive(Debug, Clone)]
pub struct MemoryEntry {
    pub entry_id: String,
    pub memory_type: MemoryType,
    pub agent_id: String,
    pub session_id: Option<String>,
    pub content: Vec<u8>,
    pub representation: Representation,
    pub source_ids: Vec<String>,
    pub confidence: f64,
    pub created_at: u64,
    pub modified_at: u64,
    pub revision_id: u64,
    pub archived: bool,
    pub path: AfsPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Derivation {
    Summarize,
    Embed,
    Index,
}

impl Derivation {
    pub fn parse(text: &str) -> Result<Derivation> {
        match text {
            "summarize" => Ok(Derivation::Summarize),
            "embed" => Ok(Derivation::Embed),
            "index" => Ok(Derivation::Index),
            other => Err(AfsError::ConfigError { reason: format!("unknown derivation {other:?}") }),
        }
    }
}

#[derive(Debug, Clone)]
pub enum PromoteTarget {
    Memory(MemoryType),
    History,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsolidationReport {
    /// (kept entry id, absorbed entry id) pairs.
    pub merged: Vec<(String, String)>,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetentionPolicy {
    /// Pads older than this (and not promoted) are archived.
    #[serde(rename = "scratchpadTtlMs", default = "default_ttl")]
    pub scratchpad_ttl_ms: u64,
    /// Records beyond the most recent this-many are compacted in full
    /// 1000-record blocks. History never becomes unreadable.
    #[serde(rename = "historyCompactAfter", default = "default_compact_after")]
    pub history_compact_after: u64,
    /// When set, non-scratchpad memory entries untouched for this long
    /// are archived.
    #[serde(rename = "memoryStaleAfterMs", default)]
    pub memory_stale_after_ms: Option<u64>,
}

fn default_ttl() -> u64 {
    86_400_000
}

fn default_compact_after() -> u64 {
    100_000
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        RetentionPolicy {
            scratchpad_ttl_ms: default_ttl(),
            history_compact_after: default_compact_after(),
            memory_stale_after_ms: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RetentionReport {
    pub archived_pads: Vec<String>,
    pub archived_memory: Vec<String>,
    pub compacted_blocks: Vec<u64>,
}

impl RetentionReport {
    pub fn is_empty(&self) -> bool {
        self.archived_pads.is_empty()
            && self.archived_memory.is_empty()
            && self.compacted_blocks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Approve,
    Correct,
    Reject,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(rename = "annotationId")]
    pub annotation_id: String,
    #[serde(rename = "reasoningId")]
    pub reasoning_id: String,
    #[serde(rename = "humanId")]
    pub human_id: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correction: Option<String>,
    pub note: String,
}

pub fn context_path(segments: &[&str]) -> AfsPath {
    let mut path = AfsPath::parse(CONTEXT_ROOT).expect("static path");
    for seg in segments {
        path = path.child(seg).expect("validated segment");
    }
    path
}

/// Identifiers that become path segments (agent ids, task ids, scope
/// names) must fit the path grammar.
pub fn validate_segment_id(kind: &str, value: &str) -> Result<()> {
    AfsPath::root().child(value).map_err(|_| AfsError::InvalidPath {
        path: value.to_string(),
        reason: format!("{kind} must be a valid path segment"),
    })?;
    Ok(())
}

fn internal_path(segments: &[&str]) -> AfsPath {
    AfsPath::from_segments(segments.iter().copied()).expect("validated segment")
}

fn to_namespace(internal: &AfsPath) -> AfsPath {
    AfsPath::parse(CONTEXT_ROOT).expect("static path").join(internal)
}

struct RepoState {
    next_record_seq: u64,
    last_hash: String,
    next_entry_seq: u64,
    next_annotation_seq: u64,
    next_manifest_seq: u64,
    /// entry id -> store-internal path, for pads and memory entries.
    entries: BTreeMap<String, AfsPath>,
}

/// The persistent context repository.
pub struct Repository {
    afs: Arc<Afs>,
    store: Arc<StoreInner>,
    clock: SharedClock,
    state: Mutex<RepoState>,
}

const ATTR_ORIGIN: &str = "origin";
const ATTR_AGENT: &str = "agentId";
const ATTR_SESSION: &str = "sessionId";
const ATTR_MODEL: &str = "modelVersion";
const ATTR_PREV_HASH: &str = "prevHash";
const ATTR_SELF_HASH: &str = "selfHash";
const ATTR_MEMORY_TYPE: &str = "memoryType";
const ATTR_REPRESENTATION: &str = "representation";
const ATTR_SOURCE_IDS: &str = "sourceIds";
const ATTR_CONFIDENCE: &str = "confidence";
const ATTR_PROMOTED: &str = "promoted";
const ATTR_ABSORBED_BY: &str = "absorbedBy";

impl Repository {
    /// Binds the repository to an opened store and rebuilds counters and
    /// the entry index by scanning it.
    pub fn open(afs: Arc<Afs>, store: Arc<StoreInner>, clock: SharedClock) -> Result<Repository> {
        let mut next_record_seq = 1;
        let mut last_hash = ZERO_HASH.to_string();
        let history_root = internal_path(&[AREA_HISTORY]);
        let mut history: Vec<AfsPath> = store
            .nodes_under(&history_root)
            .into_iter()
            .filter(|(p, r)| p.depth() == 2 && r.meta.kind != NodeKind::Directory)
            .map(|(p, _)| p)
            .collect();
        history.sort();
        if let Some(last) = history.last() {
            let record = store.get(last).ok_or_else(|| AfsError::StoreCorrupt {
                reason: format!("history node {last} vanished"),
            })?;
            let seq: u64 = last
                .name()
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| AfsError::StoreCorrupt { reason: format!("bad record id {last}") })?;
            next_record_seq = seq + 1;
            last_hash = record
                .meta
                .user_attrs
                .get(ATTR_SELF_HASH)
                .cloned()
                .ok_or_else(|| AfsError::StoreCorrupt { reason: format!("record {last} has no hash") })?;
        }

        let mut entries = BTreeMap::new();
        let mut next_entry_seq = 1;
        for area in [AREA_MEMORY, AREA_PAD] {
            for (path, record) in store.nodes_under(&internal_path(&[area])) {
                if record.meta.kind == NodeKind::Directory {
                    continue;
                }
                if let Some(name) = path.name() {
                    if let Some(seq) = parse_seq_id(name, 'e') {
                        next_entry_seq = next_entry_seq.max(seq + 1);
                        entries.insert(name.to_string(), path.clone());
                    }
                }
            }
        }
        let mut next_annotation_seq = 1;
        for (path, record) in store.nodes_under(&internal_path(&[AREA_HUMAN])) {
            if record.meta.kind == NodeKind::Directory {
                continue;
            }
            if let Some(seq) = path.name().and_then(|n| parse_seq_id(n, 'a')) {
                next_annotation_seq = next_annotation_seq.max(seq + 1);
            }
        }
        let mut next_manifest_seq = 1;
        for (path, record) in store.nodes_under(&internal_path(&[AREA_MANIFEST])) {
            if record.meta.kind == NodeKind::Directory {
                continue;
            }
            if let Some(seq) = path.name().and_then(|n| parse_seq_id(n, 'm')) {
                next_manifest_seq = next_manifest_seq.max(seq + 1);
            }
        }

        Ok(Repository {
            afs,
            store,
            clock,
            state: Mutex::new(RepoState {
                next_record_seq,
                last_hash,
                next_entry_seq,
                next_annotation_seq,
                next_manifest_seq,
                entries,
            }),
        })
    }

    pub fn afs(&self) -> &Arc<Afs> {
        &self.afs
    }

    pub fn store(&self) -> &Arc<StoreInner> {
        &self.store
    }

    /// Mounts `/context/<area>` as a view of this repository's store if
    /// it is not mounted yet. The mount is logged like any other.
    pub fn ensure_area_mounted(&self, area: &str) -> Result<()> {
        let root = context_path(&[area]);
        if self.afs.mount_id_of(&root).is_ok() {
            return Ok(());
        }
        let view = crate::backends::store::StoreView::new(self.store.clone(), internal_path(&[area]));
        self.afs.mount(
            &Caller::system(),
            &root,
            Arc::new(view),
            crate::backend::MountOptions::default(),
        )?;
        Ok(())
    }

    fn draft(&self, caller: &Caller, op: OpType, path: Option<AfsPath>) -> EventDraft {
        let mut draft = EventDraft::new(op, &caller.actor);
        draft.session_id = caller.session_id.clone();
        draft.reasoning_id = caller.reasoning_id.clone();
        draft.path = path;
        draft
    }

    fn put_effects(&self, effects: Vec<NodeEffect>) -> Vec<EventEffect> {
        effects
            .into_iter()
            .map(|mut e| {
                e.path = to_namespace(&e.path);
                EventEffect::Put { node: e }
            })
            .collect()
    }

    // ------------------------------------------------------------------
    // History
    // ------------------------------------------------------------------

    /// Appends without logging; used by operations that fold the append
    /// into their own event. Returns the record plus its node effects.
    fn append_history_raw(
        &self,
        state: &mut RepoState,
        origin: Origin,
        agent_id: &str,
        session_id: &str,
        model_version: &str,
        payload: &[u8],
    ) -> Result<(HistoryRecord, Vec<NodeEffect>)> {
        validate_segment_id("agent id", agent_id)?;
        let record_id = format!("{:010}", state.next_record_seq);
        let timestamp = self.clock.now_ms();
        let prev_hash = state.last_hash.clone();
        let self_hash = HistoryRecord::compute_hash(
            &record_id,
            timestamp,
            origin,
            agent_id,
            session_id,
            model_version,
            payload,
            &prev_hash,
        );
        let mut attrs = BTreeMap::new();
        attrs.insert(ATTR_ORIGIN.to_string(), origin.as_str().to_string());
        attrs.insert(ATTR_AGENT.to_string(), agent_id.to_string());
        attrs.insert(ATTR_SESSION.to_string(), session_id.to_string());
        attrs.insert(ATTR_MODEL.to_string(), model_version.to_string());
        attrs.insert(ATTR_PREV_HASH.to_string(), prev_hash.clone());
        attrs.insert(ATTR_SELF_HASH.to_string(), self_hash.clone());
        let internal = internal_path(&[AREA_HISTORY, &record_id]);
        let (_meta, effects) =
            self.store.put(&internal, payload, &attrs, "system", None, timestamp)?;
        state.next_record_seq += 1;
        state.last_hash = self_hash.clone();
        let record = HistoryRecord {
            record_id,
            timestamp,
            origin,
            agent_id: agent_id.to_string(),
            session_id: session_id.to_string(),
            model_version: model_version.to_string(),
            payload: payload.to_vec(),
            prev_hash,
            self_hash,
        };
        Ok((record, effects))
    }

    pub fn append_history(
        &self,
        caller: &Caller,
        origin: Origin,
        agent_id: &str,
        session_id: &str,
        model_version: &str,
        payload: &[u8],
    ) -> Result<HistoryRecord> {
        let mut state = self.state.lock().expect("repository lock");
        let mut draft = self.draft(caller, OpType::AppendHistory, None);
        #[derive(Serialize)]
        struct Input<'a> {
            origin: &'a str,
            #[serde(rename = "agentId")]
            agent_id: &'a str,
            #[serde(rename = "sessionId")]
            session_id: &'a str,
            #[serde(rename = "modelVersion")]
            model_version: &'a str,
            #[serde(rename = "payloadHex")]
            payload_hex: String,
        }
        draft.input = EventPayload::stored(canonical_json(&Input {
            origin: origin.as_str(),
            agent_id,
            session_id,
            model_version,
            payload_hex: hex_field(payload),
        }));
        let inner = self.append_history_raw(&mut state, origin, agent_id, session_id, model_version, payload);
        match &inner {
            Ok((record, effects)) => {
                draft.path = Some(record.namespace_path());
                draft.effects = self.put_effects(effects.clone());
                draft.content_blobs.push(payload.to_vec());
                draft.output = EventPayload::digest_of(record.self_hash.as_bytes());
            }
            Err(e) => draft.outcome = Outcome::error(e.code()),
        }
        self.afs.provenance().commit(draft)?;
        inner.map(|(record, _)| record)
    }

    pub fn record_count(&self) -> u64 {
        self.state.lock().expect("repository lock").next_record_seq - 1
    }

    pub fn record_by_id(&self, record_id: &str) -> Result<HistoryRecord> {
        let internal = internal_path(&[AREA_HISTORY, record_id]);
        let node = self
            .store
            .get(&internal)
            .ok_or_else(|| AfsError::UnknownRecord { record_id: record_id.to_string() })?;
        let payload = self.store.read(&internal)?;
        let attrs = &node.meta.user_attrs;
        let need = |key: &str| -> Result<String> {
            attrs.get(key).cloned().ok_or_else(|| AfsError::StoreCorrupt {
                reason: format!("record {record_id} missing attribute {key}"),
            })
        };
        Ok(HistoryRecord {
            record_id: record_id.to_string(),
            timestamp: node.meta.created_at,
            origin: Origin::parse(&need(ATTR_ORIGIN)?)?,
            agent_id: need(ATTR_AGENT)?,
            session_id: need(ATTR_SESSION)?,
            model_version: need(ATTR_MODEL)?,
            payload,
            prev_hash: need(ATTR_PREV_HASH)?,
            self_hash: need(ATTR_SELF_HASH)?,
        })
    }

    /// Recomputes the entire chain from stored bytes. Detects any
    /// tampering at exactly the first offending record.
    pub fn verify_chain(&self) -> Result<u64> {
        let count = self.record_count();
        let mut prev_hash = ZERO_HASH.to_string();
        for seq in 1..=count {
            let record_id = format!("{seq:010}");
            let record = self
                .record_by_id(&record_id)
                .map_err(|e| AfsError::ChainBroken { record_id: record_id.clone(), reason: e.to_string() })?;
            if record.prev_hash != prev_hash {
                return Err(AfsError::ChainBroken {
                    record_id,
                    reason: "previous-hash link does not match".into(),
                });
            }
            let recomputed = HistoryRecord::compute_hash(
                &record.record_id,
                record.timestamp,
                record.origin,
                &record.agent_id,
                &record.session_id,
                &record.model_version,
                &record.payload,
                &record.prev_hash,
            );
            if recomputed != record.self_hash {
                return Err(AfsError::ChainBroken {
                    record_id,
                    reason: "stored hash does not match recomputed hash".into(),
                });
            }
            prev_hash = record.self_hash;
        }
        Ok(count)
    }

    // ------------------------------------------------------------------
    // Memory entries
    // ------------------------------------------------------------------

    fn alloc_entry_id(state: &mut RepoState) -> String {
        let id = format!("e{:010}", state.next_entry_seq);
        state.next_entry_seq += 1;
        id
    }

    #[allow(clippy::too_many_arguments)]
    fn write_entry_raw(
        &self,
        state: &mut RepoState,
        internal_dir: AfsPath,
        entry_id: &str,
        memory_type: MemoryType,
        representation: Representation,
        agent_id: &str,
        session_id: Option<&str>,
        content: &[u8],
        source_ids: &[String],
        confidence: f64,
        source_id_attr: Option<&str>,
    ) -> Result<(MemoryEntry, Vec<NodeEffect>)> {
        if source_ids.is_empty() {
            return Err(AfsError::UnknownRecord { record_id: "(empty lineage)".into() });
        }
        if !representation_allowed(memory_type, representation) {
            return Err(AfsError::IncompatibleDerivation {
                derivation: representation.as_str().to_string(),
                memory_type: memory_type.as_str().to_string(),
            });
        }
        let now = self.clock.now_ms();
        let mut attrs = BTreeMap::new();
        attrs.insert(ATTR_MEMORY_TYPE.to_string(), memory_type.as_str().to_string());
        attrs.insert(ATTR_REPRESENTATION.to_string(), representation.as_str().to_string());
        attrs.insert(
            ATTR_SOURCE_IDS.to_string(),
            serde_json::to_string(source_ids).expect("source ids serialize"),
        );
        attrs.insert(ATTR_CONFIDENCE.to_string(), format!("{confidence}"));
        attrs.insert(ATTR_AGENT.to_string(), agent_id.to_string());
        if let Some(session) = session_id {
            attrs.insert(ATTR_SESSION.to_string(), session.to_string());
        }
        let internal = internal_dir.child(entry_id)?;
        let (meta, effects) = self.store.put(
            &internal,
            content,
            &attrs,
            "system",
            source_id_attr.map(str::to_string),
            now,
        )?;
        state.entries.insert(entry_id.to_string(), internal.clone());
        let entry = MemoryEntry {
            entry_id: entry_id.to_string(),
            memory_type,
            agent_id: agent_id.to_string(),
            session_id: session_id.map(str::to_string),
            content: content.to_vec(),
            representation,
            source_ids: source_ids.to_vec(),
            confidence,
            created_at: meta.created_at,
            modified_at: meta.modified_at,
            revision_id: meta.revision_id,
            archived: false,
            path: to_namespace(&internal),
        };
        Ok((entry, effects))
    }

    pub fn entry_by_id(&self, entry_id: &str) -> Result<MemoryEntry> {
        let internal = {
            let state = self.state.lock().expect("repository lock");
            state
                .entries
                .get(entry_id)
                .cloned()
                .ok_or_else(|| AfsError::UnknownEntry { entry_id: entry_id.to_string() })?
        };
        self.entry_at_internal(&internal)
    }

    fn entry_at_internal(&self, internal: &AfsPath) -> Result<MemoryEntry> {
        let node = self.store.get(internal).ok_or_else(|| AfsError::UnknownEntry {
            entry_id: internal.to_string(),
        })?;
        let content = self.store.read(internal)?;
        let attrs = &node.meta.user_attrs;
        let memory_type = MemoryType::parse(
            attrs.get(ATTR_MEMORY_TYPE).map(String::as_str).unwrap_or("scratchpad"),
        )?;
        let representation = Representation::parse(
            attrs.get(ATTR_REPRESENTATION).map(String::as_str).unwrap_or("plainText"),
        )?;
        let source_ids: Vec<String> = attrs
            .get(ATTR_SOURCE_IDS)
            .and_then(|s| serde_json::from_str(s).ok())
            .unwrap_or_default();
        Ok(MemoryEntry {
            entry_id: internal.name().unwrap_or_default().to_string(),
            memory_type,
            agent_id: attrs.get(ATTR_AGENT).cloned().unwrap_or_default(),
            session_id: attrs.get(ATTR_SESSION).cloned(),
            content,
            representation,
            source_ids,
            confidence: attrs
                .get(ATTR_CONFIDENCE)
                .and_then(|s| s.parse().ok())
                .unwrap_or(1.0),
            created_at: node.meta.created_at,
            modified_at: node.meta.modified_at,
            revision_id: node.meta.revision_id,
            archived: node.meta.archived,
            path: to_namespace(internal),
        })
    }

    /// Live (non-archived) entries of one agent and type, ordered by
    /// (createdAt, entryId).
    pub fn entries_of(&self, agent_id: &str, memory_type: MemoryType) -> Result<Vec<MemoryEntry>> {
        let dir = internal_path(&[AREA_MEMORY, agent_id, memory_type.as_str()]);
        let mut entries = Vec::new();
        for (path, record) in self.store.nodes_under(&dir) {
            if record.meta.kind == NodeKind::Directory || record.meta.archived {
                continue;
            }
            entries.push(self.entry_at_internal(&path)?);
        }
        entries.sort_by(|a, b| (a.created_at, &a.entry_id).cmp(&(b.created_at, &b.entry_id)));
        Ok(entries)
    }

    pub fn derive_memory(
        &self,
        caller: &Caller,
        record_ids: &[String],
        memory_type: MemoryType,
        derivation: Derivation,
        agent_id: &str,
        provider: &dyn crate::pipeline::provider::Provider,
    ) -> Result<MemoryEntry> {
        let mut state = self.state.lock().expect("repository lock");
        let mut draft = self.draft(caller, OpType::DeriveMemory, None);
        #[derive(Serialize)]
        struct Input<'a> {
            #[serde(rename = "recordIds")]
            record_ids: &'a [String],
            #[serde(rename = "memoryType")]
            memory_type: &'a str,
            derivation: Derivation,
            #[serde(rename = "agentId")]
            agent_id: &'a str,
        }
        draft.input = EventPayload::stored(canonical_json(&Input {
            record_ids,
            memory_type: memory_type.as_str(),
            derivation,
            agent_id,
        }));
        let inner = self.derive_memory_inner(&mut state, caller, record_ids, memory_type, derivation, agent_id, provider);
        match &inner {
            Ok((entry, effects)) => {
                draft.path = Some(entry.path.clone());
                draft.effects = self.put_effects(effects.clone());
                draft.content_blobs.push(entry.content.clone());
                draft.output = EventPayload::digest_of(&entry.content);
            }
            Err(e) => draft.outcome = Outcome::error(e.code()),
        }
        self.afs.provenance().commit(draft)?;
        inner.map(|(entry, _)| entry)
    }

    #[allow(clippy::too_many_arguments)]
    fn derive_memory_inner(
        &self,
        state: &mut RepoState,
        caller: &Caller,
        record_ids: &[String],
        memory_type: MemoryType,
        derivation: Derivation,
        agent_id: &str,
        provider: &dyn crate::pipeline::provider::Provider,
    ) -> Result<(MemoryEntry, Vec<NodeEffect>)> {
        validate_segment_id("agent id", agent_id)?;
        if record_ids.is_empty() {
            return Err(AfsError::UnknownRecord { record_id: "(empty lineage)".into() });
        }
        let mut payloads = Vec::new();
        for record_id in record_ids {
            payloads.push(self.record_by_id(record_id)?.payload);
        }
        let joined = payloads.join(&b'\n');
        let (content, representation): (Vec<u8>, Representation) = match derivation {
            Derivation::Summarize => {
                let text = String::from_utf8_lossy(&joined).into_owned();
                let summary = provider.summarize(&text, crate::pipeline::DERIVED_SUMMARY_MAX_TOKENS);
                (summary.into_bytes(), Representation::PlainText)
            }
            Derivation::Embed => {
                let vector = indexer::embed(&joined);
                (canonical_json(&vector.0), Representation::EmbeddingVector)
            }
            Derivation::Index => match memory_type {
                MemoryType::Fact => {
                    let text = String::from_utf8_lossy(&joined).into_owned();
                    let pairs = extract_key_values(&text);
                    if pairs.is_empty() {
                        return Err(AfsError::IncompatibleDerivation {
                            derivation: "index".into(),
                            memory_type: "fact (no key-value lines in sources)".into(),
                        });
                    }
                    let lines: Vec<String> =
                        pairs.into_iter().map(|(k, v)| format!("{k}={v}")).collect();
                    (lines.join("\n").into_bytes(), Representation::KeyValue)
                }
                _ => {
                    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
                    for token in indexer::tokenize(&joined) {
                        *counts.entry(token).or_insert(0) += 1;
                    }
                    let lines: Vec<String> =
                        counts.into_iter().map(|(t, c)| format!("{t}\t{c}")).collect();
                    (lines.join("\n").into_bytes(), Representation::StructuredLog)
                }
            },
        };
        if !representation_allowed(memory_type, representation) {
            return Err(AfsError::IncompatibleDerivation {
                derivation: format!("{derivation:?}").to_lowercase(),
                memory_type: memory_type.as_str().to_string(),
            });
        }
        let entry_id = Self::alloc_entry_id(state);
        let dir = internal_path(&[AREA_MEMORY, agent_id, memory_type.as_str()]);
        self.write_entry_raw(
            state,
            dir,
            &entry_id,
            memory_type,
            representation,
            agent_id,
            caller.session_id.as_deref(),
            &content,
            record_ids,
            1.0,
            None,
        )
    }

    // ------------------------------------------------------------------
    // Scratchpads
    // ------------------------------------------------------------------

    /// Writes a pad entry. The raw pad write is itself an interaction,
    /// so it is first appended to history and the entry's lineage points
    /// at that record.
    pub fn write_scratchpad(
        &self,
        caller: &Caller,
        task_id: &str,
        content: &[u8],
        agent_id: &str,
    ) -> Result<MemoryEntry> {
        let mut state = self.state.lock().expect("repository lock");
        let mut draft = self.draft(caller, OpType::Write, None);
        #[derive(Serialize)]
        struct Input<'a> {
            #[serde(rename = "taskId")]
            task_id: &'a str,
            #[serde(rename = "agentId")]
            agent_id: &'a str,
            #[serde(rename = "contentHex")]
            content_hex: String,
        }
        draft.input = EventPayload::stored(canonical_json(&Input {
            task_id,
            agent_id,
            content_hex: hex_field(content),
        }));
        let inner: Result<(MemoryEntry, Vec<NodeEffect>)> = (|| {
            validate_segment_id("task id", task_id)?;
            let session = caller.session_id.clone().unwrap_or_default();
            let (record, mut effects) =
                self.append_history_raw(&mut state, Origin::Agent, agent_id, &session, "", content)?;
            let entry_id = Self::alloc_entry_id(&mut state);
            let dir = internal_path(&[AREA_PAD, task_id]);
            let (entry, entry_effects) = self.write_entry_raw(
                &mut state,
                dir,
                &entry_id,
                MemoryType::Scratchpad,
                Representation::PlainText,
                agent_id,
                caller.session_id.as_deref(),
                content,
                std::slice::from_ref(&record.record_id),
                1.0,
                None,
            )?;
            effects.extend(entry_effects);
            Ok((entry, effects))
        })();
        match &inner {
            Ok((entry, effects)) => {
                draft.path = Some(entry.path.clone());
                draft.effects = self.put_effects(effects.clone());
                draft.content_blobs.push(content.to_vec());
                draft.output = EventPayload::digest_of(&entry.content);
            }
            Err(e) => draft.outcome = Outcome::error(e.code()),
        }
        self.afs.provenance().commit(draft)?;
        inner.map(|(entry, _)| entry)
    }

    /// Copies a pad's content into memory or history, sets lineage to
    /// the pad entry, and archives the pad. Double promotion fails.
    pub fn promote_scratchpad(
        &self,
        caller: &Caller,
        entry_id: &str,
        target: PromoteTarget,
    ) -> Result<String> {
        let mut state = self.state.lock().expect("repository lock");
        let mut draft = self.draft(caller, OpType::Promote, None);
        #[derive(Serialize)]
        struct Input<'a> {
            #[serde(rename = "entryId")]
            entry_id: &'a str,
            target: String,
        }
        draft.input = EventPayload::stored(canonical_json(&Input {
            entry_id,
            target: match &target {
                PromoteTarget::Memory(t) => format!("memory({})", t.as_str()),
                PromoteTarget::History => "history".to_string(),
            },
        }));
        let inner = self.promote_inner(&mut state, caller, entry_id, target, &mut draft);
        if let Err(e) = &inner {
            draft.outcome = Outcome::error(e.code());
            draft.effects.clear();
            draft.content_blobs.clear();
        }
        self.afs.provenance().commit(draft)?;
        inner
    }

    fn promote_inner(
        &self,
        state: &mut RepoState,
        caller: &Caller,
        entry_id: &str,
        target: PromoteTarget,
        draft: &mut EventDraft,
    ) -> Result<String> {
        let internal = state
            .entries
            .get(entry_id)
            .cloned()
            .ok_or_else(|| AfsError::UnknownEntry { entry_id: entry_id.to_string() })?;
        let pad = self.entry_at_internal(&internal)?;
        if pad.memory_type != MemoryType::Scratchpad {
            return Err(AfsError::UnknownEntry { entry_id: entry_id.to_string() });
        }
        let node = self.store.get(&internal).expect("entry exists");
        if node.meta.user_attrs.get(ATTR_PROMOTED).map(String::as_str) == Some("true") {
            return Err(AfsError::AlreadyPromoted { entry_id: entry_id.to_string() });
        }
        draft.path = Some(pad.path.clone());
        let new_id = match target {
            PromoteTarget::History => {
                let session = pad.session_id.clone().unwrap_or_default();
                let (record, effects) = self.append_history_raw(
                    state,
                    Origin::Agent,
                    &pad.agent_id,
                    &session,
                    "promotion",
                    &pad.content,
                )?;
                draft.effects.extend(self.put_effects(effects));
                draft.content_blobs.push(pad.content.clone());
                record.record_id
            }
            PromoteTarget::Memory(memory_type) => {
                let representation = match memory_type {
                    MemoryType::Fact => {
                        let text = String::from_utf8_lossy(&pad.content).into_owned();
                        if extract_key_values(&text).is_empty() {
                            return Err(AfsError::IncompatibleDerivation {
                                derivation: "promote".into(),
                                memory_type: "fact (content has no key-value lines)".into(),
                            });
                        }
                        Representation::KeyValue
                    }
                    MemoryType::Experiential => Representation::StructuredLog,
                    MemoryType::Procedural => {
                        let text = String::from_utf8_lossy(&pad.content);
                        AfsPath::parse(text.trim()).map_err(|_| AfsError::IncompatibleDerivation {
                            derivation: "promote".into(),
                            memory_type: "procedural (content is not an executable path)".into(),
                        })?;
                        Representation::PlainText
                    }
                    _ => Representation::PlainText,
                };
                let new_entry_id = Self::alloc_entry_id(state);
                let dir = internal_path(&[AREA_MEMORY, &pad.agent_id, memory_type.as_str()]);
                let (entry, effects) = self.write_entry_raw(
                    state,
                    dir,
                    &new_entry_id,
                    memory_type,
                    representation,
                    &pad.agent_id,
                    caller.session_id.as_deref(),
                    &pad.content,
                    &[entry_id.to_string()],
                    pad.confidence,
                    None,
                )?;
                draft.effects.extend(self.put_effects(effects));
                draft.content_blobs.push(pad.content.clone());
                entry.entry_id
            }
        };
        let (_, promoted_effect) =
            self.store.set_attr(&internal, ATTR_PROMOTED, "true", self.clock.now_ms())?;
        draft.effects.extend(self.put_effects(vec![promoted_effect]));
        draft.content_blobs.push(pad.content.clone());
        self.store.set_archived(&internal, true)?;
        draft.effects.push(EventEffect::Archive { path: pad.path.clone(), archived: true });
        draft.output = EventPayload::digest_of(new_id.as_bytes());
        Ok(new_id)
    }

    // ------------------------------------------------------------------
    // Consolidation
    // ------------------------------------------------------------------

    /// Merges near-duplicate entries: pairs with cosine similarity at or
    /// above the threshold are folded into the older entry (ties to the
    /// smaller entry id). Absorbed entries are archived with a pointer
    /// to their keeper; the keeper's lineage becomes the union.
    pub fn consolidate_memory(
        &self,
        caller: &Caller,
        agent_id: &str,
        memory_type: MemoryType,
        similarity_threshold: f64,
    ) -> Result<ConsolidationReport> {
        let mut state = self.state.lock().expect("repository lock");
        let mut draft = self.draft(caller, OpType::Consolidate, None);
        #[derive(Serialize)]
        struct Input<'a> {
            #[serde(rename = "agentId")]
            agent_id: &'a str,
            #[serde(rename = "memoryType")]
            memory_type: &'a str,
            #[serde(rename = "similarityThreshold")]
            similarity_threshold: f64,
        }
        draft.input = EventPayload::stored(canonical_json(&Input {
            agent_id,
            memory_type: memory_type.as_str(),
            similarity_threshold,
        }));
        let inner = self.consolidate_inner(&mut state, agent_id, memory_type, similarity_threshold, &mut draft);
        match &inner {
            Ok(report) => draft.output = EventPayload::digest_of(&canonical_json(report)),
            Err(e) => {
                draft.outcome = Outcome::error(e.code());
                draft.effects.clear();
                draft.content_blobs.clear();
            }
        }
        self.afs.provenance().commit(draft)?;
        inner
    }

    fn consolidate_inner(
        &self,
        state: &mut RepoState,
        agent_id: &str,
        memory_type: MemoryType,
        threshold: f64,
        draft: &mut EventDraft,
    ) -> Result<ConsolidationReport> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(AfsError::ConfigError {
                reason: format!("similarity threshold {threshold} outside [0, 1]"),
            });
        }
        let _ = &state; // entries index is not changed by consolidation
        let entries = self.entries_of(agent_id, memory_type)?;
        let before = entries.len();
        let embeddings: Vec<_> = entries.iter().map(|e| indexer::embed(&e.content)).collect();
        let mut absorbed_by: Vec<Option<usize>> = vec![None; entries.len()];
        let mut merged = Vec::new();
        for i in 0..entries.len() {
            if absorbed_by[i].is_some() {
                continue;
            }
            for j in (i + 1)..entries.len() {
                if absorbed_by[j].is_some() {
                    continue;
                }
                if indexer::cosine(&embeddings[i], &embeddings[j]) >= threshold {
                    absorbed_by[j] = Some(i);
                    merged.push((entries[i].entry_id.clone(), entries[j].entry_id.clone()));
                }
            }
        }
        // Apply: keeper lineage unions, absorbed archived with pointer.
        let now = self.clock.now_ms();
        for i in 0..entries.len() {
            let absorbed: Vec<usize> = (0..entries.len()).filter(|j| absorbed_by[*j] == Some(i)).collect();
            if absorbed.is_empty() {
                continue;
            }
            let mut union: BTreeSet<String> = entries[i].source_ids.iter().cloned().collect();
            for &j in &absorbed {
                union.extend(entries[j].source_ids.iter().cloned());
            }
            let keeper_internal = state
                .entries
                .get(&entries[i].entry_id)
                .cloned()
                .ok_or_else(|| AfsError::UnknownEntry { entry_id: entries[i].entry_id.clone() })?;
            let union_vec: Vec<String> = union.into_iter().collect();
            let (_, effect) = self.store.set_attr(
                &keeper_internal,
                ATTR_SOURCE_IDS,
                &serde_json::to_string(&union_vec).expect("source ids serialize"),
                now,
            )?;
            draft.effects.extend(self.put_effects(vec![effect]));
            draft.content_blobs.push(entries[i].content.clone());
            for &j in &absorbed {
                let absorbed_internal = state
                    .entries
                    .get(&entries[j].entry_id)
                    .cloned()
                    .ok_or_else(|| AfsError::UnknownEntry { entry_id: entries[j].entry_id.clone() })?;
                let (_, effect) = self.store.set_attr(
                    &absorbed_internal,
                    ATTR_ABSORBED_BY,
                    &entries[i].entry_id,
                    now,
                )?;
                draft.effects.extend(self.put_effects(vec![effect]));
                draft.content_blobs.push(entries[j].content.clone());
                self.store.set_archived(&absorbed_internal, true)?;
                draft.effects.push(EventEffect::Archive {
                    path: entries[j].path.clone(),
                    archived: true,
                });
            }
        }
        Ok(ConsolidationReport { after: before - merged.len(), merged, before })
    }

    // ------------------------------------------------------------------
    // Retention
    // ------------------------------------------------------------------

    pub fn apply_retention(
        &self,
        caller: &Caller,
        policy: &RetentionPolicy,
        now: u64,
    ) -> Result<RetentionReport> {
        let state = self.state.lock().expect("repository lock");
        let mut draft = self.draft(caller, OpType::Retention, None);
        draft.input = EventPayload::stored(canonical_json(policy));
        let inner = self.retention_inner(&state, policy, now, &mut draft);
        match &inner {
            Ok(report) => draft.output = EventPayload::digest_of(&canonical_json(report)),
            Err(e) => {
                draft.outcome = Outcome::error(e.code());
                draft.effects.clear();
            }
        }
        self.afs.provenance().commit(draft)?;
        inner
    }

    fn retention_inner(
        &self,
        state: &RepoState,
        policy: &RetentionPolicy,
        now: u64,
        draft: &mut EventDraft,
    ) -> Result<RetentionReport> {
        let mut report = RetentionReport::default();
        // Expired, unpromoted pads are archived (still readable by path).
        for (path, record) in self.store.nodes_under(&internal_path(&[AREA_PAD])) {
            if record.meta.kind == NodeKind::Directory || record.meta.archived {
                continue;
            }
            let promoted = record.meta.user_attrs.get(ATTR_PROMOTED).map(String::as_str) == Some("true");
            if promoted {
                continue;
            }
            if now.saturating_sub(record.meta.created_at) > policy.scratchpad_ttl_ms {
                self.store.set_archived(&path, true)?;
                draft.effects.push(EventEffect::Archive { path: to_namespace(&path), archived: true });
                report.archived_pads.push(path.name().unwrap_or_default().to_string());
            }
        }
        // Stale memory (never scratchpads here; those have the TTL rule).
        if let Some(stale_ms) = policy.memory_stale_after_ms {
            for (path, record) in self.store.nodes_under(&internal_path(&[AREA_MEMORY])) {
                if record.meta.kind == NodeKind::Directory || record.meta.archived {
                    continue;
                }
                if now.saturating_sub(record.meta.modified_at) > stale_ms {
                    self.store.set_archived(&path, true)?;
                    draft.effects.push(EventEffect::Archive { path: to_namespace(&path), archived: true });
                    report.archived_memory.push(path.name().unwrap_or_default().to_string());
                }
            }
        }
        // History compaction: records beyond the most recent
        // `history_compact_after` are re-encoded in complete blocks.
        // Lossless: read-back bytes are unchanged, so this never touches
        // the state digest.
        let total = state.next_record_seq - 1;
        let eligible = total.saturating_sub(policy.history_compact_after);
        let complete_blocks = eligible / COMPACTION_BLOCK;
        for block in 0..complete_blocks {
            let first = block * COMPACTION_BLOCK + 1;
            let first_path = internal_path(&[AREA_HISTORY, &format!("{first:010}")]);
            if self.store.get(&first_path).is_none() {
                continue;
            }
            if self.store.is_compacted(&first_path) {
                continue;
            }
            let paths: Vec<AfsPath> = (first..first + COMPACTION_BLOCK)
                .map(|seq| internal_path(&[AREA_HISTORY, &format!("{seq:010}")]))
                .collect();
            self.store.compact_into_block(block, &paths)?;
            report.compacted_blocks.push(block);
        }
        Ok(report)
    }

    // ------------------------------------------------------------------
    // Raw helpers for the pipeline (fold into the caller's event)
    // ------------------------------------------------------------------

    pub(crate) fn with_state<T>(
        &self,
        f: impl FnOnce(&mut RepoStateHandle<'_>) -> Result<T>,
    ) -> Result<T> {
        let mut state = self.state.lock().expect("repository lock");
        let mut handle = RepoStateHandle { repo: self, state: &mut state };
        f(&mut handle)
    }
}

/// Borrowed repository state for compound pipeline operations that fold
/// several raw writes into one event.
pub struct RepoStateHandle<'a> {
    repo: &'a Repository,
    state: &'a mut RepoState,
}

impl RepoStateHandle<'_> {
    pub fn append_history_raw(
        &mut self,
        origin: Origin,
        agent_id: &str,
        session_id: &str,
        model_version: &str,
        payload: &[u8],
    ) -> Result<(HistoryRecord, Vec<NodeEffect>)> {
        let (record, effects) = self.repo.append_history_raw(
            self.state,
            origin,
            agent_id,
            session_id,
            model_version,
            payload,
        )?;
        Ok((record, namespaced(effects)))
    }

    pub fn alloc_manifest_id(&mut self) -> String {
        let id = format!("m{:010}", self.state.next_manifest_seq);
        self.state.next_manifest_seq += 1;
        id
    }

    pub fn alloc_annotation_id(&mut self) -> String {
        let id = format!("a{:010}", self.state.next_annotation_seq);
        self.state.next_annotation_seq += 1;
        id
    }

    /// Writes a node at a store-internal path; effects come back with
    /// namespace paths.
    pub fn put_node_raw(
        &mut self,
        internal: &AfsPath,
        content: &[u8],
        attrs: &BTreeMap<String, String>,
        source_id: Option<String>,
    ) -> Result<(crate::node::NodeMetadata, Vec<NodeEffect>)> {
        let now = self.repo.clock.now_ms();
        let (meta, effects) = self.repo.store.put(internal, content, attrs, "system", source_id, now)?;
        Ok((meta, namespaced(effects)))
    }

    /// Creates or updates the fact entry for `key`; same value is a
    /// no-op returning the existing entry.
    #[allow(clippy::too_many_arguments)]
    pub fn upsert_fact_raw(
        &mut self,
        agent_id: &str,
        key: &str,
        value: &str,
        source_ids: &[String],
        confidence: f64,
        session_id: Option<&str>,
        reasoning_id: Option<&str>,
    ) -> Result<(MemoryEntry, Vec<NodeEffect>)> {
        let content = format!("{key}={value}");
        let existing = self.repo.entries_of(agent_id, MemoryType::Fact)?;
        if let Some(entry) = existing.iter().find(|e| fact_key(&e.content).as_deref() == Some(key)) {
            if entry.content == content.as_bytes() {
                return Ok((entry.clone(), Vec::new()));
            }
            // Same key, new value: new revision of the same entry, with
            // extended lineage.
            let internal = self
                .state
                .entries
                .get(&entry.entry_id)
                .cloned()
                .ok_or_else(|| AfsError::UnknownEntry { entry_id: entry.entry_id.clone() })?;
            let mut union: BTreeSet<String> = entry.source_ids.iter().cloned().collect();
            union.extend(source_ids.iter().cloned());
            let union_vec: Vec<String> = union.into_iter().collect();
            let mut attrs = BTreeMap::new();
            attrs.insert(
                ATTR_SOURCE_IDS.to_string(),
                serde_json::to_string(&union_vec).expect("source ids serialize"),
            );
            attrs.insert(ATTR_CONFIDENCE.to_string(), format!("{confidence}"));
            let now = self.repo.clock.now_ms();
            let (_, effects) = self.repo.store.put(
                &internal,
                content.as_bytes(),
                &attrs,
                "system",
                reasoning_id.map(str::to_string),
                now,
            )?;
            let updated = self.repo.entry_at_internal(&internal)?;
            return Ok((updated, namespaced(effects)));
        }
        let entry_id = Repository::alloc_entry_id(self.state);
        let dir = internal_path(&[AREA_MEMORY, agent_id, MemoryType::Fact.as_str()]);
        let (entry, effects) = self.repo.write_entry_raw(
            self.state,
            dir,
            &entry_id,
            MemoryType::Fact,
            Representation::KeyValue,
            agent_id,
            session_id,
            content.as_bytes(),
            source_ids,
            confidence,
            reasoning_id,
        )?;
        Ok((entry, namespaced(effects)))
    }
}

fn namespaced(effects: Vec<NodeEffect>) -> Vec<NodeEffect> {
    effects
        .into_iter()
        .map(|mut e| {
            e.path = to_namespace(&e.path);
            e
        })
        .collect()
}

fn parse_seq_id(name: &str, prefix: char) -> Option<u64> {
    let rest = name.strip_prefix(prefix)?;
    if rest.len() == 10 && rest.bytes().all(|b| b.is_ascii_digit()) {
        rest.parse().ok()
    } else {
        None
    }
}

/// `key=value` / `key: value` line extraction shared by fact derivation,
/// the evaluator's contradiction check and commit-time fact extraction.
/// Keys are lowercased; values are trimmed. First occurrence of a key
/// wins.
pub fn extract_key_values(text: &str) -> Vec<(String, String)> {
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    for line in text.lines() {
        if let Some((key, value)) = parse_key_value_line(line) {
            if seen.insert(key.clone()) {
                pairs.push((key, value));
            }
        }
    }
    pairs
}

pub fn parse_key_value_line(line: &str) -> Option<(String, String)> {
    let line = line.trim();
    // `key=value` wins, with the key being the last bare word before
    // the first `=` (so a fact embedded in prose is still found);
    // `key: value` is the fallback form.
    let (key, value) = if let Some(eq) = line.find('=') {
        let before = &line[..eq];
        let key = before
            .rsplit(|c: char| c.is_whitespace() || c == ':')
            .next()
            .unwrap_or("")
            .trim();
        (key, line[eq + 1..].trim())
    } else {
        let colon = line.find(':')?;
        (line[..colon].trim(), line[colon + 1..].trim())
    };
    if key.is_empty() || value.is_empty() {
        return None;
    }
    if !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-') {
        return None;
    }
    Some((key.to_ascii_lowercase(), value.to_string()))
}

pub fn fact_key(content: &[u8]) -> Option<String> {
    parse_key_value_line(&String::from_utf8_lossy(content)).map(|(k, _)| k)
}
