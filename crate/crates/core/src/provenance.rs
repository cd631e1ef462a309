//! Append-only transaction log, revision storage and deterministic
//! replay.
//!
//! Every operation — successful or failed — commits exactly one
//! [`TransactionEvent`] before it returns. Events are NDJSON lines in
//! `log.ndjson` under the store root; payloads live in a
//! content-addressed side store under `blobs/`. Mutating events carry
//! their full input payload there (reads and listings store digests
//! only, since they do not change state).
//!
//! Each event additionally records its *effects*: the (path, kind,
//! revision, content hash) tuples it created or changed. Replay folds
//! effects in order and digests the reconstructed namespace, which must
//! match the live digest captured at the same event id. Node contents
//! written through operations are stored as blobs addressed by their
//! content hash, which is what serves `get_revision`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::clock::SharedClock;
use crate::digest::{sha256_hex, EMPTY_SHA256};
use crate::error::{AfsError, Result};
use crate::node::NodeKind;
use crate::path::AfsPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpType {
    #[serde(rename = "mount")]
    Mount,
    #[serde(rename = "unmount")]
    Unmount,
    #[serde(rename = "list")]
    List,
    #[serde(rename = "read")]
    Read,
    #[serde(rename = "write")]
    Write,
    #[serde(rename = "setAttr")]
    SetAttr,
    #[serde(rename = "stat")]
    Stat,
    #[serde(rename = "search")]
    Search,
    #[serde(rename = "exec")]
    Exec,
    #[serde(rename = "appendHistory")]
    AppendHistory,
    #[serde(rename = "deriveMemory")]
    DeriveMemory,
    #[serde(rename = "promote")]
    Promote,
    #[serde(rename = "consolidate")]
    Consolidate,
    #[serde(rename = "retention")]
    Retention,
    #[serde(rename = "manifest")]
    Manifest,
    #[serde(rename = "load")]
    Load,
    #[serde(rename = "evaluate")]
    Evaluate,
    #[serde(rename = "commit")]
    Commit,
    #[serde(rename = "annotate")]
    Annotate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome {
    Ok(String),
    Error { error: String },
}

impl Outcome {
    pub fn ok() -> Self {
        Outcome::Ok("ok".to_string())
    }

    pub fn error(code: &str) -> Self {
        Outcome::Error { error: code.to_string() }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Outcome::Ok(_))
    }
}

/// One namespace node as an effect or snapshot element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeEffect {
    pub path: AfsPath,
    pub kind: NodeKind,
    #[serde(rename = "revisionId")]
    pub revision_id: u64,
    #[serde(rename = "contentHash")]
    pub content_hash: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub archived: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase")]
pub enum EventEffect {
    /// Node created or changed by this operation. Its content bytes are
    /// stored as a blob addressed by `content_hash`, so the revision is
    /// retrievable later.
    Put { node: NodeEffect },
    /// Archived-flag flip. Does not bump the revision and does not
    /// change the state digest; listed for audit and replay completeness.
    Archive { path: AfsPath, archived: bool },
    /// Subtree removal (unmount, or shadowing by a fresh mount).
    Remove { prefix: AfsPath },
    /// Nodes that became visible without being written through an
    /// operation (mount projection, or a subtree uncovered by unmount).
    /// Their contents are not in the blob store; only hashes are known.
    Snapshot { nodes: Vec<NodeEffect> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransactionEvent {
    #[serde(rename = "eventId")]
    pub event_id: u64,
    pub timestamp: u64,
    pub actor: String,
    #[serde(rename = "sessionId", skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(rename = "reasoningId", skip_serializing_if = "Option::is_none")]
    pub reasoning_id: Option<String>,
    #[serde(rename = "opType")]
    pub op_type: OpType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<AfsPath>,
    #[serde(rename = "inputDigest")]
    pub input_digest: String,
    #[serde(rename = "outputDigest")]
    pub output_digest: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub effects: Vec<EventEffect>,
    /// Digests of blobs persisted for this event (inputs, outputs and
    /// written contents). Verification checks each against its file.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blobs: Vec<String>,
}

/// Payload side of a draft: a digest plus, for mutating operations, the
/// bytes to persist in the blob store.
#[derive(Debug, Clone, Default)]
pub struct EventPayload {
    pub digest: String,
    pub blob: Option<Vec<u8>>,
}

impl EventPayload {
    pub fn empty() -> Self {
        EventPayload { digest: EMPTY_SHA256.to_string(), blob: None }
    }

    /// Digest only; bytes are not persisted.
    pub fn digest_of(bytes: &[u8]) -> Self {
        EventPayload { digest: sha256_hex(bytes), blob: None }
    }

    /// Digest plus persisted payload.
    pub fn stored(bytes: Vec<u8>) -> Self {
        EventPayload { digest: sha256_hex(&bytes), blob: Some(bytes) }
    }
}

#[derive(Debug, Clone)]
pub struct EventDraft {
    pub actor: String,
    pub session_id: Option<String>,
    pub reasoning_id: Option<String>,
    pub op_type: OpType,
    pub path: Option<AfsPath>,
    pub input: EventPayload,
    pub output: EventPayload,
    pub outcome: Outcome,
    pub effects: Vec<EventEffect>,
    /// Raw node contents to persist content-addressed (revision store).
    pub content_blobs: Vec<Vec<u8>>,
}

impl EventDraft {
    pub fn new(op_type: OpType, actor: &str) -> Self {
        EventDraft {
            actor: actor.to_string(),
            session_id: None,
            reasoning_id: None,
            op_type,
            path: None,
            input: EventPayload::empty(),
            output: EventPayload::empty(),
            outcome: Outcome::ok(),
            effects: Vec::new(),
            content_blobs: Vec::new(),
        }
    }
}

struct ProvInner {
    writer: File,
    next_event_id: u64,
    /// (path, revision) -> content hash, for revisions written through
    /// operations.
    revisions: BTreeMap<(AfsPath, u64), String>,
}

/// The transaction log. One serialized appender; readers re-scan the
/// file.
pub struct Provenance {
    root: PathBuf,
    clock: SharedClock,
    inner: Mutex<ProvInner>,
}

pub const LOG_FILE: &str = "log.ndjson";
pub const BLOBS_DIR: &str = "blobs";

impl Provenance {
    /// Opens (or creates) the log under `store_root`, rebuilding the
    /// revision index from recorded effects.
    pub fn open(store_root: &Path, clock: SharedClock) -> Result<Provenance> {
        fs::create_dir_all(store_root.join(BLOBS_DIR))
            .map_err(|e| AfsError::store_io("create blobs dir", e))?;
        let log_path = store_root.join(LOG_FILE);
        let mut revisions = BTreeMap::new();
        let mut next_event_id = 1;
        if log_path.exists() {
            let events = read_log_strict(&log_path)?;
            for event in &events {
                index_revisions(&mut revisions, event);
            }
            next_event_id = events.last().map(|e| e.event_id + 1).unwrap_or(1);
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| AfsError::store_io("open log", e))?;
        Ok(Provenance {
            root: store_root.to_path_buf(),
            clock,
            inner: Mutex::new(ProvInner { writer, next_event_id, revisions }),
        })
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }

    fn blob_path(&self, digest: &str) -> PathBuf {
        self.root.join(BLOBS_DIR).join(digest)
    }

    fn put_blob(&self, bytes: &[u8]) -> Result<String> {
        let digest = sha256_hex(bytes);
        let path = self.blob_path(&digest);
        if !path.exists() {
            fs::write(&path, bytes).map_err(|e| AfsError::store_io("write blob", e))?;
        }
        Ok(digest)
    }

    pub fn blob(&self, digest: &str) -> Result<Vec<u8>> {
        fs::read(self.blob_path(digest)).map_err(|e| AfsError::store_io("read blob", e))
    }

    /// Commits one event: blobs first, then the log line, flushed before
    /// this returns. The parent operation fails if this fails.
    pub fn commit(&self, draft: EventDraft) -> Result<u64> {
        let mut inner = self.inner.lock().expect("provenance lock");
        let mut blobs = Vec::new();
        if let Some(bytes) = &draft.input.blob {
            blobs.push(self.put_blob(bytes)?);
        }
        if let Some(bytes) = &draft.output.blob {
            let d = self.put_blob(bytes)?;
            if !blobs.contains(&d) {
                blobs.push(d);
            }
        }
        for content in &draft.content_blobs {
            let d = self.put_blob(content)?;
            if !blobs.contains(&d) {
                blobs.push(d);
            }
        }
        let event = TransactionEvent {
            event_id: inner.next_event_id,
            timestamp: self.clock.now_ms(),
            actor: draft.actor,
            session_id: draft.session_id,
            reasoning_id: draft.reasoning_id,
            op_type: draft.op_type,
            path: draft.path,
            input_digest: draft.input.digest,
            output_digest: draft.output.digest,
            outcome: draft.outcome,
            effects: draft.effects,
            blobs,
        };
        let mut line = serde_json::to_string(&event)
            .map_err(|e| AfsError::StoreFailure { reason: format!("serialize event: {e}") })?;
        line.push('\n');
        inner
            .writer
            .write_all(line.as_bytes())
            .and_then(|_| inner.writer.flush())
            .map_err(|e| AfsError::store_io("append log", e))?;
        inner.next_event_id += 1;
        index_revisions(&mut inner.revisions, &event);
        Ok(event.event_id)
    }

    /// Number of committed events.
    pub fn event_count(&self) -> u64 {
        self.inner.lock().expect("provenance lock").next_event_id - 1
    }

    /// Exact content of `path` at `revision`, for revisions written
    /// through operations.
    pub fn get_revision(&self, path: &AfsPath, revision: u64) -> Result<Vec<u8>> {
        let hash = {
            let inner = self.inner.lock().expect("provenance lock");
            inner.revisions.get(&(path.clone(), revision)).cloned()
        };
        let Some(hash) = hash else {
            return Err(AfsError::UnknownRevision { path: path.to_string(), revision });
        };
        let bytes = self.blob(&hash)?;
        if sha256_hex(&bytes) != hash {
            return Err(AfsError::LogCorrupt {
                reason: format!("blob {hash} does not match its digest"),
            });
        }
        Ok(bytes)
    }

    pub fn has_revision(&self, path: &AfsPath, revision: u64) -> bool {
        let inner = self.inner.lock().expect("provenance lock");
        inner.revisions.contains_key(&(path.clone(), revision))
    }

    /// Full strict scan of the log.
    pub fn events(&self) -> Result<Vec<TransactionEvent>> {
        let _guard = self.inner.lock().expect("provenance lock");
        read_log_strict(&self.log_path())
    }

    /// Verifies framing, dense event ids and every recorded blob digest.
    /// Returns the event count. Failures name the first offending event.
    pub fn verify(&self) -> Result<u64> {
        let events = self.events()?;
        for (idx, event) in events.iter().enumerate() {
            let expected = idx as u64 + 1;
            if event.event_id != expected {
                return Err(AfsError::LogCorrupt {
                    reason: format!("event id {} where {} expected", event.event_id, expected),
                });
            }
            for digest in &event.blobs {
                let path = self.blob_path(digest);
                let bytes = fs::read(&path).map_err(|_| AfsError::LogCorrupt {
                    reason: format!("event {}: blob {} missing", event.event_id, digest),
                })?;
                if sha256_hex(&bytes) != *digest {
                    return Err(AfsError::LogCorrupt {
                        reason: format!("event {}: blob {} digest mismatch", event.event_id, digest),
                    });
                }
            }
        }
        Ok(events.len() as u64)
    }

    /// Reconstructs the namespace by folding effects of events
    /// 1..=`up_to` (or all when `None`) and digests it. Pure function of
    /// the log prefix.
    pub fn replay(&self, up_to: Option<u64>) -> Result<String> {
        let events = self.events()?;
        if let Some(limit) = up_to {
            if limit > events.len() as u64 {
                return Err(AfsError::LogCorrupt {
                    reason: format!("replay target {limit} beyond last event {}", events.len()),
                });
            }
        }
        let mut nodes: BTreeMap<AfsPath, DigestNode> = BTreeMap::new();
        for event in &events {
            if let Some(limit) = up_to {
                if event.event_id > limit {
                    break;
                }
            }
            if !event.outcome.is_ok() {
                continue;
            }
            for effect in &event.effects {
                fold_effect(&mut nodes, effect);
            }
        }
        Ok(digest_node_map(&nodes))
    }

    pub fn tail(&self, n: usize) -> Result<Vec<TransactionEvent>> {
        let mut events = self.events()?;
        let start = events.len().saturating_sub(n);
        Ok(events.split_off(start))
    }
}

fn index_revisions(revisions: &mut BTreeMap<(AfsPath, u64), String>, event: &TransactionEvent) {
    if !event.outcome.is_ok() {
        return;
    }
    for effect in &event.effects {
        if let EventEffect::Put { node } = effect {
            if node.kind != NodeKind::Directory {
                revisions.insert((node.path.clone(), node.revision_id), node.content_hash.clone());
            }
        }
    }
}

fn fold_effect(nodes: &mut BTreeMap<AfsPath, DigestNode>, effect: &EventEffect) {
    match effect {
        EventEffect::Put { node } => {
            nodes.insert(
                node.path.clone(),
                DigestNode { kind: node.kind, revision_id: node.revision_id, content_hash: node.content_hash.clone() },
            );
        }
        EventEffect::Archive { .. } => {}
        EventEffect::Remove { prefix } => {
            nodes.retain(|path, _| !path.starts_with(prefix));
        }
        EventEffect::Snapshot { nodes: snapshot } => {
            for node in snapshot {
                nodes.insert(
                    node.path.clone(),
                    DigestNode { kind: node.kind, revision_id: node.revision_id, content_hash: node.content_hash.clone() },
                );
            }
        }
    }
}

/// Node shape that enters the state digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigestNode {
    pub kind: NodeKind,
    pub revision_id: u64,
    pub content_hash: String,
}

impl DigestNode {
    pub fn virtual_directory() -> Self {
        DigestNode { kind: NodeKind::Directory, revision_id: 1, content_hash: EMPTY_SHA256.to_string() }
    }
}

/// Canonical namespace serialization: ancestors of every node are
/// materialized as directories, then nodes are emitted in tree
/// pre-order, one `path\0kind\0revisionId\0contentHash\n` line each,
/// with the root first. The digest is the SHA-256 of those lines.
pub fn digest_node_map(nodes: &BTreeMap<AfsPath, DigestNode>) -> String {
    let mut complete: BTreeMap<AfsPath, DigestNode> = BTreeMap::new();
    complete.insert(AfsPath::root(), DigestNode::virtual_directory());
    for (path, node) in nodes {
        let mut ancestor = path.parent();
        while let Some(a) = ancestor {
            complete.entry(a.clone()).or_insert_with(DigestNode::virtual_directory);
            ancestor = a.parent();
        }
        complete.insert(path.clone(), node.clone());
    }
    let mut serialized = Vec::new();
    for (path, node) in &complete {
        serialized.extend_from_slice(path.to_string().as_bytes());
        serialized.push(0);
        serialized.extend_from_slice(node.kind.as_str().as_bytes());
        serialized.push(0);
        serialized.extend_from_slice(node.revision_id.to_string().as_bytes());
        serialized.push(0);
        serialized.extend_from_slice(node.content_hash.as_bytes());
        serialized.push(b'\n');
    }
    sha256_hex(&serialized)
}

/// Timestamp of the last event in a store's log, if any. Used to seed
/// the logical clock so reopened stores keep monotonic time.
pub fn last_event_timestamp(store_root: &Path) -> Result<Option<u64>> {
    let events = read_log_strict(&store_root.join(LOG_FILE))?;
    Ok(events.last().map(|e| e.timestamp))
}

fn read_log_strict(path: &Path) -> Result<Vec<TransactionEvent>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(_) => return Ok(Vec::new()),
    };
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| AfsError::LogCorrupt { reason: format!("read log: {e}") })?;
        if n == 0 {
            break;
        }
        if buf.last() != Some(&b'\n') {
            return Err(AfsError::LogCorrupt {
                reason: format!("truncated record after event {}", events.len()),
            });
        }
        let line = &buf[..buf.len() - 1];
        let event: TransactionEvent = serde_json::from_slice(line).map_err(|e| {
            AfsError::LogCorrupt { reason: format!("malformed record at line {}: {e}", events.len() + 1) }
        })?;
        events.push(event);
    }
    Ok(events)
}

/// Canonical JSON bytes for digest and payload purposes; object keys are
/// sorted by construction (serde_json maps are ordered).
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("canonical json")
}

/// Reads a raw byte blob back out of a JSON payload written with hex
/// encoding.
pub fn hex_field(bytes: &[u8]) -> String {
    hex::encode(bytes)
}

#[allow(dead_code)]
pub fn unhex_field(text: &str) -> Result<Vec<u8>> {
    hex::decode(text).map_err(|e| AfsError::LogCorrupt { reason: format!("bad hex payload: {e}") })
}
