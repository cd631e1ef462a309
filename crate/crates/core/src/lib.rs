//! Agentic file system: a mountable, governed namespace for
//! heterogeneous context resources, a persistent context repository
//! (history, memory, scratchpads), and a verifiable context pipeline
//! operating under an explicit token budget.
//!
//! Everything an agent or a human touches goes through one uniform
//! interface — list, read, write, search, exec — over mounted backends:
//! host directories, an embedded persistent store, in-process functions
//! and external tool processes speaking a newline-delimited wire
//! protocol. Every operation commits one transaction event to an
//! append-only log with content-addressed payloads, which is what makes
//! namespace state replayable and sessions auditable. With the bundled
//! deterministic stub provider and the logical clock, whole sessions
//! are bit-reproducible.

pub mod afs;
pub mod backend;
pub mod backends;
pub mod clock;
pub mod config;
pub mod digest;
pub mod error;
pub mod governance;
pub mod indexer;
pub mod node;
pub mod path;
pub mod pipeline;
pub mod provenance;
pub mod repository;
pub mod system;

pub use afs::{Afs, Caller, SearchHit, SearchMode};
pub use backend::{Backend, BackendCaps, MountId, MountOptions, NodeRecord, ResolvedPath};
pub use clock::{Clock, LogicalClock, SystemClock};
pub use config::AfsConfig;
pub use error::{AfsError, Result};
pub use governance::{Right, Rights, Scope, ScopeRegistry};
pub use node::{FieldSpec, FieldType, FunctionDescriptor, NodeKind, NodeMetadata, Schema};
pub use path::AfsPath;
pub use pipeline::{
    ActiveWindow, ContextManifest, EvaluationReport, LoadMode, Pipeline, Provider, StubProvider,
    TokenBudget, Transcript,
};
pub use provenance::{Provenance, TransactionEvent};
pub use repository::{
    Derivation, HistoryRecord, MemoryEntry, MemoryType, Origin, PromoteTarget, Repository,
    RetentionPolicy, Verdict,
};
pub use system::AfsSystem;
