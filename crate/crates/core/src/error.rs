//! Error type shared across the crate.
//!
//! Every variant carries a stable machine-readable code (see
//! [`AfsError::code`]) used in transaction events, on the CLI's stderr
//! and across the FFI boundary.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AfsError>;

#[derive(Debug, Error)]
pub enum AfsError {
    #[error("InvalidPath: {path}: {reason}")]
    InvalidPath { path: String, reason: String },
    #[error("DuplicateMount: {root}")]
    DuplicateMount { root: String },
    #[error("UnknownMount: {what}")]
    UnknownMount { what: String },
    #[error("NotFound: {path}")]
    NotFound { path: String },
    #[error("DepthExceeded: depth {requested} exceeds limit {limit} for {path}")]
    DepthExceeded { path: String, requested: usize, limit: usize },
    #[error("AccessDenied: {right} on {path}: {reason}")]
    AccessDenied { path: String, right: String, reason: String },
    #[error("IsDirectory: {path}")]
    IsDirectory { path: String },
    #[error("ReadOnlyMount: {path}")]
    ReadOnlyMount { path: String },
    #[error("ImmutableNode: {path}: {reason}")]
    ImmutableNode { path: String, reason: String },
    #[error("BadPattern: {reason}")]
    BadPattern { reason: String },
    #[error("NotExecutable: {path}")]
    NotExecutable { path: String },
    #[error("SchemaViolation: {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
    #[error("ToolFailure: {path}: {reason}")]
    ToolFailure { path: String, reason: String },
    #[error("HostRootMissing: {host_root}")]
    HostRootMissing { host_root: String },
    #[error("StoreCorrupt: {reason}")]
    StoreCorrupt { reason: String },
    #[error("StoreFailure: {reason}")]
    StoreFailure { reason: String },
    #[error("DuplicateName: {name}")]
    DuplicateName { name: String },
    #[error("HandshakeTimeout: {command} did not answer describe within {timeout_ms} ms")]
    HandshakeTimeout { command: String, timeout_ms: u64 },
    #[error("ProtocolViolation: {reason}")]
    ProtocolViolation { reason: String },
    #[error("UnknownRecord: {record_id}")]
    UnknownRecord { record_id: String },
    #[error("IncompatibleDerivation: {derivation} cannot produce {memory_type} memory")]
    IncompatibleDerivation { derivation: String, memory_type: String },
    #[error("UnknownEntry: {entry_id}")]
    UnknownEntry { entry_id: String },
    #[error("AlreadyPromoted: {entry_id}")]
    AlreadyPromoted { entry_id: String },
    #[error("UnknownRevision: {path} revision {revision}")]
    UnknownRevision { path: String, revision: u64 },
    #[error("LogCorrupt: {reason}")]
    LogCorrupt { reason: String },
    #[error("ChainBroken: record {record_id}: {reason}")]
    ChainBroken { record_id: String, reason: String },
    #[error("BudgetInvalid: {reason}")]
    BudgetInvalid { reason: String },
    #[error("ScopeUnknown: {name}")]
    ScopeUnknown { name: String },
    #[error("DuplicateScope: {name}")]
    DuplicateScope { name: String },
    #[error("RevisionMissing: {path} revision {revision}")]
    RevisionMissing { path: String, revision: u64 },
    #[error("WindowOverflow: {reason}")]
    WindowOverflow { reason: String },
    #[error("ReviewPending: {reasoning_id}")]
    ReviewPending { reasoning_id: String },
    #[error("UnknownReasoning: {reasoning_id}")]
    UnknownReasoning { reasoning_id: String },
    #[error("StaleIndex: {reason}")]
    StaleIndex { reason: String },
    #[error("ConfigError: {reason}")]
    ConfigError { reason: String },
    #[error("StoreLocked: {reason}")]
    StoreLocked { reason: String },
}

impl AfsError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            AfsError::InvalidPath { .. } => "InvalidPath",
            AfsError::DuplicateMount { .. } => "DuplicateMount",
            AfsError::UnknownMount { .. } => "UnknownMount",
            AfsError::NotFound { .. } => "NotFound",
            AfsError::DepthExceeded { .. } => "DepthExceeded",
            AfsError::AccessDenied { .. } => "AccessDenied",
            AfsError::IsDirectory { .. } => "IsDirectory",
            AfsError::ReadOnlyMount { .. } => "ReadOnlyMount",
            AfsError::ImmutableNode { .. } => "ImmutableNode",
            AfsError::BadPattern { .. } => "BadPattern",
            AfsError::NotExecutable { .. } => "NotExecutable",
            AfsError::SchemaViolation { .. } => "SchemaViolation",
            AfsError::ToolFailure { .. } => "ToolFailure",
            AfsError::HostRootMissing { .. } => "HostRootMissing",
            AfsError::StoreCorrupt { .. } => "StoreCorrupt",
            AfsError::StoreFailure { .. } => "StoreFailure",
            AfsError::DuplicateName { .. } => "DuplicateName",
            AfsError::HandshakeTimeout { .. } => "HandshakeTimeout",
            AfsError::ProtocolViolation { .. } => "ProtocolViolation",
            AfsError::UnknownRecord { .. } => "UnknownRecord",
            AfsError::IncompatibleDerivation { .. } => "IncompatibleDerivation",
            AfsError::UnknownEntry { .. } => "UnknownEntry",
            AfsError::AlreadyPromoted { .. } => "AlreadyPromoted",
            AfsError::UnknownRevision { .. } => "UnknownRevision",
            AfsError::LogCorrupt { .. } => "LogCorrupt",
            AfsError::ChainBroken { .. } => "ChainBroken",
            AfsError::BudgetInvalid { .. } => "BudgetInvalid",
            AfsError::ScopeUnknown { .. } => "ScopeUnknown",
            AfsError::DuplicateScope { .. } => "DuplicateScope",
            AfsError::RevisionMissing { .. } => "RevisionMissing",
            AfsError::WindowOverflow { .. } => "WindowOverflow",
            AfsError::ReviewPending { .. } => "ReviewPending",
            AfsError::UnknownReasoning { .. } => "UnknownReasoning",
            AfsError::StaleIndex { .. } => "StaleIndex",
            AfsError::ConfigError { .. } => "ConfigError",
            AfsError::StoreLocked { .. } => "StoreLocked",
        }
    }

    /// CLI exit code: 1 user error, 2 access, 3 internal/system.
    pub fn exit_code(&self) -> i32 {
        match self {
            AfsError::AccessDenied { .. } => 2,
            AfsError::StoreCorrupt { .. }
            | AfsError::StoreFailure { .. }
            | AfsError::LogCorrupt { .. }
            | AfsError::ChainBroken { .. }
            | AfsError::WindowOverflow { .. }
            | AfsError::ProtocolViolation { .. }
            | AfsError::HandshakeTimeout { .. }
            | AfsError::ToolFailure { .. }
            | AfsError::StoreLocked { .. } => 3,
            _ => 1,
        }
    }

    pub fn store_io(context: &str, err: std::io::Error) -> AfsError {
        AfsError::StoreFailure { reason: format!("{context}: {err}") }
    }
}
