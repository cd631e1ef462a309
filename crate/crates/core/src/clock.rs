//! Time sources.
//!
//! All timestamps are UTC milliseconds. Operations never call the OS
//! clock directly; they go through a [`Clock`] handle so that a store
//! opened with the logical clock replays the exact same timestamps on
//! every run (the reproducibility contract of the stub provider).

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    /// Current time in UTC milliseconds. Successive calls never go
    /// backwards.
    fn now_ms(&self) -> u64;
}

/// Wall clock, made monotonic.
pub struct SystemClock {
    last: AtomicU64,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { last: AtomicU64::new(0) }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        let wall = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        self.last.fetch_max(wall, Ordering::SeqCst).max(wall)
    }
}

/// Deterministic clock: starts at a base and advances one millisecond
/// per reading. Two identical operation sequences observe identical
/// timestamps.
pub struct LogicalClock {
    next: AtomicU64,
}

/// Base used by fresh stores under the logical clock (2023-11-14T22:13:20Z).
pub const LOGICAL_EPOCH_MS: u64 = 1_700_000_000_000;

impl LogicalClock {
    pub fn starting_at(base_ms: u64) -> Self {
        LogicalClock { next: AtomicU64::new(base_ms) }
    }
}

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.next.fetch_add(1, Ordering::SeqCst)
    }
}

pub type SharedClock = Arc<dyn Clock>;
