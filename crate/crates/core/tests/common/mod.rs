//! Shared helpers for integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use afs_core::afs::Caller;
use afs_core::config::AfsConfig;
use afs_core::path::AfsPath;
use afs_core::system::AfsSystem;
use tempfile::TempDir;

pub fn fresh_system() -> (TempDir, AfsSystem) {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut config = AfsConfig::default();
    config.store.url = format!("file:{}", dir.path().join("store").display());
    let system = AfsSystem::open(&config).expect("open system");
    (dir, system)
}

pub fn reopen(dir: &TempDir) -> AfsSystem {
    let mut config = AfsConfig::default();
    config.store.url = format!("file:{}", dir.path().join("store").display());
    AfsSystem::open(&config).expect("reopen system")
}

pub fn store_dir(dir: &TempDir) -> PathBuf {
    dir.path().join("store")
}

pub fn p(text: &str) -> AfsPath {
    AfsPath::parse(text).expect("test path")
}

pub fn human() -> Caller {
    Caller::human()
}

pub fn mock_tool_path() -> String {
    env!("CARGO_BIN_EXE_afs-mock-tool").to_string()
}

pub fn afs_cli_path() -> String {
    env!("CARGO_BIN_EXE_afs").to_string()
}

pub mod contract;
