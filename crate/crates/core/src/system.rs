//! System assembly: opens a store, wires provenance, governance, the
//! repository and the pipeline, restores persisted mounts, and exposes
//! the operator-level API used by the CLI and the FFI layer.
//!
//! Mount layout on open: `/context/history`, `/context/memory` and
//! `/context/pad` are always mounted; `/context/human`,
//! `/context/manifest` and `/context/scopes` appear when first used (or
//! when the reopened store already has content there). User mounts
//! (host directories and tool processes) persist in `mounts.json` under
//! the store directory and are re-established — and logged — on every
//! open.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::afs::{Afs, Caller};
use crate::backend::{MountOptions, DEFAULT_EXEC_TIMEOUT_MS, DEFAULT_MAX_DEPTH};
use crate::backends::dir::{DirBackend, DirBackendConfig};
use crate::backends::store::{StoreBackendConfig, StoreInner, StoreView};
use crate::backends::tool::{ToolBackend, ToolProcessConfig};
use crate::clock::{LogicalClock, SharedClock, SystemClock, LOGICAL_EPOCH_MS};
use crate::config::AfsConfig;
use crate::error::{AfsError, Result};
use crate::governance::Scope;
use crate::node::NodeKind;
use crate::path::AfsPath;
use crate::pipeline::{provider_from_selector, Pipeline, TokenBudget};
use crate::provenance::Provenance;
use crate::repository::{
    context_path, Repository, AREA_HISTORY, AREA_HUMAN, AREA_MANIFEST, AREA_MEMORY, AREA_PAD,
    AREA_SCOPES,
};

const LOCK_FILE: &str = ".lock";
const MOUNTS_FILE: &str = "mounts.json";

/// Exclusive store lock; concurrent opens fail fast.
struct StoreLock {
    path: PathBuf,
}

impl StoreLock {
    fn acquire(store_dir: &Path) -> Result<StoreLock> {
        let path = store_dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(StoreLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(AfsError::StoreLocked {
                reason: format!(
                    "store is in use by another process (lock file {}); remove it if that process is gone",
                    path.display()
                ),
            }),
            Err(e) => Err(AfsError::store_io("acquire store lock", e)),
        }
    }
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A mount that persists across processes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PersistedMount {
    Dir {
        root: String,
        #[serde(flatten)]
        config: DirBackendConfig,
        #[serde(rename = "readOnly", default)]
        read_only: bool,
        #[serde(rename = "maxDepth", default = "default_depth")]
        max_depth: usize,
    },
    Tool {
        root: String,
        #[serde(flatten)]
        config: ToolProcessConfig,
        #[serde(rename = "execTimeoutMs", default = "default_timeout")]
        exec_timeout_ms: u64,
        #[serde(rename = "maxDepth", default = "default_depth")]
        max_depth: usize,
    },
}

fn default_depth() -> usize {
    DEFAULT_MAX_DEPTH
}

fn default_timeout() -> u64 {
    DEFAULT_EXEC_TIMEOUT_MS
}

impl PersistedMount {
    pub fn root(&self) -> &str {
        match self {
            PersistedMount::Dir { root, .. } => root,
            PersistedMount::Tool { root, .. } => root,
        }
    }
}

pub struct AfsSystem {
    afs: Arc<Afs>,
    store: Arc<StoreInner>,
    repo: Arc<Repository>,
    pipeline: Pipeline,
    budget: TokenBudget,
    store_dir: PathBuf,
    _lock: StoreLock,
}

impl AfsSystem {
    pub fn open(config: &AfsConfig) -> Result<AfsSystem> {
        let store_config = StoreBackendConfig { store_url: config.store.url.clone() };
        let store_dir = store_config.directory();
        fs::create_dir_all(&store_dir).map_err(|e| AfsError::store_io("create store dir", e))?;
        let lock = StoreLock::acquire(&store_dir)?;

        let clock: SharedClock = match config.clock.kind.as_str() {
            "system" => Arc::new(SystemClock::new()),
            "logical" => {
                let base = crate::provenance::last_event_timestamp(&store_dir)?
                    .map(|t| t + 1)
                    .unwrap_or(LOGICAL_EPOCH_MS);
                Arc::new(LogicalClock::starting_at(base))
            }
            other => {
                return Err(AfsError::ConfigError { reason: format!("unknown clock kind {other:?}") })
            }
        };

        let provenance = Arc::new(Provenance::open(&store_dir, clock.clone())?);
        let store = StoreInner::open(&store_config)?;
        let afs = Arc::new(Afs::new(provenance, clock.clone()));
        afs.add_immutable_prefix(
            context_path(&[AREA_HISTORY]),
            "history is append-only; use the repository append operation".to_string().as_str(),
        );

        let system = Caller::system();
        for area in [AREA_HISTORY, AREA_MEMORY, AREA_PAD] {
            let view = StoreView::new(store.clone(), afs_segment(area));
            afs.mount(&system, &context_path(&[area]), Arc::new(view), MountOptions::default())?;
        }
        for area in [AREA_HUMAN, AREA_MANIFEST, AREA_SCOPES] {
            if !store.nodes_under(&afs_segment(area)).is_empty() {
                let view = StoreView::new(store.clone(), afs_segment(area));
                afs.mount(&system, &context_path(&[area]), Arc::new(view), MountOptions::default())?;
            }
        }

        let repo = Arc::new(Repository::open(afs.clone(), store.clone(), clock.clone())?);

        // Reload persisted scopes into governance.
        {
            let scopes_root = afs_segment(AREA_SCOPES);
            let mut loaded = Vec::new();
            for (path, record) in store.nodes_under(&scopes_root) {
                if record.meta.kind == NodeKind::Directory {
                    continue;
                }
                let name = path.name().unwrap_or_default().to_string();
                let text = String::from_utf8_lossy(&store.read(&path)?).into_owned();
                loaded.push(Scope::from_grant_file(&name, &text)?);
            }
            let mut governance = afs.governance().write().expect("governance lock");
            for scope in loaded {
                governance.put(scope);
            }
        }

        let provider = provider_from_selector(&config.provider.kind)?;
        let mut pipeline = Pipeline::new(afs.clone(), repo.clone(), provider);
        pipeline.instructions = config.session.instructions.clone();
        pipeline.scoring = config.scoring.to_scoring_config();

        let mut assembled = AfsSystem {
            afs,
            store,
            repo,
            pipeline,
            budget: config.token_budget(),
            store_dir,
            _lock: lock,
        };
        assembled.restore_persisted_mounts()?;
        if let Some(dir) = &config.scopes.path {
            assembled.load_scope_files(Path::new(dir))?;
        }
        Ok(assembled)
    }

    pub fn afs(&self) -> &Arc<Afs> {
        &self.afs
    }

    pub fn repository(&self) -> &Arc<Repository> {
        &self.repo
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn pipeline_mut(&mut self) -> &mut Pipeline {
        &mut self.pipeline
    }

    pub fn store(&self) -> &Arc<StoreInner> {
        &self.store
    }

    pub fn store_dir(&self) -> &Path {
        &self.store_dir
    }

    pub fn budget(&self) -> TokenBudget {
        self.budget
    }

    // ------------------------------------------------------------------
    // Persisted mounts
    // ------------------------------------------------------------------

    fn persisted_mounts(&self) -> Vec<PersistedMount> {
        let path = self.store_dir.join(MOUNTS_FILE);
        fs::read(&path)
            .ok()
            .and_then(|bytes| serde_json::from_slice(&bytes).ok())
            .unwrap_or_default()
    }

    fn write_persisted_mounts(&self, mounts: &[PersistedMount]) -> Result<()> {
        let path = self.store_dir.join(MOUNTS_FILE);
        fs::write(
            &path,
            serde_json::to_vec_pretty(mounts)
                .map_err(|e| AfsError::StoreFailure { reason: format!("serialize mounts: {e}") })?,
        )
        .map_err(|e| AfsError::store_io("write mounts", e))
    }

    fn restore_persisted_mounts(&mut self) -> Result<()> {
        let mut mounts = self.persisted_mounts();
        mounts.sort_by(|a, b| a.root().cmp(b.root()));
        let mut kept = Vec::new();
        for persisted in mounts {
            match self.establish(&persisted) {
                Ok(()) => kept.push(persisted),
                Err(_) => {
                    // The backend is gone (command missing, host dir
                    // removed): drop it from the persisted set. The
                    // failed mount event is already in the log.
                }
            }
        }
        self.write_persisted_mounts(&kept)
    }

    fn establish(&self, persisted: &PersistedMount) -> Result<()> {
        let system = Caller::system();
        match persisted {
            PersistedMount::Dir { root, config, read_only, max_depth } => {
                let backend = DirBackend::new(config.clone())?;
                let options = MountOptions {
                    read_only: *read_only,
                    max_depth: *max_depth,
                    exec_timeout_ms: DEFAULT_EXEC_TIMEOUT_MS,
                };
                self.afs.mount(&system, &AfsPath::parse(root)?, Arc::new(backend), options)?;
            }
            PersistedMount::Tool { root, config, exec_timeout_ms, max_depth } => {
                let backend = ToolBackend::spawn(config)?;
                let options = MountOptions {
                    read_only: true,
                    max_depth: *max_depth,
                    exec_timeout_ms: *exec_timeout_ms,
                };
                self.afs.mount(&system, &AfsPath::parse(root)?, Arc::new(backend), options)?;
            }
        }
        Ok(())
    }

    /// Mounts a host directory and persists the mount for future opens.
    pub fn mount_dir(
        &self,
        caller: &Caller,
        root: &AfsPath,
        config: DirBackendConfig,
        options: MountOptions,
    ) -> Result<()> {
        let backend = DirBackend::new(config.clone())?;
        self.afs.mount(caller, root, Arc::new(backend), options.clone())?;
        let mut mounts = self.persisted_mounts();
        mounts.push(PersistedMount::Dir {
            root: root.to_string(),
            config,
            read_only: options.read_only,
            max_depth: options.max_depth,
        });
        self.write_persisted_mounts(&mounts)
    }

    /// Spawns and mounts a tool process, persisting the mount.
    pub fn mount_tool(
        &self,
        caller: &Caller,
        root: &AfsPath,
        config: ToolProcessConfig,
        options: MountOptions,
    ) -> Result<()> {
        let backend = ToolBackend::spawn(&config)?;
        self.afs.mount(caller, root, Arc::new(backend), options.clone())?;
        let mut mounts = self.persisted_mounts();
        mounts.push(PersistedMount::Tool {
            root: root.to_string(),
            config,
            exec_timeout_ms: options.exec_timeout_ms,
            max_depth: options.max_depth,
        });
        self.write_persisted_mounts(&mounts)
    }

    /// Unmounts by root and removes any persisted entry.
    pub fn unmount(&self, caller: &Caller, root: &AfsPath) -> Result<()> {
        self.afs.unmount_root(caller, root)?;
        let mounts: Vec<PersistedMount> = self
            .persisted_mounts()
            .into_iter()
            .filter(|m| m.root() != root.to_string())
            .collect();
        self.write_persisted_mounts(&mounts)
    }

    // ------------------------------------------------------------------
    // Scopes
    // ------------------------------------------------------------------

    /// Defines a new scope, persisting it as a data node under
    /// `/context/scopes/` so it is versioned and audited like any other
    /// artifact.
    pub fn define_scope(&self, caller: &Caller, scope: Scope) -> Result<()> {
        define_scope_node(&self.afs, &self.repo, caller, &scope, true)
    }

    fn load_scope_files(&self, dir: &Path) -> Result<()> {
        if !dir.is_dir() {
            return Ok(());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| AfsError::store_io("read scopes dir", e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "scope").unwrap_or(false))
            .collect();
        paths.sort();
        for path in paths {
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            if name.is_empty() {
                continue;
            }
            let exists = {
                let governance = self.afs.governance().read().expect("governance lock");
                governance.contains(&name)
            };
            if exists {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| AfsError::store_io("read scope file", e))?;
            let scope = Scope::from_grant_file(&name, &text)?;
            self.define_scope(&Caller::system(), scope)?;
        }
        Ok(())
    }

    pub fn state_digest(&self) -> Result<String> {
        self.afs.state_digest()
    }
}

/// Writes the scope node and registers the scope. The node write goes
/// through the dispatcher so it is access-checked and logged.
pub(crate) fn define_scope_node(
    afs: &Arc<Afs>,
    repo: &Arc<Repository>,
    caller: &Caller,
    scope: &Scope,
    must_be_new: bool,
) -> Result<()> {
    {
        let governance = afs.governance().read().expect("governance lock");
        if governance.contains(&scope.name) && must_be_new {
            return Err(AfsError::DuplicateScope { name: scope.name.clone() });
        }
    }
    repo.ensure_area_mounted(AREA_SCOPES)?;
    let path = context_path(&[AREA_SCOPES, &scope.name]);
    afs.write(caller, &path, scope.to_grant_file().as_bytes(), &BTreeMap::new())?;
    let mut governance = afs.governance().write().expect("governance lock");
    governance.put(scope.clone());
    Ok(())
}

fn afs_segment(area: &str) -> AfsPath {
    AfsPath::from_segments([area]).expect("static segment")
}

/// Convenience for tests: a system over a fresh store in `dir` with the
/// stub provider and a logical clock.
pub fn open_in_dir(dir: &Path) -> Result<AfsSystem> {
    let mut config = AfsConfig::default();
    config.store.url = format!("file:{}", dir.join("store").display());
    AfsSystem::open(&config)
}
