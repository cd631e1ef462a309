//! Operator CLI over the agentic file system.
//!
//! Exit codes: 0 success, 1 user error, 2 access denied, 3 internal.
//! Errors print their code name on stderr. Output is plain and
//! line-oriented; `--json` switches to machine-readable form of the
//! same data.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use afs_core::afs::Caller;
use afs_core::backend::{MountOptions, DEFAULT_EXEC_TIMEOUT_MS, DEFAULT_MAX_DEPTH};
use afs_core::backends::dir::DirBackendConfig;
use afs_core::backends::tool::ToolProcessConfig;
use afs_core::config::AfsConfig;
use afs_core::error::{AfsError, Result};
use afs_core::governance::Scope;
use afs_core::path::AfsPath;
use afs_core::pipeline::TokenBudget;
use afs_core::repository::{RetentionPolicy, Verdict};
use afs_core::system::AfsSystem;
use afs_core::SearchMode;

#[derive(Parser)]
#[command(name = "afs", version, about = "Agentic file system shell")]
struct Cli {
    /// Configuration file (defaults to ./afs.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Store locator, e.g. file:./afs-store (overrides config and AFS_STORE).
    #[arg(long, global = true)]
    store: Option<String>,
    /// Act under a named scope instead of the full-access system scope.
    #[arg(long, global = true)]
    scope: Option<String>,
    /// Emit machine-readable JSON instead of plain lines.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attach a backend at a namespace root.
    Mount {
        #[command(subcommand)]
        kind: MountKind,
    },
    /// Detach a mount by root.
    Unmount { root: String },
    /// List descendants of a path.
    Ls {
        path: String,
        #[arg(long, default_value_t = 1)]
        depth: usize,
    },
    /// Print a node's content.
    Cat { path: String },
    /// Write a data node.
    Write {
        path: String,
        /// Inline content.
        #[arg(long, conflicts_with = "file")]
        content: Option<String>,
        /// Read content from a host file.
        #[arg(long)]
        file: Option<PathBuf>,
        /// User attributes, key=value (repeatable).
        #[arg(long = "attr")]
        attrs: Vec<String>,
    },
    /// Show a node's metadata.
    Stat { path: String },
    /// Set one user attribute.
    Attr { path: String, key: String, value: String },
    /// Search content under a path.
    Grep {
        path: String,
        query: String,
        #[arg(long, default_value = "substring")]
        mode: String,
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Execute an executable node.
    Exec {
        path: String,
        /// Arguments, key=value; values parse as JSON when possible.
        #[arg(long = "arg")]
        args: Vec<String>,
    },
    /// Scope management.
    Scope {
        #[command(subcommand)]
        action: ScopeAction,
    },
    /// Session runner.
    Session {
        #[command(subcommand)]
        action: SessionAction,
    },
    /// Context manifest inspection.
    Manifest {
        #[command(subcommand)]
        action: ManifestAction,
    },
    /// Human review workflow.
    Review {
        #[command(subcommand)]
        action: ReviewAction,
    },
    /// Transaction log audit.
    Log {
        #[command(subcommand)]
        action: LogAction,
    },
    /// Apply the retention policy.
    Gc {
        /// Policy file (TOML); defaults apply when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Evaluate the policy as of this UTC ms timestamp.
        #[arg(long)]
        now: Option<u64>,
    },
}

#[derive(Subcommand)]
enum MountKind {
    /// Mount a host directory.
    Dir {
        root: String,
        #[arg(long)]
        host: PathBuf,
        #[arg(long)]
        follow_symlinks: bool,
        #[command(flatten)]
        options: MountOpts,
    },
    /// Spawn and mount a tool process.
    Tool {
        root: String,
        #[arg(long)]
        command: String,
        #[arg(long = "arg")]
        args: Vec<String>,
        /// Environment passed to the tool, key=value (repeatable).
        #[arg(long = "env")]
        env: Vec<String>,
        #[arg(long, default_value_t = 5000)]
        handshake_timeout_ms: u64,
        #[command(flatten)]
        options: MountOpts,
    },
}

#[derive(Args)]
struct MountOpts {
    #[arg(long)]
    read_only: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    max_depth: usize,
    #[arg(long, default_value_t = DEFAULT_EXEC_TIMEOUT_MS)]
    exec_timeout_ms: u64,
}

#[derive(Subcommand)]
enum ScopeAction {
    /// Define a scope from a grant file (one `prefix<TAB>rights` per line).
    Define { name: String, file: PathBuf },
    /// Print a scope's grants.
    Show { name: String },
}

#[derive(Subcommand)]
enum SessionAction {
    /// Run a session script: one user turn per line, `#` comments.
    Run {
        script: PathBuf,
        #[arg(long, default_value = "agent")]
        agent: String,
    },
}

#[derive(Subcommand)]
enum ManifestAction {
    Show { id: String },
}

#[derive(Subcommand)]
enum ReviewAction {
    /// Evaluations awaiting review.
    List,
    Approve {
        reasoning_id: String,
        #[arg(long, default_value = "human")]
        by: String,
        #[arg(long, default_value = "")]
        note: String,
    },
    Correct {
        reasoning_id: String,
        #[arg(long)]
        text: String,
        #[arg(long, default_value = "human")]
        by: String,
        #[arg(long, default_value = "")]
        note: String,
    },
    Reject {
        reasoning_id: String,
        #[arg(long, default_value = "human")]
        by: String,
        #[arg(long, default_value = "")]
        note: String,
    },
    /// Re-run memory write-back for a reviewed reasoning session.
    Commit { reasoning_id: String },
}

#[derive(Subcommand)]
enum LogAction {
    /// Print the last N events.
    Tail {
        #[arg(short = 'n', long, default_value_t = 10)]
        count: usize,
    },
    /// Check event sequence, payload digests and the history hash chain.
    Verify,
    /// Reconstruct namespace state from the log and print its digest.
    Replay {
        #[arg(long)]
        up_to: Option<u64>,
    },
}

fn parse_kv(pairs: &[String]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for pair in pairs {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(AfsError::ConfigError { reason: format!("expected key=value, got {pair:?}") });
        };
        map.insert(key.to_string(), value.to_string());
    }
    Ok(map)
}

fn parse_args(pairs: &[String]) -> Result<BTreeMap<String, Value>> {
    let mut map = BTreeMap::new();
    for pair in pairs {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(AfsError::ConfigError { reason: format!("expected key=value, got {pair:?}") });
        };
        let parsed = serde_json::from_str(value).unwrap_or(Value::String(value.to_string()));
        map.insert(key.to_string(), parsed);
    }
    Ok(map)
}

fn load_config(cli: &Cli) -> Result<AfsConfig> {
    let default_path = PathBuf::from("afs.toml");
    let config_path = cli.config.clone().or_else(|| default_path.exists().then_some(default_path));
    let mut config = AfsConfig::load(config_path.as_deref())?;
    if let Some(store) = &cli.store {
        config.store.url = store.clone();
    }
    Ok(config)
}

fn caller_for(cli: &Cli) -> Caller {
    let mut caller = Caller::human();
    if let Some(scope) = &cli.scope {
        caller.scope = scope.clone();
    }
    caller
}

fn meta_json(path: &str, meta: &afs_core::NodeMetadata) -> Value {
    let mut value = serde_json::to_value(meta).expect("metadata serializes");
    value["path"] = json!(path);
    value
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let system = AfsSystem::open(&config)?;
    let caller = caller_for(cli);
    let afs = system.afs();
    let out = std::io::stdout();
    let mut out = out.lock();
    let emit = |out: &mut std::io::StdoutLock<'_>, line: &str| {
        let _ = writeln!(out, "{line}");
    };

    match &cli.command {
        Command::Mount { kind } => match kind {
            MountKind::Dir { root, host, follow_symlinks, options } => {
                let root = AfsPath::parse(root)?;
                system.mount_dir(
                    &caller,
                    &root,
                    DirBackendConfig { host_root: host.clone(), follow_symlinks: *follow_symlinks },
                    MountOptions {
                        read_only: options.read_only,
                        max_depth: options.max_depth,
                        exec_timeout_ms: options.exec_timeout_ms,
                    },
                )?;
                emit(&mut out, &format!("mounted {root}"));
            }
            MountKind::Tool { root, command, args, env, handshake_timeout_ms, options } => {
                let root = AfsPath::parse(root)?;
                system.mount_tool(
                    &caller,
                    &root,
                    ToolProcessConfig {
                        command: command.clone(),
                        args: args.clone(),
                        env: parse_kv(env)?,
                        handshake_timeout_ms: *handshake_timeout_ms,
                    },
                    MountOptions {
                        read_only: true,
                        max_depth: options.max_depth,
                        exec_timeout_ms: options.exec_timeout_ms,
                    },
                )?;
                emit(&mut out, &format!("mounted {root}"));
            }
        },
        Command::Unmount { root } => {
            let root = AfsPath::parse(root)?;
            system.unmount(&caller, &root)?;
            emit(&mut out, &format!("unmounted {root}"));
        }
        Command::Ls { path, depth } => {
            let path = AfsPath::parse(path)?;
            let items = afs.list(&caller, &path, *depth)?;
            if cli.json {
                let value: Vec<Value> =
                    items.iter().map(|(p, m)| meta_json(&p.to_string(), m)).collect();
                emit(&mut out, &serde_json::to_string_pretty(&value).expect("json"));
            } else {
                for (p, meta) in items {
                    emit(
                        &mut out,
                        &format!("{p}\t{}\t{}\t{}", meta.kind.as_str(), meta.revision_id, meta.size),
                    );
                }
            }
        }
        Command::Cat { path } => {
            let path = AfsPath::parse(path)?;
            let (bytes, _) = afs.read(&caller, &path)?;
            out.write_all(&bytes).map_err(|e| AfsError::store_io("write stdout", e))?;
        }
        Command::Write { path, content, file, attrs } => {
            let path = AfsPath::parse(path)?;
            let bytes = match (content, file) {
                (Some(content), None) => content.clone().into_bytes(),
                (None, Some(file)) => std::fs::read(file)
                    .map_err(|e| AfsError::ConfigError { reason: format!("read {}: {e}", file.display()) })?,
                _ => {
                    return Err(AfsError::ConfigError {
                        reason: "exactly one of --content or --file is required".into(),
                    })
                }
            };
            let meta = afs.write(&caller, &path, &bytes, &parse_kv(attrs)?)?;
            if cli.json {
                emit(&mut out, &serde_json::to_string_pretty(&meta_json(&path.to_string(), &meta)).expect("json"));
            } else {
                emit(&mut out, &format!("{path} rev {}", meta.revision_id));
            }
        }
        Command::Stat { path } => {
            let path = AfsPath::parse(path)?;
            let meta = afs.stat(&caller, &path)?;
            if cli.json {
                emit(&mut out, &serde_json::to_string_pretty(&meta_json(&path.to_string(), &meta)).expect("json"));
            } else {
                emit(&mut out, &format!("path: {path}"));
                emit(&mut out, &format!("kind: {}", meta.kind.as_str()));
                emit(&mut out, &format!("size: {}", meta.size));
                emit(&mut out, &format!("revisionId: {}", meta.revision_id));
                emit(&mut out, &format!("createdAt: {}", meta.created_at));
                emit(&mut out, &format!("modifiedAt: {}", meta.modified_at));
                emit(&mut out, &format!("accessScope: {}", meta.access_scope));
                if let Some(source) = &meta.source_id {
                    emit(&mut out, &format!("sourceId: {source}"));
                }
                if meta.archived {
                    emit(&mut out, "archived: true");
                }
                for (key, value) in &meta.user_attrs {
                    emit(&mut out, &format!("attr.{key}: {value}"));
                }
            }
        }
        Command::Attr { path, key, value } => {
            let path = AfsPath::parse(path)?;
            let meta = afs.set_attr(&caller, &path, key, value)?;
            emit(&mut out, &format!("{path} rev {}", meta.revision_id));
        }
        Command::Grep { path, query, mode, limit } => {
            let path = AfsPath::parse(path)?;
            let mode: SearchMode = mode.parse()?;
            let hits = afs.search(&caller, &path, query, mode, *limit)?;
            if cli.json {
                emit(&mut out, &serde_json::to_string_pretty(&hits).expect("json"));
            } else {
                for hit in hits {
                    emit(&mut out, &format!("{}\t{:.6}\t{}", hit.path, hit.score, hit.snippet));
                }
            }
        }
        Command::Exec { path, args } => {
            let path = AfsPath::parse(path)?;
            let (result, event_id) = afs.exec(&caller, &path, &parse_args(args)?)?;
            if cli.json {
                emit(
                    &mut out,
                    &serde_json::to_string_pretty(&json!({"result": result, "eventId": event_id}))
                        .expect("json"),
                );
            } else {
                emit(&mut out, &serde_json::to_string_pretty(&result).expect("json"));
            }
        }
        Command::Scope { action } => match action {
            ScopeAction::Define { name, file } => {
                let text = std::fs::read_to_string(file)
                    .map_err(|e| AfsError::ConfigError { reason: format!("read {}: {e}", file.display()) })?;
                let scope = Scope::from_grant_file(name, &text)?;
                system.define_scope(&caller, scope)?;
                emit(&mut out, &format!("defined {name}"));
            }
            ScopeAction::Show { name } => {
                let governance = afs.governance().read().expect("governance lock");
                let scope = governance.get(name)?;
                if cli.json {
                    emit(&mut out, &serde_json::to_string_pretty(scope).expect("json"));
                } else {
                    out.write_all(scope.to_grant_file().as_bytes())
                        .map_err(|e| AfsError::store_io("write stdout", e))?;
                }
            }
        },
        Command::Session { action } => match action {
            SessionAction::Run { script, agent } => {
                let text = std::fs::read_to_string(script)
                    .map_err(|e| AfsError::ConfigError { reason: format!("read {}: {e}", script.display()) })?;
                let turns: Vec<String> = text.lines().map(str::to_string).collect();
                let budget: TokenBudget = system.budget();
                let transcript = system.pipeline().run_session(&turns, agent, &budget)?;
                if cli.json {
                    emit(&mut out, &serde_json::to_string_pretty(&transcript).expect("json"));
                } else {
                    for (idx, turn) in transcript.turns.iter().enumerate() {
                        emit(&mut out, &format!("turn {}> {}", idx + 1, turn.turn));
                        for line in turn.reply.lines() {
                            emit(&mut out, &format!("  {line}"));
                        }
                        emit(
                            &mut out,
                            &format!(
                                "  manifest={} reasoning={} confidence={:.3} review={} committed={}",
                                turn.manifest_id,
                                turn.reasoning_id,
                                turn.confidence,
                                turn.review_required,
                                if turn.committed.is_empty() { "-".to_string() } else { turn.committed.join(",") },
                            ),
                        );
                    }
                }
            }
        },
        Command::Manifest { action } => match action {
            ManifestAction::Show { id } => {
                let manifest = system.pipeline().manifest_by_id(id)?;
                if cli.json {
                    emit(&mut out, &serde_json::to_string_pretty(&manifest).expect("json"));
                } else {
                    emit(&mut out, &format!("manifest: {}", manifest.manifest_id));
                    emit(&mut out, &format!("reasoning: {}", manifest.reasoning_id));
                    emit(&mut out, &format!("agent: {}", manifest.agent_id));
                    emit(
                        &mut out,
                        &format!(
                            "budget: {} usable (max {} reserved {})",
                            manifest.budget.usable().map(|u| u.to_string()).unwrap_or_else(|_| "invalid".into()),
                            manifest.budget.max_tokens,
                            manifest.budget.reserved_for_response
                        ),
                    );
                    emit(&mut out, &format!("totalTokens: {}", manifest.total_tokens));
                    emit(&mut out, "included:");
                    for item in &manifest.included {
                        emit(
                            &mut out,
                            &format!(
                                "  {} rev={} tokens={} score={:.6} ({})",
                                item.path, item.revision_id, item.est_tokens, item.score, item.reason
                            ),
                        );
                    }
                    emit(&mut out, "excluded:");
                    for item in &manifest.excluded {
                        emit(&mut out, &format!("  {} ({})", item.path, serde_json::to_string(&item.reason).expect("json").trim_matches('"')));
                    }
                    if !manifest.compression_applied.is_empty() {
                        emit(&mut out, "compression:");
                        for c in &manifest.compression_applied {
                            emit(
                                &mut out,
                                &format!("  {} {} {} -> {}", c.path, c.method, c.before_tokens, c.after_tokens),
                            );
                        }
                    }
                }
            }
        },
        Command::Review { action } => match action {
            ReviewAction::List => {
                let items = system.pipeline().pending_reviews()?;
                if cli.json {
                    emit(&mut out, &serde_json::to_string_pretty(&items).expect("json"));
                } else {
                    for item in items {
                        emit(
                            &mut out,
                            &format!(
                                "{}\tconfidence={:.3}\talignment={:.3}\tcontradictions={}\tverdict={}\tcommitted={}",
                                item.reasoning_id,
                                item.confidence,
                                item.factual_alignment,
                                item.contradictions,
                                item.latest_verdict
                                    .map(|v| format!("{v:?}").to_lowercase())
                                    .unwrap_or_else(|| "-".to_string()),
                                item.committed
                            ),
                        );
                    }
                }
            }
            ReviewAction::Approve { reasoning_id, by, note } => {
                let path = system.pipeline().annotate(&caller, reasoning_id, by, Verdict::Approve, None, note)?;
                emit(&mut out, &format!("{path}"));
            }
            ReviewAction::Correct { reasoning_id, text, by, note } => {
                let path = system.pipeline().annotate(
                    &caller,
                    reasoning_id,
                    by,
                    Verdict::Correct,
                    Some(text.clone()),
                    note,
                )?;
                emit(&mut out, &format!("{path}"));
            }
            ReviewAction::Reject { reasoning_id, by, note } => {
                let path = system.pipeline().annotate(&caller, reasoning_id, by, Verdict::Reject, None, note)?;
                emit(&mut out, &format!("{path}"));
            }
            ReviewAction::Commit { reasoning_id } => {
                let entries = system.pipeline().commit_by_reasoning(&caller, reasoning_id)?;
                for entry in entries {
                    emit(&mut out, &format!("{}", entry.path));
                }
            }
        },
        Command::Log { action } => match action {
            LogAction::Tail { count } => {
                for event in afs.provenance().tail(*count)? {
                    emit(&mut out, &serde_json::to_string(&event).expect("json"));
                }
            }
            LogAction::Verify => {
                let events = afs.provenance().verify()?;
                let records = system.repository().verify_chain()?;
                let _ = records;
                emit(&mut out, &format!("OK {events} events"));
            }
            LogAction::Replay { up_to } => {
                let digest = afs.provenance().replay(*up_to)?;
                emit(&mut out, &digest);
            }
        },
        Command::Gc { policy, now } => {
            let policy = match policy {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| AfsError::ConfigError { reason: format!("read {}: {e}", path.display()) })?;
                    toml::from_str::<RetentionPolicy>(&text)
                        .map_err(|e| AfsError::ConfigError { reason: format!("parse policy: {e}") })?
                }
                None => RetentionPolicy::default(),
            };
            let now = now.unwrap_or_else(|| {
                use afs_core::clock::Clock;
                afs_core::clock::SystemClock::new().now_ms()
            });
            let report = system.repository().apply_retention(&caller, &policy, now)?;
            if cli.json {
                emit(&mut out, &serde_json::to_string_pretty(&report).expect("json"));
            } else if report.is_empty() {
                emit(&mut out, "empty report");
            } else {
                emit(&mut out, &format!("archived pads: {}", report.archived_pads.join(" ")));
                emit(&mut out, &format!("archived memory: {}", report.archived_memory.join(" ")));
                emit(
                    &mut out,
                    &format!(
                        "compacted blocks: {}",
                        report.compacted_blocks.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
                    ),
                );
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("{err}");
            std::process::exit(err.exit_code());
        }
    }
}
