//! Capability-aware backend contract suite.
//!
//! The same randomized property run executes against every backend
//! kind: path sandbox, longest-prefix resolution, list determinism,
//! revision monotonicity against a shadow model, and exactly one
//! transaction event per attempted operation.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use afs_core::afs::Caller;
use afs_core::backend::MountOptions;
use afs_core::backends::dir::{DirBackend, DirBackendConfig};
use afs_core::backends::function::{FunctionBackend, FunctionImpl};
use afs_core::backends::store::StoreView;
use afs_core::backends::tool::{ToolBackend, ToolProcessConfig};
use afs_core::node::{field, FieldType, FunctionDescriptor, Schema};
use afs_core::path::AfsPath;
use afs_core::system::AfsSystem;
use afs_core::{AfsError, NodeKind, SearchMode};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Dir,
    Store,
    Function,
    Tool,
}

impl BackendKind {
    pub fn all() -> [BackendKind; 4] {
        [BackendKind::Dir, BackendKind::Store, BackendKind::Function, BackendKind::Tool]
    }

    pub fn writable(&self) -> bool {
        matches!(self, BackendKind::Dir | BackendKind::Store)
    }

    pub fn executable(&self) -> bool {
        matches!(self, BackendKind::Function | BackendKind::Tool)
    }
}

fn function_backend() -> FunctionBackend {
    let mut input = Schema::new();
    input.insert("query".to_string(), field(FieldType::String, true));
    let mut output = Schema::new();
    output.insert("echo".to_string(), field(FieldType::String, true));
    let echo: FunctionImpl = Arc::new(|args| {
        let q = args.get("query").and_then(|v| v.as_str()).unwrap_or("");
        let mut out = BTreeMap::new();
        out.insert("echo".to_string(), serde_json::Value::String(q.to_string()));
        Ok(out)
    });
    let descriptor = FunctionDescriptor {
        description: "echoes its query".to_string(),
        input_schema: input,
        output_schema: output,
    };
    let mut input2 = Schema::new();
    input2.insert("repo".to_string(), field(FieldType::String, true));
    let descriptor2 = FunctionDescriptor {
        description: "always fails".to_string(),
        input_schema: input2,
        output_schema: Schema::new(),
    };
    let failing: FunctionImpl = Arc::new(|_| Err("intentional failure".to_string()));
    FunctionBackend::new(vec![
        ("echo_query".to_string(), descriptor, echo),
        ("always_fails".to_string(), descriptor2, failing),
    ])
    .expect("function backend")
}

/// Mounts the backend under test at `root` and returns the executable
/// node names it projects (empty for data backends).
pub fn mount_kind(
    system: &AfsSystem,
    kind: BackendKind,
    root: &AfsPath,
    scratch: &std::path::Path,
    mock_tool: &str,
) -> Vec<String> {
    let caller = Caller::system();
    match kind {
        BackendKind::Dir => {
            let host = scratch.join(format!("host-{}", root.to_string().replace('/', "_")));
            std::fs::create_dir_all(host.join("docs")).expect("host fixture");
            std::fs::write(host.join("readme.txt"), b"seed file one").expect("host fixture");
            std::fs::write(host.join("docs/notes.txt"), b"seed file two").expect("host fixture");
            let backend =
                DirBackend::new(DirBackendConfig { host_root: host, follow_symlinks: false })
                    .expect("dir backend");
            system
                .afs()
                .mount(&caller, root, Arc::new(backend), MountOptions::default())
                .expect("mount dir");
            vec![]
        }
        BackendKind::Store => {
            let prefix = AfsPath::parse(&format!(
                "/contract{}",
                root.to_string().replace('/', "-")
            ))
            .expect("prefix")
            .strip_prefix(&AfsPath::root())
            .expect("prefix");
            let view = StoreView::new(system.store().clone(), prefix);
            system
                .afs()
                .mount(&caller, root, Arc::new(view), MountOptions::default())
                .expect("mount store view");
            vec![]
        }
        BackendKind::Function => {
            system
                .afs()
                .mount(&caller, root, Arc::new(function_backend()), MountOptions::default())
                .expect("mount functions");
            vec!["always_fails".to_string(), "echo_query".to_string()]
        }
        BackendKind::Tool => {
            let backend = ToolBackend::spawn(&ToolProcessConfig {
                command: mock_tool.to_string(),
                args: vec![],
                env: BTreeMap::new(),
                handshake_timeout_ms: 5000,
            })
            .expect("spawn mock tool");
            system
                .afs()
                .mount(
                    &caller,
                    root,
                    Arc::new(backend),
                    MountOptions { read_only: true, ..MountOptions::default() },
                )
                .expect("mount tool");
            vec!["list_issues".to_string(), "search_repositories".to_string()]
        }
    }
}

const NAMES: &[&str] = &["alpha", "beta", "gamma", "delta", "nested/leaf", "docs/notes.txt", "readme.txt"];

/// One randomized operation sequence against a mounted backend.
/// Returns the number of operations attempted.
pub fn run_sequence(
    system: &AfsSystem,
    kind: BackendKind,
    root: &AfsPath,
    exec_nodes: &[String],
    rng: &mut ChaCha8Rng,
    ops: usize,
) -> usize {
    let caller = Caller::human();
    let afs = system.afs();
    let mut shadow: BTreeMap<AfsPath, (Vec<u8>, u64)> = BTreeMap::new();
    let mut attempted = 0usize;

    // Sandbox: traversal input is rejected before resolution and emits
    // no event.
    let before = afs.provenance().event_count();
    let err = AfsPath::parse(&format!("{root}/../escape")).expect_err("parse must fail");
    assert_eq!(err.code(), "InvalidPath");
    assert_eq!(afs.provenance().event_count(), before);

    for _ in 0..ops {
        let events_before = afs.provenance().event_count();
        let roll = rng.gen_range(0u32..100);
        match roll {
            // Write (or attempted write on read-only backends).
            0..=29 => {
                let name = NAMES[rng.gen_range(0..NAMES.len())];
                let path = root.join(&AfsPath::parse(&format!("/{name}")).unwrap());
                let content = format!("content-{}", rng.gen_range(0u32..4));
                let result = afs.write(&caller, &path, content.as_bytes(), &BTreeMap::new());
                attempted += 1;
                if kind.writable() {
                    let meta = result.expect("write must succeed on writable backend");
                    let entry = shadow.entry(path.clone()).or_insert((vec![], 0));
                    // Revision monotonicity: +1 per write (pre-existing
                    // host files start at 1, so the first write may land
                    // on 2).
                    if entry.1 > 0 {
                        assert_eq!(meta.revision_id, entry.1 + 1, "revision at {path}");
                    }
                    *entry = (content.into_bytes(), meta.revision_id);
                } else {
                    let err = result.expect_err("write must fail on read-only backend");
                    assert!(
                        matches!(err, AfsError::ReadOnlyMount { .. }),
                        "unexpected write error {err:?}"
                    );
                }
            }
            // Read a shadowed path (or probe a miss).
            30..=49 => {
                if let Some((path, (content, _))) = pick(&shadow, rng) {
                    let (bytes, meta) = afs.read(&caller, &path).expect("shadowed read");
                    assert_eq!(&bytes, content, "read-back at {path}");
                    assert_eq!(meta.revision_id, shadow[&path].1);
                } else {
                    let missing = root.join(&AfsPath::parse("/definitely-missing").unwrap());
                    let _ = afs.read(&caller, &missing);
                }
                attempted += 1;
            }
            // Stat root or a shadowed path.
            50..=59 => {
                let meta = afs.stat(&caller, root).expect("stat mount root");
                assert_eq!(meta.kind, NodeKind::Directory);
                attempted += 1;
            }
            // List twice: determinism.
            60..=74 => {
                let depth = rng.gen_range(1usize..4);
                let first = afs.list(&caller, root, depth).expect("list");
                attempted += 1;
                let again = afs.list(&caller, root, depth).expect("list twice");
                attempted += 1;
                let a: Vec<String> = first.iter().map(|(p, m)| format!("{p}|{}|{}", m.kind.as_str(), m.revision_id)).collect();
                let b: Vec<String> = again.iter().map(|(p, m)| format!("{p}|{}|{}", m.kind.as_str(), m.revision_id)).collect();
                assert_eq!(a, b, "list determinism under {root}");
                // Shadowed paths appear in deep-enough listings.
                if depth >= 2 {
                    for path in shadow.keys() {
                        if path.depth() <= root.depth() + depth {
                            assert!(
                                first.iter().any(|(p, _)| p == path),
                                "{path} missing from list of {root}"
                            );
                        }
                    }
                }
            }
            // Search.
            75..=84 => {
                let hits = afs
                    .search(&caller, root, "content", SearchMode::Substring, 10)
                    .expect("search");
                for hit in &hits {
                    assert!(hit.path.starts_with(root));
                }
                attempted += 1;
            }
            // Exec (or attempted exec on data backends).
            _ => {
                if kind.executable() && !exec_nodes.is_empty() {
                    let name = &exec_nodes[rng.gen_range(0..exec_nodes.len())];
                    let path = root.child(name).unwrap();
                    let mut args = BTreeMap::new();
                    let key = if name.contains("echo") || name.contains("search") { "query" } else { "repo" };
                    args.insert(key.to_string(), serde_json::Value::String("afs".to_string()));
                    let result = afs.exec(&caller, &path, &args);
                    if name.contains("fails") {
                        assert_eq!(result.expect_err("failing function").code(), "ToolFailure");
                    } else {
                        let (map, event_id) = result.expect("exec");
                        assert!(!map.is_empty() || name.contains("issues"));
                        assert!(event_id > events_before);
                    }
                } else {
                    let target = shadow
                        .keys()
                        .next()
                        .cloned()
                        .unwrap_or_else(|| root.child("missing").unwrap());
                    let err = afs
                        .exec(&caller, &target, &BTreeMap::new())
                        .expect_err("exec on data backend must fail");
                    assert!(
                        matches!(err, AfsError::NotExecutable { .. } | AfsError::NotFound { .. }),
                        "unexpected exec error {err:?}"
                    );
                }
                attempted += 1;
            }
        }
        // Exactly one event per attempted operation.
        let events_after = afs.provenance().event_count();
        let ops_this_round = attempted_delta(roll);
        assert_eq!(
            events_after - events_before,
            ops_this_round,
            "event accounting for roll {roll} on {kind:?}"
        );
    }
    attempted
}

fn attempted_delta(roll: u32) -> u64 {
    match roll {
        60..=74 => 2,
        _ => 1,
    }
}

fn pick<'a>(
    shadow: &'a BTreeMap<AfsPath, (Vec<u8>, u64)>,
    rng: &mut ChaCha8Rng,
) -> Option<(AfsPath, &'a (Vec<u8>, u64))> {
    if shadow.is_empty() {
        return None;
    }
    let idx = rng.gen_range(0..shadow.len());
    shadow.iter().nth(idx).map(|(p, v)| (p.clone(), v))
}

/// Longest-prefix resolution: with mounts at /a and /a/b, paths under
/// /a/b resolve to the inner backend.
pub fn check_longest_prefix(system: &AfsSystem, kind: BackendKind, scratch: &std::path::Path, mock_tool: &str) {
    let caller = Caller::system();
    let outer_root = AfsPath::parse("/lp/outer").unwrap();
    let outer_host = scratch.join("lp-outer");
    std::fs::create_dir_all(&outer_host).unwrap();
    std::fs::create_dir_all(outer_host.join("inner")).unwrap();
    std::fs::write(outer_host.join("inner/shadowed.txt"), b"outer copy").unwrap();
    let outer = DirBackend::new(DirBackendConfig { host_root: outer_host, follow_symlinks: false }).unwrap();
    system
        .afs()
        .mount(&caller, &outer_root, Arc::new(outer), MountOptions::default())
        .unwrap();

    let inner_root = AfsPath::parse("/lp/outer/inner").unwrap();
    let exec_nodes = mount_kind(system, kind, &inner_root, scratch, mock_tool);

    // The outer backend's file at inner/shadowed.txt is shadowed by the
    // inner mount.
    let human = Caller::human();
    let shadowed = AfsPath::parse("/lp/outer/inner/shadowed.txt").unwrap();
    match kind {
        BackendKind::Dir | BackendKind::Store => {
            // Fresh inner mounts have no such node.
            let err = system.afs().read(&human, &shadowed).expect_err("shadowed");
            assert_eq!(err.code(), "NotFound");
        }
        _ => {
            let err = system.afs().read(&human, &shadowed).expect_err("shadowed");
            assert_eq!(err.code(), "NotFound");
            let listed = system.afs().list(&human, &inner_root, 1).unwrap();
            let names: Vec<String> =
                listed.iter().filter_map(|(p, _)| p.name().map(String::from)).collect();
            assert_eq!(names, exec_nodes);
        }
    }

    // After unmounting the inner mount, the outer tree shows through.
    system.afs().unmount_root(&caller, &inner_root).unwrap();
    let (bytes, _) = system.afs().read(&human, &shadowed).expect("outer restored");
    assert_eq!(bytes, b"outer copy");
    system.afs().unmount_root(&caller, &outer_root).unwrap();
}

/// Entry point shared by the integration test and the acceptance gate.
/// Returns total operations attempted.
pub fn run_contract(system: &AfsSystem, scratch: &std::path::Path, mock_tool: &str, sequences_per_kind: &[(BackendKind, usize)], ops_per_sequence: usize, seed: u64) -> usize {
    let mut total = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (kind, sequences) in sequences_per_kind {
        let root = AfsPath::parse(&format!("/contract-{kind:?}").to_lowercase()).unwrap();
        let exec_nodes = mount_kind(system, *kind, &root, scratch, mock_tool);
        for _ in 0..*sequences {
            total += run_sequence(system, *kind, &root, &exec_nodes, &mut rng, ops_per_sequence);
        }
        system.afs().unmount_root(&Caller::system(), &root).unwrap();
        check_longest_prefix(system, *kind, scratch, mock_tool);
    }
    total
}
