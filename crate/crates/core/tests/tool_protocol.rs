//! Tool wire protocol edge cases: timeouts, malformed lines, id
//! mismatches, crashes.

mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use afs_core::afs::Caller;
use afs_core::backend::MountOptions;
use afs_core::backends::tool::{ToolBackend, ToolProcessConfig};
use common::{fresh_system, mock_tool_path, p};

fn tool_config(mode: &str) -> ToolProcessConfig {
    let mut env = BTreeMap::new();
    if !mode.is_empty() {
        env.insert("MOCK_TOOL_MODE".to_string(), mode.to_string());
    }
    ToolProcessConfig {
        command: mock_tool_path(),
        args: vec![],
        env,
        handshake_timeout_ms: 800,
    }
}

fn args() -> BTreeMap<String, serde_json::Value> {
    let mut args = BTreeMap::new();
    args.insert("query".to_string(), serde_json::Value::String("afs".to_string()));
    args
}

#[test]
fn handshake_timeout_when_the_tool_never_describes() {
    let err = ToolBackend::spawn(&tool_config("hang")).err().expect("must time out");
    assert_eq!(err.code(), "HandshakeTimeout");
}

#[test]
fn spawn_failure_is_a_tool_failure() {
    let config = ToolProcessConfig {
        command: "/definitely/not/a/command".to_string(),
        args: vec![],
        env: BTreeMap::new(),
        handshake_timeout_ms: 500,
    };
    let err = ToolBackend::spawn(&config).err().expect("must fail to spawn");
    assert_eq!(err.code(), "ToolFailure");
}

#[test]
fn malformed_reply_poisons_the_mount() {
    let (_dir, system) = fresh_system();
    let backend = ToolBackend::spawn(&tool_config("malformed")).unwrap();
    system
        .afs()
        .mount(
            &Caller::system(),
            &p("/modules/bad-tool"),
            Arc::new(backend),
            MountOptions { read_only: true, exec_timeout_ms: 800, ..MountOptions::default() },
        )
        .unwrap();
    let path = p("/modules/bad-tool/search_repositories");
    let err = system.afs().exec(&Caller::human(), &path, &args()).expect_err("must fail");
    assert_eq!(err.code(), "ProtocolViolation");
    // The mount is unusable afterwards, and the failure was logged.
    let err = system.afs().exec(&Caller::human(), &path, &args()).expect_err("poisoned");
    assert_eq!(err.code(), "ProtocolViolation");
    let logged = system
        .afs()
        .provenance()
        .events()
        .unwrap()
        .iter()
        .filter(|e| !e.outcome.is_ok())
        .count();
    assert!(logged >= 2);
}

#[test]
fn mismatched_reply_id_is_a_protocol_violation() {
    let (_dir, system) = fresh_system();
    let backend = ToolBackend::spawn(&tool_config("wrong-id")).unwrap();
    system
        .afs()
        .mount(
            &Caller::system(),
            &p("/modules/confused"),
            Arc::new(backend),
            MountOptions { read_only: true, exec_timeout_ms: 800, ..MountOptions::default() },
        )
        .unwrap();
    let err = system
        .afs()
        .exec(&Caller::human(), &p("/modules/confused/search_repositories"), &args())
        .expect_err("must fail");
    assert_eq!(err.code(), "ProtocolViolation");
}

#[test]
fn invoke_timeout_respects_the_mount_exec_timeout() {
    let (_dir, system) = fresh_system();
    let backend = ToolBackend::spawn(&tool_config("hang-on-invoke")).unwrap();
    system
        .afs()
        .mount(
            &Caller::system(),
            &p("/modules/sleepy"),
            Arc::new(backend),
            MountOptions { read_only: true, exec_timeout_ms: 300, ..MountOptions::default() },
        )
        .unwrap();
    let started = std::time::Instant::now();
    let err = system
        .afs()
        .exec(&Caller::human(), &p("/modules/sleepy/search_repositories"), &args())
        .expect_err("must time out");
    assert_eq!(err.code(), "ToolFailure");
    assert!(err.to_string().contains("timed out"));
    assert!(started.elapsed().as_millis() < 5_000);
}

#[test]
fn crash_mid_session_only_affects_that_mount() {
    let (_dir, system) = fresh_system();
    let dying = ToolBackend::spawn(&tool_config("crash-on-invoke")).unwrap();
    let healthy = ToolBackend::spawn(&tool_config("")).unwrap();
    system
        .afs()
        .mount(
            &Caller::system(),
            &p("/modules/dying"),
            Arc::new(dying),
            MountOptions { read_only: true, exec_timeout_ms: 800, ..MountOptions::default() },
        )
        .unwrap();
    system
        .afs()
        .mount(
            &Caller::system(),
            &p("/modules/healthy"),
            Arc::new(healthy),
            MountOptions { read_only: true, ..MountOptions::default() },
        )
        .unwrap();
    let err = system
        .afs()
        .exec(&Caller::human(), &p("/modules/dying/search_repositories"), &args())
        .expect_err("crash surfaces");
    assert_eq!(err.code(), "ToolFailure");
    let (result, _) = system
        .afs()
        .exec(&Caller::human(), &p("/modules/healthy/search_repositories"), &args())
        .unwrap();
    assert!(result.contains_key("items"));
}

#[test]
fn invoke_ids_match_request_ids_round_trip() {
    // Drive the wire protocol directly, no mount involved.
    use afs_core::backends::wire::{MessageType, WireMessage};
    use std::io::{BufRead, BufReader, Write};
    use std::process::{Command, Stdio};

    let mut child = Command::new(mock_tool_path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let mut reader = BufReader::new(child.stdout.take().unwrap());

    let mut send = |message: &WireMessage| {
        writeln!(stdin, "{}", message.encode().unwrap()).unwrap();
        stdin.flush().unwrap();
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        WireMessage::decode(line.trim_end()).unwrap()
    };

    let reply = send(&WireMessage::describe(0));
    assert_eq!(reply.id, 0);
    assert_eq!(reply.msg_type, MessageType::Result);

    for id in [7u64, 9, 42] {
        let reply = send(&WireMessage::invoke(id, "list_issues", {
            let mut args = BTreeMap::new();
            args.insert("repo".to_string(), serde_json::Value::String("afs".to_string()));
            args
        }));
        assert_eq!(reply.id, id, "response id must match request id");
        assert_eq!(reply.msg_type, MessageType::Result);
    }
    let _ = child.kill();
    let _ = child.wait();
}
