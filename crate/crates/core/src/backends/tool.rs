//! External tool-process mount.
//!
//! Spawns the configured command and speaks the tool wire protocol over
//! its stdio. The descriptor list received at handshake defines the
//! executable nodes projected under the mount root. Invocations are
//! serialized per mount; a crashed or misbehaving tool surfaces as
//! `ToolFailure`/`ProtocolViolation` on this mount only.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{Backend, BackendCaps, NodeRecord, ResolvedPath};
use crate::backends::wire::{parse_describe_reply, MessageType, WireMessage};
use crate::digest::{sha256_hex, EMPTY_SHA256};
use crate::error::{AfsError, Result};
use crate::node::{FunctionDescriptor, NodeKind, NodeMetadata};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolProcessConfig {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    /// Environment passed through to the tool process (token-injection
    /// pattern).
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(rename = "handshakeTimeoutMs", default = "default_handshake_timeout")]
    pub handshake_timeout_ms: u64,
}

fn default_handshake_timeout() -> u64 {
    5_000
}

struct ToolIo {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    next_id: u64,
    poisoned: Option<String>,
}

pub struct ToolBackend {
    command: String,
    functions: BTreeMap<String, FunctionDescriptor>,
    io: Mutex<ToolIo>,
}

impl ToolBackend {
    /// Spawns the tool and performs the describe handshake.
    pub fn spawn(config: &ToolProcessConfig) -> Result<ToolBackend> {
        let mut command = Command::new(&config.command);
        command
            .args(&config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        for (key, value) in &config.env {
            command.env(key, value);
        }
        let mut child = command.spawn().map_err(|e| AfsError::ToolFailure {
            path: config.command.clone(),
            reason: format!("spawn failed: {e}"),
        })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let (tx, rx) = std::sync::mpsc::channel::<String>();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                match line {
                    Ok(line) => {
                        if tx.send(line).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });

        let mut io = ToolIo { child, stdin: Some(stdin), lines: rx, next_id: 1, poisoned: None };

        let handshake = WireMessage::describe(0).encode()?;
        Self::send_line(&mut io, &handshake, &config.command)?;
        let line = match io.lines.recv_timeout(Duration::from_millis(config.handshake_timeout_ms)) {
            Ok(line) => line,
            Err(_) => {
                let _ = io.child.kill();
                return Err(AfsError::HandshakeTimeout {
                    command: config.command.clone(),
                    timeout_ms: config.handshake_timeout_ms,
                });
            }
        };
        let reply = WireMessage::decode(&line).inspect_err(|_| {
            let _ = io.child.kill();
        })?;
        let ads = parse_describe_reply(&reply).inspect_err(|_| {
            let _ = io.child.kill();
        })?;
        let mut functions = BTreeMap::new();
        for ad in ads {
            if functions.insert(ad.name.clone(), ad.descriptor()).is_some() {
                let _ = io.child.kill();
                return Err(AfsError::DuplicateName { name: ad.name });
            }
        }
        Ok(ToolBackend { command: config.command.clone(), functions, io: Mutex::new(io) })
    }

    fn send_line(io: &mut ToolIo, line: &str, command: &str) -> Result<()> {
        let stdin = io.stdin.as_mut().ok_or_else(|| AfsError::ToolFailure {
            path: command.to_string(),
            reason: "tool stdin closed".into(),
        })?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
            .map_err(|e| AfsError::ToolFailure {
                path: command.to_string(),
                reason: format!("tool process unreachable: {e}"),
            })
    }

    fn descriptor(&self, path: &ResolvedPath) -> Result<&FunctionDescriptor> {
        let segments = path.rel.segments();
        if segments.len() != 1 {
            return Err(AfsError::NotFound { path: path.full_text() });
        }
        self.functions
            .get(&segments[0])
            .ok_or_else(|| AfsError::NotFound { path: path.full_text() })
    }

    /// Terminates the tool process. Used on unmount and by tests that
    /// exercise mid-session crashes.
    pub fn terminate(&self) {
        let mut io = self.io.lock().expect("tool io lock");
        let _ = io.child.kill();
        let _ = io.child.wait();
        io.stdin = None;
    }
}

impl Drop for ToolBackend {
    fn drop(&mut self) {
        if let Ok(mut io) = self.io.lock() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}

impl Backend for ToolBackend {
    fn caps(&self) -> BackendCaps {
        BackendCaps { writable: false, executable: true }
    }

    fn node(&self, path: &ResolvedPath) -> Result<NodeRecord> {
        if path.rel.is_root() {
            return Ok(NodeRecord {
                meta: NodeMetadata::directory(0),
                content_hash: EMPTY_SHA256.to_string(),
                descriptor: None,
            });
        }
        let descriptor = self.descriptor(path)?;
        let text = descriptor.to_text();
        Ok(NodeRecord {
            meta: NodeMetadata {
                created_at: 0,
                modified_at: 0,
                size: text.len() as u64,
                kind: NodeKind::Executable,
                source_id: None,
                revision_id: 1,
                access_scope: "system".to_string(),
                user_attrs: BTreeMap::new(),
                archived: false,
            },
            content_hash: sha256_hex(text.as_bytes()),
            descriptor: Some(descriptor.clone()),
        })
    }

    fn children(&self, path: &ResolvedPath) -> Result<Vec<String>> {
        if path.rel.is_root() {
            return Ok(self.functions.keys().cloned().collect());
        }
        self.descriptor(path)?;
        Ok(vec![])
    }

    fn read(&self, path: &ResolvedPath) -> Result<Vec<u8>> {
        if path.rel.is_root() {
            return Err(AfsError::IsDirectory { path: path.full_text() });
        }
        Ok(self.descriptor(path)?.to_text().into_bytes())
    }

    fn exec(
        &self,
        path: &ResolvedPath,
        args: &BTreeMap<String, Value>,
        timeout_ms: u64,
    ) -> Result<BTreeMap<String, Value>> {
        let name = match path.rel.segments() {
            [name] => name.clone(),
            _ => return Err(AfsError::NotExecutable { path: path.full_text() }),
        };
        if !self.functions.contains_key(&name) {
            return Err(AfsError::NotFound { path: path.full_text() });
        }
        let mut io = self.io.lock().expect("tool io lock");
        if let Some(reason) = &io.poisoned {
            return Err(AfsError::ProtocolViolation { reason: reason.clone() });
        }
        let id = io.next_id;
        io.next_id += 1;
        let request = WireMessage::invoke(id, &name, args.clone()).encode()?;
        Self::send_line(&mut io, &request, &self.command)?;
        let line = match io.lines.recv_timeout(Duration::from_millis(timeout_ms)) {
            Ok(line) => line,
            Err(RecvTimeoutError::Timeout) => {
                return Err(AfsError::ToolFailure {
                    path: path.full_text(),
                    reason: format!("invoke timed out after {timeout_ms} ms"),
                });
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(AfsError::ToolFailure {
                    path: path.full_text(),
                    reason: "tool process ended".into(),
                });
            }
        };
        let reply = match WireMessage::decode(&line) {
            Ok(reply) => reply,
            Err(err) => {
                io.poisoned = Some(format!("mount unusable after malformed line: {err}"));
                return Err(err);
            }
        };
        if reply.id != id {
            let reason = format!("response id {} does not match request id {id}", reply.id);
            io.poisoned = Some(format!("mount unusable: {reason}"));
            return Err(AfsError::ProtocolViolation { reason });
        }
        match reply.msg_type {
            MessageType::Result => {
                let value = reply.result.unwrap_or(Value::Null);
                match value {
                    Value::Object(map) => Ok(map.into_iter().collect()),
                    _ => {
                        let reason = "result payload must be an object".to_string();
                        io.poisoned = Some(format!("mount unusable: {reason}"));
                        Err(AfsError::ProtocolViolation { reason })
                    }
                }
            }
            MessageType::Error => Err(AfsError::ToolFailure {
                path: path.full_text(),
                reason: reply.message.unwrap_or_else(|| "tool reported an error".into()),
            }),
            other => {
                let reason = format!("unexpected message type {other:?} in reply");
                io.poisoned = Some(format!("mount unusable: {reason}"));
                Err(AfsError::ProtocolViolation { reason })
            }
        }
    }
}
