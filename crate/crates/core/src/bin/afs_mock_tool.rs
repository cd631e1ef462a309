//! Bundled mock tool process.
//!
//! Speaks the tool wire protocol on stdio and advertises two functions
//! with canned responses: `search_repositories` and `list_issues`.
//! Misbehavior modes for tests are selected with the `MOCK_TOOL_MODE`
//! environment variable:
//!
//! - `normal` (default): well-behaved canned responses
//! - `hang`: never answers the describe handshake
//! - `malformed`: answers the first invoke with a non-protocol line
//! - `crash-on-invoke`: exits mid-session on the first invoke
//! - `hang-on-invoke`: accepts invokes but never answers them
//! - `wrong-id`: answers invokes with a mismatched id

use std::io::{BufRead, Write};

use serde_json::json;

use afs_core::backends::wire::{DescribeResult, FunctionAd, MessageType, WireMessage};
use afs_core::node::{field, FieldType, Schema};

fn advertised_functions() -> Vec<FunctionAd> {
    let mut search_in = Schema::new();
    search_in.insert("query".to_string(), field(FieldType::String, true));
    let mut search_out = Schema::new();
    search_out.insert("items".to_string(), field(FieldType::Array, true));

    let mut issues_in = Schema::new();
    issues_in.insert("repo".to_string(), field(FieldType::String, true));
    let mut issues_out = Schema::new();
    issues_out.insert("issues".to_string(), field(FieldType::Array, true));

    vec![
        FunctionAd {
            name: "search_repositories".to_string(),
            description: "Search repositories by free-text query".to_string(),
            input_schema: search_in,
            output_schema: search_out,
        },
        FunctionAd {
            name: "list_issues".to_string(),
            description: "List open issues of a repository".to_string(),
            input_schema: issues_in,
            output_schema: issues_out,
        },
    ]
}

fn canned_response(name: &str) -> Option<serde_json::Value> {
    match name {
        "search_repositories" => Some(json!({
            "items": [
                {"name": "context-afs", "url": "https://example.org/context-afs"},
                {"name": "afs-tools", "url": "https://example.org/afs-tools"}
            ]
        })),
        "list_issues" => Some(json!({
            "issues": [
                {"id": 1, "title": "mount table race"},
                {"id": 2, "title": "index staleness"}
            ]
        })),
        _ => None,
    }
}

fn main() {
    let mode = std::env::var("MOCK_TOOL_MODE").unwrap_or_else(|_| "normal".to_string());
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let Ok(message) = WireMessage::decode(&line) else {
            let reply = WireMessage::error(0, "malformed request");
            let _ = writeln!(out, "{}", reply.encode().unwrap());
            let _ = out.flush();
            continue;
        };
        match message.msg_type {
            MessageType::Describe => {
                if mode == "hang" {
                    // Swallow the handshake; the client times out.
                    continue;
                }
                let result = serde_json::to_value(DescribeResult { functions: advertised_functions() })
                    .expect("describe result serializes");
                let reply = WireMessage::result(message.id, result);
                let _ = writeln!(out, "{}", reply.encode().unwrap());
                let _ = out.flush();
            }
            MessageType::Invoke => {
                match mode.as_str() {
                    "crash-on-invoke" => std::process::exit(42),
                    "hang-on-invoke" => continue,
                    "malformed" => {
                        let _ = writeln!(out, "this is not a protocol message");
                        let _ = out.flush();
                        continue;
                    }
                    _ => {}
                }
                let reply_id = if mode == "wrong-id" { message.id + 99 } else { message.id };
                let name = message.name.as_deref().unwrap_or("");
                let reply = match canned_response(name) {
                    Some(result) => WireMessage::result(reply_id, result),
                    None => WireMessage::error(reply_id, &format!("unknown function {name:?}")),
                };
                let _ = writeln!(out, "{}", reply.encode().unwrap());
                let _ = out.flush();
            }
            _ => {
                let reply = WireMessage::error(message.id, "unexpected message type");
                let _ = writeln!(out, "{}", reply.encode().unwrap());
                let _ = out.flush();
            }
        }
    }
}
