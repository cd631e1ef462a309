//! Tool wire protocol.
//!
//! Newline-delimited UTF-8 messages, one JSON object per line, no
//! embedded newlines. Message fields:
//!
//! ```text
//! {"id": <integer>, "type": "describe" | "invoke" | "result" | "error",
//!  "name"?, "args"?, "result"?, "message"?}
//! ```
//!
//! Handshake: the client sends `{"id":0,"type":"describe"}`; the server
//! replies `{"id":0,"type":"result","result":{"functions":[{name,
//! description,inputSchema,outputSchema}, ...]}}`. Invocations use
//! matching ids; servers answer each `invoke` with one `result` or
//! `error` line.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;

use crate::error::{AfsError, Result};
use crate::node::{FunctionDescriptor, Schema};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageType {
    Describe,
    Invoke,
    Result,
    Error,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireMessage {
    pub id: u64,
    #[serde(rename = "type")]
    pub msg_type: MessageType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub args: Option<BTreeMap<String, Value>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl WireMessage {
    pub fn describe(id: u64) -> Self {
        WireMessage { id, msg_type: MessageType::Describe, name: None, args: None, result: None, message: None }
    }

    pub fn invoke(id: u64, name: &str, args: BTreeMap<String, Value>) -> Self {
        WireMessage {
            id,
            msg_type: MessageType::Invoke,
            name: Some(name.to_string()),
            args: Some(args),
            result: None,
            message: None,
        }
    }

    pub fn result(id: u64, result: Value) -> Self {
        WireMessage { id, msg_type: MessageType::Result, name: None, args: None, result: Some(result), message: None }
    }

    pub fn error(id: u64, message: &str) -> Self {
        WireMessage {
            id,
            msg_type: MessageType::Error,
            name: None,
            args: None,
            result: None,
            message: Some(message.to_string()),
        }
    }

    /// One-line encoding; refuses payloads that would embed a newline.
    pub fn encode(&self) -> Result<String> {
        let line = serde_json::to_string(self)
            .map_err(|e| AfsError::ProtocolViolation { reason: format!("encode message: {e}") })?;
        if line.contains('\n') {
            return Err(AfsError::ProtocolViolation { reason: "message would embed a newline".into() });
        }
        Ok(line)
    }

    pub fn decode(line: &str) -> Result<WireMessage> {
        serde_json::from_str(line)
            .map_err(|e| AfsError::ProtocolViolation { reason: format!("malformed message line: {e}") })
    }
}

/// Function advertisement inside the describe result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionAd {
    pub name: String,
    pub description: String,
    #[serde(rename = "inputSchema")]
    pub input_schema: Schema,
    #[serde(rename = "outputSchema")]
    pub output_schema: Schema,
}

impl FunctionAd {
    pub fn descriptor(&self) -> FunctionDescriptor {
        FunctionDescriptor {
            description: self.description.clone(),
            input_schema: self.input_schema.clone(),
            output_schema: self.output_schema.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescribeResult {
    pub functions: Vec<FunctionAd>,
}

pub fn parse_describe_reply(reply: &WireMessage) -> Result<Vec<FunctionAd>> {
    if reply.id != 0 || reply.msg_type != MessageType::Result {
        return Err(AfsError::ProtocolViolation {
            reason: format!("handshake reply must be result id 0, got id {} type {:?}", reply.id, reply.msg_type),
        });
    }
    let result = reply.result.clone().ok_or_else(|| AfsError::ProtocolViolation {
        reason: "handshake reply carries no result".into(),
    })?;
    let described: DescribeResult = serde_json::from_value(result)
        .map_err(|e| AfsError::ProtocolViolation { reason: format!("handshake result malformed: {e}") })?;
    Ok(described.functions)
}
