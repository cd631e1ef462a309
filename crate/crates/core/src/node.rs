//! Node model: kinds, metadata and function descriptors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::AfsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Directory,
    Data,
    Executable,
}

impl NodeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeKind::Directory => "directory",
            NodeKind::Data => "data",
            NodeKind::Executable => "executable",
        }
    }
}

/// Metadata attached to every namespace node.
///
/// `revision_id` starts at 1 and increases by exactly one per successful
/// write or attribute change on the same path. `access_scope` names the
/// scope a node was created under; access decisions themselves are made
/// by the governance module from the caller's scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMetadata {
    #[serde(rename = "createdAt")]
    pub created_at: u64,
    #[serde(rename = "modifiedAt")]
    pub modified_at: u64,
    pub size: u64,
    pub kind: NodeKind,
    #[serde(rename = "sourceId", skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(rename = "revisionId")]
    pub revision_id: u64,
    #[serde(rename = "accessScope")]
    pub access_scope: String,
    #[serde(rename = "userAttrs")]
    pub user_attrs: BTreeMap<String, String>,
    /// Hidden from default listings when set; still readable by path.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub archived: bool,
}

impl NodeMetadata {
    pub fn directory(now: u64) -> Self {
        NodeMetadata {
            created_at: now,
            modified_at: now,
            size: 0,
            kind: NodeKind::Directory,
            source_id: None,
            revision_id: 1,
            access_scope: "system".to_string(),
            user_attrs: BTreeMap::new(),
            archived: false,
        }
    }
}

/// Field types accepted by function schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    String,
    Integer,
    Number,
    Boolean,
    Object,
    Array,
}

impl FieldType {
    fn matches(&self, value: &Value) -> bool {
        match self {
            FieldType::String => value.is_string(),
            FieldType::Integer => value.is_i64() || value.is_u64(),
            FieldType::Number => value.is_number(),
            FieldType::Boolean => value.is_boolean(),
            FieldType::Object => value.is_object(),
            FieldType::Array => value.is_array(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    #[serde(rename = "type")]
    pub field_type: FieldType,
    pub required: bool,
}

/// Structural schema: field name to spec. Schemas are closed — values
/// with undeclared fields are rejected.
pub type Schema = BTreeMap<String, FieldSpec>;

/// Descriptor carried by every executable node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDescriptor {
    pub description: String,
    #[serde(rename = "inputSchema")]
    pub input_schema: Schema,
    #[serde(rename = "outputSchema")]
    pub output_schema: Schema,
}

impl FunctionDescriptor {
    /// Canonical serialization; this is what `read` of an executable
    /// node returns.
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }
}

/// Validates a field map against a closed schema.
pub fn validate_schema(
    schema: &Schema,
    value: &BTreeMap<String, Value>,
    path: &str,
    side: &str,
) -> Result<(), AfsError> {
    for key in value.keys() {
        if !schema.contains_key(key) {
            return Err(AfsError::SchemaViolation {
                path: path.to_string(),
                reason: format!("{side} field {key:?} is not declared"),
            });
        }
    }
    for (key, spec) in schema {
        match value.get(key) {
            Some(v) => {
                if !spec.field_type.matches(v) {
                    return Err(AfsError::SchemaViolation {
                        path: path.to_string(),
                        reason: format!("{side} field {key:?} has wrong type"),
                    });
                }
            }
            None if spec.required => {
                return Err(AfsError::SchemaViolation {
                    path: path.to_string(),
                    reason: format!("{side} field {key:?} is required"),
                });
            }
            None => {}
        }
    }
    Ok(())
}

/// Convenience constructor used by tests and the mock tool.
pub fn field(field_type: FieldType, required: bool) -> FieldSpec {
    FieldSpec { field_type, required }
}
