//! Virtual namespace paths.
//!
//! An [`AfsPath`] is an absolute path inside the mounted namespace. The
//! canonical text form is `/` followed by the segments joined with `/`;
//! the root is `/`. Segments are restricted to ASCII letters, digits,
//! dot, underscore and hyphen. Any input containing `..` is rejected
//! before resolution (sandbox rule), as are `.` segments, empty segments
//! and brace placeholders like `{agentID}` (documentation only).

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::AfsError;

/// Absolute path in the virtual namespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AfsPath {
    segments: Vec<String>,
}

fn valid_segment_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-'
}

impl AfsPath {
    /// The namespace root `/`.
    pub fn root() -> Self {
        AfsPath { segments: Vec::new() }
    }

    /// Parses canonical text form. Rejects relative paths, `.`/`..`
    /// segments, empty segments and characters outside the segment
    /// character class. A single trailing slash is tolerated.
    pub fn parse(input: &str) -> Result<Self, AfsError> {
        if input.contains("..") {
            return Err(AfsError::InvalidPath {
                path: input.to_string(),
                reason: "path traversal sequence \"..\" is rejected".into(),
            });
        }
        if input == "/" {
            return Ok(Self::root());
        }
        let Some(rest) = input.strip_prefix('/') else {
            return Err(AfsError::InvalidPath {
                path: input.to_string(),
                reason: "path must be absolute".into(),
            });
        };
        let rest = rest.strip_suffix('/').unwrap_or(rest);
        let mut segments = Vec::new();
        for seg in rest.split('/') {
            if seg.is_empty() {
                return Err(AfsError::InvalidPath {
                    path: input.to_string(),
                    reason: "empty path segment".into(),
                });
            }
            if seg == "." {
                return Err(AfsError::InvalidPath {
                    path: input.to_string(),
                    reason: "\".\" segment is not allowed".into(),
                });
            }
            if !seg.chars().all(valid_segment_char) {
                return Err(AfsError::InvalidPath {
                    path: input.to_string(),
                    reason: format!("segment {seg:?} contains invalid characters"),
                });
            }
            segments.push(seg.to_string());
        }
        Ok(AfsPath { segments })
    }

    /// Builds a path from already-validated segments.
    pub fn from_segments<I, S>(segments: I) -> Result<Self, AfsError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut text = String::new();
        for seg in segments {
            text.push('/');
            text.push_str(seg.as_ref());
        }
        if text.is_empty() {
            return Ok(Self::root());
        }
        Self::parse(&text)
    }

    pub fn is_root(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn depth(&self) -> usize {
        self.segments.len()
    }

    /// Last segment, if any.
    pub fn name(&self) -> Option<&str> {
        self.segments.last().map(|s| s.as_str())
    }

    pub fn parent(&self) -> Option<AfsPath> {
        if self.segments.is_empty() {
            return None;
        }
        Some(AfsPath { segments: self.segments[..self.segments.len() - 1].to_vec() })
    }

    /// Appends one validated segment.
    pub fn child(&self, segment: &str) -> Result<AfsPath, AfsError> {
        if segment.contains("..") || segment == "." || segment.is_empty()
            || !segment.chars().all(valid_segment_char)
        {
            return Err(AfsError::InvalidPath {
                path: format!("{}/{}", self, segment),
                reason: format!("invalid segment {segment:?}"),
            });
        }
        let mut segments = self.segments.clone();
        segments.push(segment.to_string());
        Ok(AfsPath { segments })
    }

    /// Appends all segments of `suffix`.
    pub fn join(&self, suffix: &AfsPath) -> AfsPath {
        let mut segments = self.segments.clone();
        segments.extend(suffix.segments.iter().cloned());
        AfsPath { segments }
    }

    /// True when `self` equals `prefix` or lies underneath it.
    pub fn starts_with(&self, prefix: &AfsPath) -> bool {
        self.segments.len() >= prefix.segments.len()
            && self.segments[..prefix.segments.len()] == prefix.segments[..]
    }

    /// Remaining segments of `self` below `prefix`.
    pub fn strip_prefix(&self, prefix: &AfsPath) -> Option<AfsPath> {
        if !self.starts_with(prefix) {
            return None;
        }
        Some(AfsPath { segments: self.segments[prefix.segments.len()..].to_vec() })
    }
}

impl fmt::Display for AfsPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.segments.is_empty() {
            return f.write_str("/");
        }
        for seg in &self.segments {
            write!(f, "/{seg}")?;
        }
        Ok(())
    }
}

/// Paths order by segment vectors, so a directory sorts immediately
/// before its descendants (tree pre-order). Note this differs from
/// ordering canonical strings when a sibling name extends another with
/// `.` or `-`, which sort below `/` in ASCII.
impl Ord for AfsPath {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.segments.cmp(&other.segments)
    }
}

impl PartialOrd for AfsPath {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for AfsPath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AfsPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        AfsPath::parse(&text).map_err(D::Error::custom)
    }
}

impl std::str::FromStr for AfsPath {
    type Err = AfsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AfsPath::parse(s)
    }
}
