//! Access scopes and ACL enforcement.
//!
//! A scope is a named list of grants, each a path prefix with a set of
//! rights. Decisions are deny-by-default: among the grants whose prefix
//! matches the path, the longest prefix decides; if it does not carry
//! the requested right — or nothing matches — access is denied.
//! `check_access` is a pure function of (scope, path, right).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{AfsError, Result};
use crate::path::AfsPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Right {
    Read,
    Write,
    Exec,
    List,
}

impl Right {
    pub fn as_str(&self) -> &'static str {
        match self {
            Right::Read => "read",
            Right::Write => "write",
            Right::Exec => "exec",
            Right::List => "list",
        }
    }

    pub fn parse(text: &str) -> Result<Right> {
        match text {
            "read" => Ok(Right::Read),
            "write" => Ok(Right::Write),
            "exec" => Ok(Right::Exec),
            "list" => Ok(Right::List),
            other => Err(AfsError::ConfigError { reason: format!("unknown right {other:?}") }),
        }
    }
}

/// Set of rights, kept sorted for a stable text form.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rights(Vec<Right>);

impl Rights {
    pub fn of(rights: &[Right]) -> Self {
        let mut v = rights.to_vec();
        v.sort();
        v.dedup();
        Rights(v)
    }

    pub fn all() -> Self {
        Rights::of(&[Right::Read, Right::Write, Right::Exec, Right::List])
    }

    pub fn contains(&self, right: Right) -> bool {
        self.0.contains(&right)
    }

    pub fn merge(&mut self, other: &Rights) {
        for r in &other.0 {
            if !self.0.contains(r) {
                self.0.push(*r);
            }
        }
        self.0.sort();
    }

    /// Comma-separated text form, e.g. `read,write`.
    pub fn parse(text: &str) -> Result<Rights> {
        let mut rights = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            rights.push(Right::parse(part)?);
        }
        Ok(Rights::of(&rights))
    }
}

impl fmt::Display for Rights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|r| r.as_str()).collect();
        f.write_str(&parts.join(","))
    }
}

/// A named scope: prefix grants, longest prefix decides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scope {
    pub name: String,
    /// Keyed by prefix; duplicate prefixes merge their rights.
    pub grants: BTreeMap<AfsPath, Rights>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccessDecision {
    Allow,
    Deny { reason: String },
}

impl AccessDecision {
    pub fn is_allow(&self) -> bool {
        matches!(self, AccessDecision::Allow)
    }
}

impl Scope {
    pub fn new(name: &str, grants: Vec<(AfsPath, Rights)>) -> Self {
        let mut map: BTreeMap<AfsPath, Rights> = BTreeMap::new();
        for (prefix, rights) in grants {
            map.entry(prefix).or_default().merge(&rights);
        }
        Scope { name: name.to_string(), grants: map }
    }

    /// Pure decision: longest matching prefix decides, deny by default.
    pub fn check(&self, path: &AfsPath, right: Right) -> AccessDecision {
        let mut best: Option<(&AfsPath, &Rights)> = None;
        for (prefix, rights) in &self.grants {
            if path.starts_with(prefix) {
                match best {
                    Some((bp, _)) if bp.depth() >= prefix.depth() => {}
                    _ => best = Some((prefix, rights)),
                }
            }
        }
        match best {
            Some((prefix, rights)) if rights.contains(right) => {
                let _ = prefix;
                AccessDecision::Allow
            }
            Some((prefix, _)) => AccessDecision::Deny {
                reason: format!(
                    "scope {:?} grants no {} under {}",
                    self.name,
                    right.as_str(),
                    prefix
                ),
            },
            None => AccessDecision::Deny {
                reason: format!("scope {:?} has no grant matching {}", self.name, path),
            },
        }
    }

    /// One grant per line: `prefix<TAB>rights`.
    pub fn to_grant_file(&self) -> String {
        let mut out = String::new();
        for (prefix, rights) in &self.grants {
            out.push_str(&format!("{prefix}\t{rights}\n"));
        }
        out
    }

    pub fn from_grant_file(name: &str, text: &str) -> Result<Scope> {
        let mut grants = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((prefix, rights)) = line.split_once('\t') else {
                return Err(AfsError::ConfigError {
                    reason: format!("scope file line {}: expected prefix<TAB>rights", idx + 1),
                });
            };
            grants.push((AfsPath::parse(prefix.trim())?, Rights::parse(rights)?));
        }
        Ok(Scope::new(name, grants))
    }
}

/// In-memory registry of scopes. Persistence under `/context/scopes/` is
/// handled by the system assembly, which funnels definitions through
/// here first.
#[derive(Default)]
pub struct ScopeRegistry {
    scopes: BTreeMap<String, Scope>,
}

/// Name of the built-in all-access scope used by system internals and
/// the CLI operator.
pub const SYSTEM_SCOPE: &str = "system";
/// Built-in reviewer scope: read everywhere under /context, write only
/// under /context/human.
pub const REVIEWER_SCOPE: &str = "reviewer";

impl ScopeRegistry {
    pub fn with_builtins() -> Self {
        let mut reg = ScopeRegistry::default();
        let root = AfsPath::root();
        reg.scopes.insert(
            SYSTEM_SCOPE.to_string(),
            Scope::new(SYSTEM_SCOPE, vec![(root, Rights::all())]),
        );
        let context = AfsPath::parse("/context").expect("static path");
        let human = AfsPath::parse("/context/human").expect("static path");
        reg.scopes.insert(
            REVIEWER_SCOPE.to_string(),
            Scope::new(
                REVIEWER_SCOPE,
                vec![
                    (context, Rights::of(&[Right::Read, Right::List])),
                    (human, Rights::of(&[Right::Read, Right::Write, Right::List])),
                ],
            ),
        );
        reg
    }

    pub fn define(&mut self, scope: Scope) -> Result<()> {
        if self.scopes.contains_key(&scope.name) {
            return Err(AfsError::DuplicateScope { name: scope.name });
        }
        self.scopes.insert(scope.name.clone(), scope);
        Ok(())
    }

    /// Inserts or replaces; used when reloading persisted scopes.
    pub fn put(&mut self, scope: Scope) {
        self.scopes.insert(scope.name.clone(), scope);
    }

    pub fn get(&self, name: &str) -> Result<&Scope> {
        self.scopes.get(name).ok_or_else(|| AfsError::ScopeUnknown { name: name.to_string() })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.scopes.contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.scopes.keys().cloned().collect()
    }

    pub fn check_access(&self, scope_name: &str, path: &AfsPath, right: Right) -> Result<AccessDecision> {
        Ok(self.get(scope_name)?.check(path, right))
    }
}
