//! Configuration file and environment handling.
//!
//! The config file is TOML with `key = value` sections; every field has
//! a default. Environment variables `AFS_STORE`, `AFS_PROVIDER` and
//! `AFS_CLOCK` override the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AfsError, Result};
use crate::pipeline::TokenBudget;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AfsConfig {
    pub store: StoreSection,
    pub provider: ProviderSection,
    pub budget: BudgetSection,
    pub scopes: ScopesSection,
    pub session: SessionSection,
    pub clock: ClockSection,
    pub scoring: ScoringSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreSection {
    pub url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSection {
    /// `stub` or `external:<command>`.
    pub kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetSection {
    pub max_tokens: u64,
    pub reserved_for_response: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScopesSection {
    /// Optional directory of `<name>.scope` grant files loaded (and
    /// persisted) at startup.
    pub path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSection {
    pub instructions: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockSection {
    /// `logical` (reproducible runs, the default) or `system`.
    pub kind: String,
}

impl Default for StoreSection {
    fn default() -> Self {
        StoreSection { url: "file:./afs-store".to_string() }
    }
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection { kind: "stub".to_string() }
    }
}

impl Default for BudgetSection {
    fn default() -> Self {
        BudgetSection { max_tokens: 2048, reserved_for_response: 256 }
    }
}

impl Default for SessionSection {
    fn default() -> Self {
        SessionSection { instructions: crate::pipeline::DEFAULT_INSTRUCTIONS.to_string() }
    }
}

impl Default for ClockSection {
    fn default() -> Self {
        ClockSection { kind: "logical".to_string() }
    }
}

/// Relevance scoring knobs; the formula itself is fixed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringSection {
    pub weight_cosine: f64,
    pub weight_recency: f64,
    pub weight_provenance: f64,
    pub half_life_days: f64,
    pub min_score: f64,
}

impl Default for ScoringSection {
    fn default() -> Self {
        let defaults = crate::pipeline::ScoringConfig::default();
        ScoringSection {
            weight_cosine: defaults.weight_cosine,
            weight_recency: defaults.weight_recency,
            weight_provenance: defaults.weight_provenance,
            half_life_days: defaults.half_life_days,
            min_score: defaults.min_score,
        }
    }
}

impl ScoringSection {
    pub fn to_scoring_config(&self) -> crate::pipeline::ScoringConfig {
        crate::pipeline::ScoringConfig {
            weight_cosine: self.weight_cosine,
            weight_recency: self.weight_recency,
            weight_provenance: self.weight_provenance,
            half_life_days: self.half_life_days,
            min_score: self.min_score,
            ..crate::pipeline::ScoringConfig::default()
        }
    }
}

impl AfsConfig {
    pub fn load(path: Option<&Path>) -> Result<AfsConfig> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| AfsError::ConfigError {
                    reason: format!("read {}: {e}", path.display()),
                })?;
                toml::from_str(&text).map_err(|e| AfsError::ConfigError {
                    reason: format!("parse {}: {e}", path.display()),
                })?
            }
            None => AfsConfig::default(),
        };
        if let Ok(store) = std::env::var("AFS_STORE") {
            if !store.is_empty() {
                config.store.url = store;
            }
        }
        if let Ok(provider) = std::env::var("AFS_PROVIDER") {
            if !provider.is_empty() {
                config.provider.kind = provider;
            }
        }
        if let Ok(clock) = std::env::var("AFS_CLOCK") {
            if !clock.is_empty() {
                config.clock.kind = clock;
            }
        }
        Ok(config)
    }

    pub fn token_budget(&self) -> TokenBudget {
        TokenBudget::new(self.budget.max_tokens, self.budget.reserved_for_response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_sane() {
        let config = AfsConfig::default();
        assert_eq!(config.provider.kind, "stub");
        assert_eq!(config.clock.kind, "logical");
        assert!(config.token_budget().usable().is_ok());
    }

    #[test]
    fn parses_partial_toml() {
        let text = "[store]\nurl = \"file:/tmp/s\"\n[budget]\nmax_tokens = 512\n";
        let config: AfsConfig = toml::from_str(text).unwrap();
        assert_eq!(config.store.url, "file:/tmp/s");
        assert_eq!(config.budget.max_tokens, 512);
        assert_eq!(config.budget.reserved_for_response, 256);
    }
}
