//! Model provider contract, the deterministic stub, and the external
//! process adapter.
//!
//! The stub is a pure function of its inputs, which is what makes whole
//! sessions bit-reproducible. Response text with the stub:
//!
//! ```text
//! ack> <the user query>
//! <key>=<value>         for each key-value pair found in the query
//! cited> <p1> <p2> <p3>  up to three loaded context paths
//! ```
//!
//! Summaries are extractive: the first sentence plus the sentence with
//! the highest keyword score, where a keyword is a token occurring in
//! exactly one sentence and the score counts keyword occurrences (ties
//! go to the earlier sentence). The result is truncated to the token
//! budget using the byte estimator.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::{Command, Stdio};

use crate::error::{AfsError, Result};
use crate::indexer::tokenize;
use crate::pipeline::estimate_tokens;
use crate::repository::extract_key_values;

pub trait Provider: Send + Sync {
    fn provider_id(&self) -> String;
    fn model_version(&self) -> String;
    fn summarize(&self, text: &str, max_tokens: u64) -> String;
    fn complete(&self, prompt: &str) -> Result<String>;
}

#[derive(Debug, Default)]
pub struct StubProvider;

pub const STUB_PROVIDER_ID: &str = "stub";
pub const STUB_MODEL_VERSION: &str = "stub-1";

fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            let trimmed = current.trim();
            if !trimmed.is_empty() {
                sentences.push(trimmed.to_string());
            }
            current.clear();
        }
    }
    let trimmed = current.trim();
    if !trimmed.is_empty() {
        sentences.push(trimmed.to_string());
    }
    sentences
}

/// Longest prefix that fits `max_tokens` under the byte estimator,
/// respecting char boundaries.
fn truncate_to_tokens(text: &str, max_tokens: u64) -> String {
    let max_bytes = (max_tokens as usize).saturating_mul(4);
    if text.len() <= max_bytes {
        return text.to_string();
    }
    let mut end = max_bytes;
    while end > 0 && !text.is_char_boundary(end) {
        end -= 1;
    }
    text[..end].to_string()
}

impl Provider for StubProvider {
    fn provider_id(&self) -> String {
        STUB_PROVIDER_ID.to_string()
    }

    fn model_version(&self) -> String {
        STUB_MODEL_VERSION.to_string()
    }

    fn summarize(&self, text: &str, max_tokens: u64) -> String {
        let sentences = split_sentences(text);
        if sentences.is_empty() {
            return String::new();
        }
        // Document frequency per token across sentences.
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let tokenized: Vec<Vec<String>> =
            sentences.iter().map(|s| tokenize(s.as_bytes())).collect();
        for tokens in &tokenized {
            let mut seen = std::collections::BTreeSet::new();
            for token in tokens {
                if seen.insert(token.clone()) {
                    *df.entry(token.clone()).or_insert(0) += 1;
                }
            }
        }
        let keyword_score = |tokens: &[String]| -> usize {
            tokens.iter().filter(|t| df.get(*t).copied() == Some(1)).count()
        };
        let mut best = 0usize;
        let mut best_score = keyword_score(&tokenized[0]);
        for (idx, tokens) in tokenized.iter().enumerate().skip(1) {
            let score = keyword_score(tokens);
            if score > best_score {
                best = idx;
                best_score = score;
            }
        }
        let summary = if best == 0 {
            sentences[0].clone()
        } else {
            format!("{} {}", sentences[0], sentences[best])
        };
        truncate_to_tokens(&summary, max_tokens)
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let mut item_paths = Vec::new();
        let mut query = "";
        for line in prompt.lines() {
            if let Some(rest) = line.strip_prefix("item: ") {
                let path = rest.split(" (rev ").next().unwrap_or(rest);
                item_paths.push(path.to_string());
            }
            if let Some(rest) = line.strip_prefix("query: ") {
                query = rest;
            }
        }
        // The `>` markers keep the template lines out of key-value
        // extraction; only the re-emitted fact lines are extractable.
        let mut out = format!("ack> {query}");
        for (key, value) in extract_key_values(query) {
            out.push('\n');
            out.push_str(&format!("{key}={value}"));
        }
        if !item_paths.is_empty() {
            let cited: Vec<&str> = item_paths.iter().take(3).map(String::as_str).collect();
            out.push('\n');
            out.push_str(&format!("cited> {}", cited.join(" ")));
        }
        Ok(out)
    }
}

/// Adapter for `external:<command>` providers. The command is run once
/// per call with `summarize <maxTokens>` or `complete` appended to its
/// arguments; the prompt goes to stdin and the reply is read from
/// stdout.
pub struct ExternalProvider {
    program: String,
    args: Vec<String>,
}

impl ExternalProvider {
    pub fn new(command_line: &str) -> Result<ExternalProvider> {
        let mut parts = command_line.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| AfsError::ConfigError { reason: "empty external provider command".into() })?
            .to_string();
        Ok(ExternalProvider { program, args: parts.map(str::to_string).collect() })
    }

    fn run(&self, extra: &[String], input: &str) -> Result<String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .args(extra)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| AfsError::ToolFailure {
                path: self.program.clone(),
                reason: format!("spawn provider: {e}"),
            })?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(input.as_bytes())
            .map_err(|e| AfsError::ToolFailure {
                path: self.program.clone(),
                reason: format!("write prompt: {e}"),
            })?;
        let output = child.wait_with_output().map_err(|e| AfsError::ToolFailure {
            path: self.program.clone(),
            reason: format!("provider failed: {e}"),
        })?;
        if !output.status.success() {
            return Err(AfsError::ToolFailure {
                path: self.program.clone(),
                reason: format!("provider exited with {}", output.status),
            });
        }
        Ok(String::from_utf8_lossy(&output.stdout).trim_end().to_string())
    }
}

impl Provider for ExternalProvider {
    fn provider_id(&self) -> String {
        format!("external:{}", self.program)
    }

    fn model_version(&self) -> String {
        "external".to_string()
    }

    fn summarize(&self, text: &str, max_tokens: u64) -> String {
        self.run(&["summarize".to_string(), max_tokens.to_string()], text)
            .map(|s| truncate_to_tokens(&s, max_tokens))
            .unwrap_or_default()
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        self.run(&["complete".to_string()], prompt)
    }
}

/// Builds a provider from a selector string: `stub` or
/// `external:<command>`.
pub fn provider_from_selector(selector: &str) -> Result<std::sync::Arc<dyn Provider>> {
    if selector == "stub" {
        return Ok(std::sync::Arc::new(StubProvider));
    }
    if let Some(command) = selector.strip_prefix("external:") {
        return Ok(std::sync::Arc::new(ExternalProvider::new(command)?));
    }
    Err(AfsError::ConfigError { reason: format!("unknown provider selector {selector:?}") })
}

/// The stub summary must never exceed the requested token budget.
pub fn summary_fits(summary: &str, max_tokens: u64) -> bool {
    estimate_tokens(summary.as_bytes()) <= max_tokens
}
