//! Context engineering pipeline: constructor, updater, evaluator.
//!
//! The constructor gathers candidates across authorized mounts, scores
//! them, greedily selects by score density under the token budget
//! (summarizing items that alone exceed the remaining budget) and
//! records everything in an auditable manifest pinned to exact
//! revisions. The updater loads manifests into an active window in
//! snapshot, incremental or adaptive mode. The evaluator grounds model
//! output lexically against the loaded context, detects fact
//! contradictions and drift, and gates memory write-back behind human
//! review when confidence is low.

pub mod provider;
pub mod window;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::afs::{Afs, Caller};
use crate::error::{AfsError, Result};
use crate::governance::{Right, Rights, Scope};
use crate::indexer;
use crate::node::NodeKind;
use crate::path::AfsPath;
use crate::provenance::{canonical_json, hex_field, EventDraft, EventPayload, OpType, Outcome};
use crate::repository::{
    context_path, extract_key_values, Annotation, MemoryEntry, Origin, Repository, Verdict,
    AREA_HUMAN, AREA_MANIFEST, AREA_SCOPES,
};

pub use provider::{provider_from_selector, Provider, StubProvider};
pub use window::{ActiveWindow, LoadMode, WindowItem};

/// ceil(bytes / 4): the provider-agnostic token estimator.
pub fn estimate_tokens(bytes: &[u8]) -> u64 {
    (bytes.len() as u64).div_ceil(4)
}

/// Token budget cap for summaries produced by memory derivation.
pub const DERIVED_SUMMARY_MAX_TOKENS: u64 = 256;

/// Confidence below this requires human review.
pub const CONFIDENCE_THRESHOLD: f64 = 0.5;

/// Fixed, published stopword list; content tokens are tokens not in it.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "been", "but", "by", "did", "do", "does", "else",
    "for", "from", "had", "has", "have", "he", "i", "if", "in", "is", "it", "no", "not", "of",
    "on", "or", "she", "that", "the", "then", "they", "this", "to", "was", "we", "were", "with",
    "you",
];

pub fn content_tokens(text: &str) -> BTreeSet<String> {
    indexer::tokenize(text.as_bytes())
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    #[serde(rename = "maxTokens")]
    pub max_tokens: u64,
    #[serde(rename = "reservedForResponse")]
    pub reserved_for_response: u64,
}

impl TokenBudget {
    pub fn new(max_tokens: u64, reserved_for_response: u64) -> TokenBudget {
        TokenBudget { max_tokens, reserved_for_response }
    }

    /// usable = maxTokens − reservedForResponse, which must be positive.
    pub fn usable(&self) -> Result<u64> {
        let usable = self.max_tokens.saturating_sub(self.reserved_for_response);
        if self.reserved_for_response >= self.max_tokens || usable == 0 {
            return Err(AfsError::BudgetInvalid {
                reason: format!(
                    "usable budget must be positive (max {} reserved {})",
                    self.max_tokens, self.reserved_for_response
                ),
            });
        }
        Ok(usable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProvenanceClass {
    HumanAnnotated,
    FactMemory,
    EpisodicMemory,
    RawHistory,
    Other,
}

/// Provenance class from the namespace position of a node.
pub fn classify_provenance(path: &AfsPath) -> ProvenanceClass {
    let segments = path.segments();
    if segments.first().map(String::as_str) != Some("context") {
        return ProvenanceClass::Other;
    }
    match segments.get(1).map(String::as_str) {
        Some("human") => ProvenanceClass::HumanAnnotated,
        Some("history") => ProvenanceClass::RawHistory,
        Some("memory") => match segments.get(3).map(String::as_str) {
            Some("fact") => ProvenanceClass::FactMemory,
            Some("episodic") => ProvenanceClass::EpisodicMemory,
            _ => ProvenanceClass::Other,
        },
        _ => ProvenanceClass::Other,
    }
}

#[derive(Debug, Clone)]
pub struct ScoringConfig {
    pub weight_cosine: f64,
    pub weight_recency: f64,
    pub weight_provenance: f64,
    pub half_life_days: f64,
    pub default_provenance_weight: f64,
    /// Candidates scoring strictly below this are excluded as lowScore.
    pub min_score: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            weight_cosine: 0.5,
            weight_recency: 0.3,
            weight_provenance: 0.2,
            half_life_days: 7.0,
            default_provenance_weight: 0.6,
            min_score: 0.0,
        }
    }
}

impl ScoringConfig {
    pub fn provenance_weight(&self, class: ProvenanceClass) -> f64 {
        match class {
            ProvenanceClass::HumanAnnotated => 1.0,
            ProvenanceClass::FactMemory => 0.8,
            ProvenanceClass::EpisodicMemory => 0.6,
            ProvenanceClass::RawHistory => 0.4,
            ProvenanceClass::Other => self.default_provenance_weight,
        }
    }

    /// score = w_c·cosine⁺ + w_r·2^(−ageDays/halfLife) + w_p·provenance,
    /// each term in [0, 1].
    pub fn score(&self, cosine: f64, age_ms: u64, class: ProvenanceClass) -> f64 {
        let cosine_pos = cosine.clamp(0.0, 1.0);
        let age_days = age_ms as f64 / 86_400_000.0;
        let recency = (2.0f64).powf(-age_days / self.half_life_days).clamp(0.0, 1.0);
        self.weight_cosine * cosine_pos
            + self.weight_recency * recency
            + self.weight_provenance * self.provenance_weight(class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncludedItem {
    pub path: AfsPath,
    #[serde(rename = "revisionId")]
    pub revision_id: u64,
    #[serde(rename = "estTokens")]
    pub est_tokens: u64,
    pub score: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ExcludeReason {
    OverBudget,
    AccessDenied,
    Stale,
    Duplicate,
    LowScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedItem {
    pub path: AfsPath,
    pub reason: ExcludeReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRecord {
    pub path: AfsPath,
    pub method: String,
    #[serde(rename = "beforeTokens")]
    pub before_tokens: u64,
    #[serde(rename = "afterTokens")]
    pub after_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextManifest {
    #[serde(rename = "manifestId")]
    pub manifest_id: String,
    #[serde(rename = "createdAt")]
    pub created_at: u64,
    #[serde(rename = "agentId")]
    pub agent_id: String,
    #[serde(rename = "sessionId", skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(rename = "reasoningId")]
    pub reasoning_id: String,
    pub budget: TokenBudget,
    pub included: Vec<IncludedItem>,
    pub excluded: Vec<ExcludedItem>,
    #[serde(rename = "totalTokens")]
    pub total_tokens: u64,
    #[serde(rename = "compressionApplied")]
    pub compression_applied: Vec<CompressionRecord>,
}

impl ContextManifest {
    pub fn namespace_path(&self) -> AfsPath {
        context_path(&[AREA_MANIFEST, &self.manifest_id])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Contradiction {
    #[serde(rename = "outputSpan")]
    pub output_span: String,
    #[serde(rename = "conflictingPath")]
    pub conflicting_path: AfsPath,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(rename = "reasoningId")]
    pub reasoning_id: String,
    #[serde(rename = "factualAlignment")]
    pub factual_alignment: f64,
    pub confidence: f64,
    pub contradictions: Vec<Contradiction>,
    #[serde(rename = "driftFlag")]
    pub drift_flag: bool,
    #[serde(rename = "humanReviewRequired")]
    pub human_review_required: bool,
    #[serde(rename = "overrideApplied")]
    pub override_applied: bool,
}

/// What the evaluator persisted for one reasoning session; reconstructed
/// from the log for the review workflow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationRecord {
    #[serde(rename = "reasoningId")]
    pub reasoning_id: String,
    #[serde(rename = "manifestId")]
    pub manifest_id: String,
    #[serde(rename = "agentId")]
    pub agent_id: String,
    pub output: String,
    #[serde(rename = "sourceRecordIds")]
    pub source_record_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReviewItem {
    pub reasoning_id: String,
    pub confidence: f64,
    pub factual_alignment: f64,
    pub contradictions: usize,
    pub latest_verdict: Option<Verdict>,
    pub committed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TurnRecord {
    pub turn: String,
    pub reply: String,
    #[serde(rename = "manifestId")]
    pub manifest_id: String,
    #[serde(rename = "reasoningId")]
    pub reasoning_id: String,
    pub confidence: f64,
    #[serde(rename = "reviewRequired")]
    pub review_required: bool,
    pub committed: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Transcript {
    pub turns: Vec<TurnRecord>,
}

pub const DEFAULT_INSTRUCTIONS: &str = "You are a helpful assistant.";

/// The pipeline, bound to a namespace, repository and provider.
pub struct Pipeline {
    afs: Arc<Afs>,
    repo: Arc<Repository>,
    provider: Arc<dyn Provider>,
    pub scoring: ScoringConfig,
    pub instructions: String,
}

struct Candidate {
    path: AfsPath,
    revision_id: u64,
    content: Vec<u8>,
    est_tokens: u64,
    score: f64,
}

impl Pipeline {
    pub fn new(afs: Arc<Afs>, repo: Arc<Repository>, provider: Arc<dyn Provider>) -> Pipeline {
        Pipeline {
            afs,
            repo,
            provider,
            scoring: ScoringConfig::default(),
            instructions: DEFAULT_INSTRUCTIONS.to_string(),
        }
    }

    pub fn provider(&self) -> &Arc<dyn Provider> {
        &self.provider
    }

    pub fn repository(&self) -> &Arc<Repository> {
        &self.repo
    }

    pub(crate) fn afs(&self) -> &Arc<Afs> {
        &self.afs
    }

    pub(crate) fn event_draft(&self, caller: &Caller, op: OpType, path: Option<AfsPath>) -> EventDraft {
        let mut draft = EventDraft::new(op, &caller.actor);
        draft.session_id = caller.session_id.clone();
        draft.reasoning_id = caller.reasoning_id.clone();
        draft.path = path;
        draft
    }

    // ------------------------------------------------------------------
    // Constructor
    // ------------------------------------------------------------------

    /// Builds and persists a context manifest for `query` under the
    /// given scope and budget.
    pub fn construct_context(
        &self,
        caller: &Caller,
        query: &str,
        agent_id: &str,
        budget: &TokenBudget,
        scope: &str,
    ) -> Result<ContextManifest> {
        // The manifest area must be mountable before the event is drafted
        // so the ensure-mount event precedes the manifest event.
        let ensure = self.repo.ensure_area_mounted(AREA_MANIFEST);
        let mut draft = self.event_draft(caller, OpType::Manifest, None);
        #[derive(Serialize)]
        struct Input<'a> {
            query: &'a str,
            #[serde(rename = "agentId")]
            agent_id: &'a str,
            budget: &'a TokenBudget,
            scope: &'a str,
        }
        draft.input = EventPayload::stored(canonical_json(&Input { query, agent_id, budget, scope }));
        let inner = ensure.and_then(|_| self.construct_inner(caller, query, agent_id, budget, scope, &mut draft));
        match &inner {
            Ok(manifest) => {
                draft.path = Some(manifest.namespace_path());
                draft.reasoning_id = Some(manifest.reasoning_id.clone());
                draft.output = EventPayload::stored(manifest_json(manifest));
            }
            Err(e) => {
                draft.outcome = Outcome::error(e.code());
                draft.effects.clear();
                draft.content_blobs.clear();
            }
        }
        self.afs.provenance().commit(draft)?;
        inner
    }

    fn construct_inner(
        &self,
        caller: &Caller,
        query: &str,
        agent_id: &str,
        budget: &TokenBudget,
        scope: &str,
        draft: &mut EventDraft,
    ) -> Result<ContextManifest> {
        let usable = budget.usable()?;
        {
            let governance = self.afs.governance().read().expect("governance lock");
            governance.get(scope)?;
        }
        let query_embedding = indexer::embed(query.as_bytes());
        let now = self.afs.clock().now_ms();

        let mut excluded = Vec::new();
        let mut scored: Vec<(Candidate, String)> = Vec::new();
        for (path, record) in self.gather_candidates()? {
            let allowed = {
                let governance = self.afs.governance().read().expect("governance lock");
                governance.check_access(scope, &path, Right::Read)?.is_allow()
            };
            if !allowed {
                excluded.push(ExcludedItem { path, reason: ExcludeReason::AccessDenied });
                continue;
            }
            if record.meta.archived {
                excluded.push(ExcludedItem { path, reason: ExcludeReason::Stale });
                continue;
            }
            let content = self.afs.read_raw(&path)?;
            let doc_embedding = indexer::embed(&content);
            let cosine = indexer::cosine(&query_embedding, &doc_embedding);
            let age_ms = now.saturating_sub(record.meta.modified_at);
            let score = self.scoring.score(cosine, age_ms, classify_provenance(&path));
            scored.push((
                Candidate {
                    path,
                    revision_id: record.meta.revision_id,
                    est_tokens: estimate_tokens(&content),
                    content,
                    score,
                },
                record.content_hash,
            ));
        }
        // Byte-identical candidates collapse to the best-scoring one
        // (ties to the smaller path), so derived memory wins over the
        // raw record it was distilled from.
        let mut keeper_of: BTreeMap<String, usize> = BTreeMap::new();
        for (idx, (candidate, hash)) in scored.iter().enumerate() {
            match keeper_of.get(hash) {
                Some(&best) => {
                    let current = &scored[best].0;
                    let better = candidate.score > current.score
                        || (candidate.score == current.score
                            && candidate.path.to_string() < current.path.to_string());
                    if better {
                        keeper_of.insert(hash.clone(), idx);
                    }
                }
                None => {
                    keeper_of.insert(hash.clone(), idx);
                }
            }
        }
        let keepers: BTreeSet<usize> = keeper_of.values().copied().collect();
        let mut pool: Vec<Candidate> = Vec::new();
        for (idx, (candidate, _)) in scored.into_iter().enumerate() {
            if !keepers.contains(&idx) {
                excluded.push(ExcludedItem { path: candidate.path, reason: ExcludeReason::Duplicate });
            } else if candidate.score < self.scoring.min_score {
                excluded.push(ExcludedItem { path: candidate.path, reason: ExcludeReason::LowScore });
            } else {
                pool.push(candidate);
            }
        }

        // Greedy by score density; ties by higher score, then path.
        pool.sort_by(|a, b| {
            let da = a.score / (a.est_tokens.max(1) as f64);
            let db = b.score / (b.est_tokens.max(1) as f64);
            db.partial_cmp(&da)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal))
                .then_with(|| a.path.to_string().cmp(&b.path.to_string()))
        });

        let mut included = Vec::new();
        let mut compression_applied = Vec::new();
        let mut total_tokens = 0u64;
        for candidate in pool {
            let remaining = usable - total_tokens;
            if candidate.est_tokens <= remaining {
                total_tokens += candidate.est_tokens;
                included.push(IncludedItem {
                    path: candidate.path,
                    revision_id: candidate.revision_id,
                    est_tokens: candidate.est_tokens,
                    score: candidate.score,
                    reason: "fit".to_string(),
                });
            } else if remaining > 0 {
                // Alone it exceeds what is left: compress to fit.
                let text = String::from_utf8_lossy(&candidate.content);
                let summary = self.provider.summarize(&text, remaining);
                let after = estimate_tokens(summary.as_bytes());
                if after > 0 && after <= remaining {
                    total_tokens += after;
                    compression_applied.push(CompressionRecord {
                        path: candidate.path.clone(),
                        method: "summarize".to_string(),
                        before_tokens: candidate.est_tokens,
                        after_tokens: after,
                    });
                    included.push(IncludedItem {
                        path: candidate.path,
                        revision_id: candidate.revision_id,
                        est_tokens: after,
                        score: candidate.score,
                        reason: "summarized".to_string(),
                    });
                } else {
                    excluded.push(ExcludedItem { path: candidate.path, reason: ExcludeReason::OverBudget });
                }
            } else {
                excluded.push(ExcludedItem { path: candidate.path, reason: ExcludeReason::OverBudget });
            }
        }
        excluded.sort_by_key(|item| item.path.to_string());

        let manifest = self.repo.with_state(|state| {
            let manifest_id = state.alloc_manifest_id();
            let reasoning_id = format!("r{}", &manifest_id[1..]);
            let manifest = ContextManifest {
                manifest_id: manifest_id.clone(),
                created_at: now,
                agent_id: agent_id.to_string(),
                session_id: caller.session_id.clone(),
                reasoning_id,
                budget: *budget,
                included,
                excluded,
                total_tokens,
                compression_applied,
            };
            debug_assert!(manifest.total_tokens <= usable);
            let content = manifest_json(&manifest);
            let mut attrs = BTreeMap::new();
            attrs.insert("reasoningId".to_string(), manifest.reasoning_id.clone());
            attrs.insert("agentId".to_string(), agent_id.to_string());
            let internal = AfsPath::from_segments([AREA_MANIFEST, &manifest_id])?;
            let (_, effects) = state.put_node_raw(&internal, &content, &attrs, None)?;
            draft.effects = effects
                .into_iter()
                .map(|node| crate::provenance::EventEffect::Put { node })
                .collect();
            draft.content_blobs.push(content);
            Ok(manifest)
        })?;
        Ok(manifest)
    }

    /// Candidate set: every non-directory node in the namespace except
    /// system bookkeeping areas (manifests and scope definitions).
    fn gather_candidates(&self) -> Result<Vec<(AfsPath, crate::backend::NodeRecord)>> {
        let manifest_root = context_path(&[AREA_MANIFEST]);
        let scopes_root = context_path(&[AREA_SCOPES]);
        let mut candidates: Vec<(AfsPath, crate::backend::NodeRecord)> = self
            .afs
            .walk(&AfsPath::root(), true, usize::MAX)?
            .into_iter()
            .filter(|(path, record)| {
                record.meta.kind != NodeKind::Directory
                    && !path.starts_with(&manifest_root)
                    && !path.starts_with(&scopes_root)
            })
            .collect();
        candidates.sort_by_key(|(path, _)| path.to_string());
        Ok(candidates)
    }

    pub fn manifest_by_id(&self, manifest_id: &str) -> Result<ContextManifest> {
        let path = context_path(&[AREA_MANIFEST, manifest_id]);
        let bytes = self.afs.read_raw(&path).map_err(|_| AfsError::NotFound { path: path.to_string() })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| AfsError::StoreCorrupt { reason: format!("manifest {manifest_id}: {e}") })
    }

    pub fn manifest_by_reasoning(&self, reasoning_id: &str) -> Result<ContextManifest> {
        let digits = reasoning_id
            .strip_prefix('r')
            .ok_or_else(|| AfsError::UnknownReasoning { reasoning_id: reasoning_id.to_string() })?;
        self.manifest_by_id(&format!("m{digits}"))
            .map_err(|_| AfsError::UnknownReasoning { reasoning_id: reasoning_id.to_string() })
    }

    // ------------------------------------------------------------------
    // Evaluator
    // ------------------------------------------------------------------

    /// Grounds `output` against the loaded window. `source_record_ids`
    /// names the history records the output came from (the agent reply
    /// record in a session); commits use them for lineage.
    pub fn evaluate_output(
        &self,
        caller: &Caller,
        output: &str,
        manifest: &ContextManifest,
        window: &ActiveWindow,
        source_record_ids: &[String],
    ) -> Result<EvaluationReport> {
        let record = EvaluationRecord {
            reasoning_id: manifest.reasoning_id.clone(),
            manifest_id: manifest.manifest_id.clone(),
            agent_id: manifest.agent_id.clone(),
            output: output.to_string(),
            source_record_ids: source_record_ids.to_vec(),
        };
        let report = self.evaluate_inner(output, manifest, window);
        let mut draft = self.event_draft(
            &caller.clone().with_reasoning(&manifest.reasoning_id),
            OpType::Evaluate,
            Some(manifest.namespace_path()),
        );
        draft.input = EventPayload::stored(canonical_json(&record));
        draft.output = EventPayload::stored(canonical_json(&report));
        self.afs.provenance().commit(draft)?;
        Ok(report)
    }

    fn evaluate_inner(&self, output: &str, manifest: &ContextManifest, window: &ActiveWindow) -> EvaluationReport {
        let out_tokens = content_tokens(output);
        let context_text = window.context_text();
        let ctx_tokens = content_tokens(&context_text);
        let factual_alignment = if out_tokens.is_empty() {
            1.0
        } else {
            out_tokens.intersection(&ctx_tokens).count() as f64 / out_tokens.len() as f64
        };

        // String-level contradiction check against loaded fact memory:
        // same key, different value.
        let mut loaded_facts: Vec<(AfsPath, BTreeMap<String, String>)> = Vec::new();
        for item in window.loaded_items() {
            if classify_provenance(&item.path) == ProvenanceClass::FactMemory {
                let pairs: BTreeMap<String, String> =
                    extract_key_values(&item.text).into_iter().collect();
                loaded_facts.push((item.path.clone(), pairs));
            }
        }
        let mut contradictions = Vec::new();
        for line in output.lines() {
            if let Some((key, value)) = crate::repository::parse_key_value_line(line) {
                for (path, facts) in &loaded_facts {
                    if let Some(existing) = facts.get(&key) {
                        if existing != &value {
                            contradictions.push(Contradiction {
                                output_span: line.trim().to_string(),
                                conflicting_path: path.clone(),
                            });
                        }
                    }
                }
            }
        }

        let confidence = factual_alignment * if contradictions.is_empty() { 1.0 } else { 0.5 };

        // Drift: fewer than half of the included items contribute at
        // least one overlapping content token.
        let contributing = window
            .items()
            .iter()
            .filter(|item| {
                item.loaded
                    && content_tokens(&format!("item: {} (rev {})\n{}", item.path, item.revision_id, item.text))
                        .intersection(&out_tokens)
                        .next()
                        .is_some()
            })
            .count();
        let drift_flag = contributing * 2 < manifest.included.len();

        let human_review_required = confidence < CONFIDENCE_THRESHOLD || !contradictions.is_empty();
        EvaluationReport {
            reasoning_id: manifest.reasoning_id.clone(),
            factual_alignment,
            confidence,
            contradictions,
            drift_flag,
            human_review_required,
            override_applied: false,
        }
    }

    // ------------------------------------------------------------------
    // Write-back and review
    // ------------------------------------------------------------------

    /// Extracts key-value facts from the (possibly human-corrected)
    /// output and writes them under the agent's fact memory with full
    /// lineage. Requires either a clean report or an approving
    /// annotation.
    pub fn commit_validated(
        &self,
        caller: &Caller,
        report: &EvaluationReport,
        output: &str,
        agent_id: &str,
        source_record_ids: &[String],
    ) -> Result<Vec<MemoryEntry>> {
        let caller = caller.clone().with_reasoning(&report.reasoning_id);
        let mut draft = self.event_draft(&caller, OpType::Commit, None);
        let inner = self.commit_inner(&caller, report, output, agent_id, source_record_ids, &mut draft);
        match &inner {
            Ok(entries) => {
                let ids: Vec<&str> = entries.iter().map(|e| e.entry_id.as_str()).collect();
                draft.output = EventPayload::digest_of(&canonical_json(&ids));
            }
            Err(e) => {
                draft.outcome = Outcome::error(e.code());
                draft.effects.clear();
                draft.content_blobs.clear();
            }
        }
        self.afs.provenance().commit(draft)?;
        inner
    }

    fn commit_inner(
        &self,
        caller: &Caller,
        report: &EvaluationReport,
        output: &str,
        agent_id: &str,
        source_record_ids: &[String],
        draft: &mut EventDraft,
    ) -> Result<Vec<MemoryEntry>> {
        let annotations = self.annotations_for(&report.reasoning_id)?;
        let latest = annotations.last();
        let (effective_output, override_applied) = match latest.map(|a| (a.verdict, a)) {
            Some((Verdict::Reject, _)) => {
                return Err(AfsError::ReviewPending { reasoning_id: report.reasoning_id.clone() });
            }
            Some((Verdict::Correct, annotation)) => {
                (annotation.correction.clone().unwrap_or_else(|| output.to_string()), true)
            }
            Some((Verdict::Approve, _)) => (output.to_string(), false),
            None if report.human_review_required => {
                return Err(AfsError::ReviewPending { reasoning_id: report.reasoning_id.clone() });
            }
            None => (output.to_string(), false),
        };
        #[derive(Serialize)]
        struct Input<'a> {
            #[serde(rename = "reasoningId")]
            reasoning_id: &'a str,
            #[serde(rename = "agentId")]
            agent_id: &'a str,
            #[serde(rename = "effectiveOutputHex")]
            effective_output_hex: String,
            #[serde(rename = "overrideApplied")]
            override_applied: bool,
        }
        draft.input = EventPayload::stored(canonical_json(&Input {
            reasoning_id: &report.reasoning_id,
            agent_id,
            effective_output_hex: hex_field(effective_output.as_bytes()),
            override_applied,
        }));

        let pairs = extract_key_values(&effective_output);
        let confidence = report.confidence;
        self.repo.with_state(|state| {
            let mut sources = source_record_ids.to_vec();
            if sources.is_empty() {
                // Nothing in history backs this output yet; record it so
                // lineage closes into history.
                let (record, effects) = state.append_history_raw(
                    Origin::Agent,
                    agent_id,
                    caller.session_id.as_deref().unwrap_or(""),
                    &self.provider.model_version(),
                    effective_output.as_bytes(),
                )?;
                draft.effects.extend(
                    effects.into_iter().map(|node| crate::provenance::EventEffect::Put { node }),
                );
                draft.content_blobs.push(effective_output.clone().into_bytes());
                sources.push(record.record_id);
            }
            let mut entries = Vec::new();
            for (key, value) in pairs {
                let (entry, effects) = state.upsert_fact_raw(
                    agent_id,
                    &key,
                    &value,
                    &sources,
                    confidence,
                    caller.session_id.as_deref(),
                    Some(&report.reasoning_id),
                )?;
                draft.effects.extend(
                    effects.into_iter().map(|node| crate::provenance::EventEffect::Put { node }),
                );
                draft.content_blobs.push(entry.content.clone());
                entries.push(entry);
            }
            Ok(entries)
        })
    }

    /// Records a human verdict for a reasoning session under
    /// `/context/human/` and appends the review to history.
    pub fn annotate(
        &self,
        caller: &Caller,
        reasoning_id: &str,
        human_id: &str,
        verdict: Verdict,
        correction: Option<String>,
        note: &str,
    ) -> Result<AfsPath> {
        // Validate the reasoning id against its manifest.
        let manifest = self.manifest_by_reasoning(reasoning_id)?;
        self.repo.ensure_area_mounted(AREA_HUMAN)?;
        let caller = caller.clone().with_reasoning(reasoning_id);
        let mut draft = self.event_draft(&caller, OpType::Annotate, None);
        let inner = self.repo.with_state(|state| {
            let annotation_id = state.alloc_annotation_id();
            let annotation = Annotation {
                annotation_id: annotation_id.clone(),
                reasoning_id: reasoning_id.to_string(),
                human_id: human_id.to_string(),
                verdict,
                correction: correction.clone(),
                note: note.to_string(),
            };
            let content = canonical_json(&annotation);
            let mut attrs = BTreeMap::new();
            attrs.insert("reasoningId".to_string(), reasoning_id.to_string());
            attrs.insert("humanId".to_string(), human_id.to_string());
            attrs.insert(
                "verdict".to_string(),
                serde_json::to_string(&verdict).expect("verdict serializes").trim_matches('"').to_string(),
            );
            let internal = AfsPath::from_segments([AREA_HUMAN, &annotation_id])?;
            let (_, effects) = state.put_node_raw(&internal, &content, &attrs, Some(reasoning_id.to_string()))?;
            draft.effects.extend(
                effects.into_iter().map(|node| crate::provenance::EventEffect::Put { node }),
            );
            draft.content_blobs.push(content.clone());
            let (record, history_effects) = state.append_history_raw(
                Origin::HumanReviewer,
                &manifest.agent_id,
                manifest.session_id.as_deref().unwrap_or(""),
                "",
                &content,
            )?;
            let _ = record;
            draft.effects.extend(
                history_effects.into_iter().map(|node| crate::provenance::EventEffect::Put { node }),
            );
            draft.input = EventPayload::stored(content);
            Ok(context_path(&[AREA_HUMAN, &annotation_id]))
        });
        match &inner {
            Ok(path) => {
                draft.path = Some(path.clone());
                draft.output = EventPayload::digest_of(path.to_string().as_bytes());
            }
            Err(e) => {
                draft.outcome = Outcome::error(e.code());
                draft.effects.clear();
                draft.content_blobs.clear();
            }
        }
        self.afs.provenance().commit(draft)?;
        inner
    }

    /// Annotations recorded for one reasoning id, oldest first.
    pub fn annotations_for(&self, reasoning_id: &str) -> Result<Vec<Annotation>> {
        let human_root = context_path(&[AREA_HUMAN]);
        let mut annotations = Vec::new();
        if self.afs.mount_id_of(&human_root).is_err() {
            return Ok(annotations);
        }
        for (path, record) in self.afs.walk(&human_root, true, 2)? {
            if record.meta.kind == NodeKind::Directory {
                continue;
            }
            if record.meta.user_attrs.get("reasoningId").map(String::as_str) != Some(reasoning_id) {
                continue;
            }
            let bytes = self.afs.read_raw(&path)?;
            let annotation: Annotation = serde_json::from_slice(&bytes)
                .map_err(|e| AfsError::StoreCorrupt { reason: format!("annotation {path}: {e}") })?;
            annotations.push(annotation);
        }
        annotations.sort_by(|a, b| a.annotation_id.cmp(&b.annotation_id));
        Ok(annotations)
    }

    /// Evaluation record and report for a reasoning id, reconstructed
    /// from the log (the latest evaluate event wins).
    pub fn evaluation_for(&self, reasoning_id: &str) -> Result<(EvaluationRecord, EvaluationReport)> {
        let events = self.afs.provenance().events()?;
        for event in events.iter().rev() {
            if event.op_type == OpType::Evaluate
                && event.outcome.is_ok()
                && event.reasoning_id.as_deref() == Some(reasoning_id)
            {
                let record: EvaluationRecord =
                    serde_json::from_slice(&self.afs.provenance().blob(&event.input_digest)?)
                        .map_err(|e| AfsError::LogCorrupt { reason: format!("evaluation record: {e}") })?;
                let report: EvaluationReport =
                    serde_json::from_slice(&self.afs.provenance().blob(&event.output_digest)?)
                        .map_err(|e| AfsError::LogCorrupt { reason: format!("evaluation report: {e}") })?;
                return Ok((record, report));
            }
        }
        Err(AfsError::UnknownReasoning { reasoning_id: reasoning_id.to_string() })
    }

    /// Re-runs commit for a previously evaluated reasoning session,
    /// typically after an approving or correcting annotation.
    pub fn commit_by_reasoning(&self, caller: &Caller, reasoning_id: &str) -> Result<Vec<MemoryEntry>> {
        let (record, report) = self.evaluation_for(reasoning_id)?;
        self.commit_validated(caller, &report, &record.output, &record.agent_id, &record.source_record_ids)
    }

    /// Evaluations that required review, with their current review state.
    pub fn pending_reviews(&self) -> Result<Vec<ReviewItem>> {
        let events = self.afs.provenance().events()?;
        let mut committed: BTreeSet<String> = BTreeSet::new();
        let mut latest: BTreeMap<String, EvaluationReport> = BTreeMap::new();
        for event in &events {
            match event.op_type {
                OpType::Commit if event.outcome.is_ok() => {
                    if let Some(rid) = &event.reasoning_id {
                        committed.insert(rid.clone());
                    }
                }
                OpType::Evaluate if event.outcome.is_ok() => {
                    if let Ok(bytes) = self.afs.provenance().blob(&event.output_digest) {
                        if let Ok(report) = serde_json::from_slice::<EvaluationReport>(&bytes) {
                            latest.insert(report.reasoning_id.clone(), report);
                        }
                    }
                }
                _ => {}
            }
        }
        let mut items = Vec::new();
        for (reasoning_id, report) in latest {
            if !report.human_review_required {
                continue;
            }
            let annotations = self.annotations_for(&reasoning_id)?;
            items.push(ReviewItem {
                committed: committed.contains(&reasoning_id),
                latest_verdict: annotations.last().map(|a| a.verdict),
                reasoning_id,
                confidence: report.confidence,
                factual_alignment: report.factual_alignment,
                contradictions: report.contradictions.len(),
            });
        }
        Ok(items)
    }

    // ------------------------------------------------------------------
    // Session runner
    // ------------------------------------------------------------------

    /// Grants an agent its standard scope if not already defined:
    /// read/list on history and human, full access to its own memory and
    /// the pads, read/list on manifests, read/exec on /modules.
    pub fn ensure_agent_scope(&self, caller: &Caller, agent_id: &str) -> Result<String> {
        let name = format!("agent-{agent_id}");
        {
            let governance = self.afs.governance().read().expect("governance lock");
            if governance.contains(&name) {
                return Ok(name);
            }
        }
        let grants = vec![
            (context_path(&["history"]), Rights::of(&[Right::Read, Right::List])),
            (
                context_path(&["memory", agent_id]),
                Rights::of(&[Right::Read, Right::Write, Right::List]),
            ),
            (context_path(&["pad"]), Rights::of(&[Right::Read, Right::Write, Right::List])),
            (context_path(&[AREA_HUMAN]), Rights::of(&[Right::Read, Right::List])),
            (context_path(&[AREA_MANIFEST]), Rights::of(&[Right::Read, Right::List])),
            (
                AfsPath::parse("/modules").expect("static path"),
                Rights::of(&[Right::Read, Right::Exec, Right::List]),
            ),
        ];
        let scope = Scope::new(&name, grants);
        crate::system::define_scope_node(&self.afs, &self.repo, caller, &scope, false)?;
        Ok(name)
    }

    /// One full turn loop per user line: append the user turn to
    /// history, construct, load a snapshot, complete, append the reply,
    /// evaluate, and commit when no review is required. Bit-reproducible
    /// with the stub provider.
    pub fn run_session(
        &self,
        script: &[String],
        agent_id: &str,
        budget: &TokenBudget,
    ) -> Result<Transcript> {
        budget.usable()?;
        crate::repository::validate_segment_id("agent id", agent_id)?;
        let session_id = format!("session-{:010}", self.repo.record_count() + 1);
        let scope = self.ensure_agent_scope(&Caller::system(), agent_id)?;
        let caller = Caller::agent(agent_id, &scope, Some(session_id.clone()));
        let mut transcript = Transcript::default();
        for raw_turn in script {
            let turn = raw_turn.trim();
            if turn.is_empty() || turn.starts_with('#') {
                continue;
            }
            self.repo.append_history(
                &caller,
                Origin::User,
                agent_id,
                &session_id,
                "",
                turn.as_bytes(),
            )?;
            let manifest = self.construct_context(&caller, turn, agent_id, budget, &scope)?;
            let turn_caller = caller.clone().with_reasoning(&manifest.reasoning_id);
            let window = self.load_context(&turn_caller, &manifest, LoadMode::Snapshot)?;
            let prompt = window.assemble_prompt(&self.instructions, turn);
            let reply = self.provider.complete(&prompt)?;
            let reply_record = self.repo.append_history(
                &turn_caller,
                Origin::Agent,
                agent_id,
                &session_id,
                &self.provider.model_version(),
                reply.as_bytes(),
            )?;
            let report = self.evaluate_output(
                &turn_caller,
                &reply,
                &manifest,
                &window,
                std::slice::from_ref(&reply_record.record_id),
            )?;
            let committed = if report.human_review_required {
                Vec::new()
            } else {
                self.commit_validated(&turn_caller, &report, &reply, agent_id, &[reply_record.record_id])?
                    .into_iter()
                    .map(|e| e.entry_id)
                    .collect()
            };
            transcript.turns.push(TurnRecord {
                turn: turn.to_string(),
                reply,
                manifest_id: manifest.manifest_id,
                reasoning_id: manifest.reasoning_id,
                confidence: report.confidence,
                review_required: report.human_review_required,
                committed,
            });
        }
        Ok(transcript)
    }
}

pub fn manifest_json(manifest: &ContextManifest) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    bytes.push(b'\n');
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_tokens_examples() {
        assert_eq!(estimate_tokens(b""), 0);
        // Oracle: ceil(11 / 4) = 3.
        assert_eq!(estimate_tokens(b"elevenbytes"), 3);
        assert_eq!(estimate_tokens(&[0u8; 4]), 1);
        assert_eq!(estimate_tokens(&[0u8; 5]), 2);
    }

    #[test]
    fn estimate_tokens_subadditive_on_small_strings() {
        // Exhaustive over small lengths: est(a+b) <= est(a) + est(b) + 1.
        for a in 0usize..24 {
            for b in 0usize..24 {
                let lhs = estimate_tokens(&vec![7u8; a + b]);
                let rhs = estimate_tokens(&vec![7u8; a]) + estimate_tokens(&vec![7u8; b]) + 1;
                assert!(lhs <= rhs, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn budget_usable_must_be_positive() {
        assert!(TokenBudget::new(100, 10).usable().is_ok());
        assert_eq!(TokenBudget::new(10, 10).usable().unwrap_err().code(), "BudgetInvalid");
        assert_eq!(TokenBudget::new(5, 9).usable().unwrap_err().code(), "BudgetInvalid");
    }

    #[test]
    fn score_examples_from_the_formula() {
        let cfg = ScoringConfig::default();
        // Fresh human annotation with perfect cosine maxes every term.
        let p = AfsPath::parse("/context/human/a0000000001").unwrap();
        assert_eq!(classify_provenance(&p), ProvenanceClass::HumanAnnotated);
        assert!((cfg.score(1.0, 0, ProvenanceClass::HumanAnnotated) - 1.0).abs() < 1e-12);
        // Hand-evaluated: infinitely old, orthogonal raw history item
        // scores 0.2 * 0.4 = 0.08.
        let old = cfg.score(0.0, u64::MAX / 4, ProvenanceClass::RawHistory);
        assert!((old - 0.08).abs() < 1e-9, "{old}");
    }

    #[test]
    fn score_is_monotone_nonincreasing_in_age() {
        let cfg = ScoringConfig::default();
        let mut prev = f64::INFINITY;
        for age_days in [0u64, 1, 3, 7, 30, 365] {
            let s = cfg.score(0.4, age_days * 86_400_000, ProvenanceClass::FactMemory);
            assert!(s <= prev + 1e-15);
            prev = s;
        }
    }

    #[test]
    fn provenance_classification_by_path() {
        let cases = [
            ("/context/history/0000000001", ProvenanceClass::RawHistory),
            ("/context/memory/alice/fact/e0000000001", ProvenanceClass::FactMemory),
            ("/context/memory/alice/episodic/e0000000002", ProvenanceClass::EpisodicMemory),
            ("/context/memory/alice/user/e0000000003", ProvenanceClass::Other),
            ("/context/human/a0000000001", ProvenanceClass::HumanAnnotated),
            ("/docs/readme.md", ProvenanceClass::Other),
        ];
        for (path, expected) in cases {
            assert_eq!(classify_provenance(&AfsPath::parse(path).unwrap()), expected, "{path}");
        }
    }

    #[test]
    fn content_tokens_drop_stopwords() {
        let tokens = content_tokens("The color of the sky is blue");
        assert!(tokens.contains("color"));
        assert!(tokens.contains("sky"));
        assert!(tokens.contains("blue"));
        assert!(!tokens.contains("the"));
        assert!(!tokens.contains("of"));
        assert!(!tokens.contains("is"));
    }
}
