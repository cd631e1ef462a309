//! Context updater: loads a manifest into the bounded active window.
//!
//! Three modes: a snapshot assembles everything at once; incremental
//! mode feeds manifest items one fragment at a time; adaptive mode can
//! additionally swap the lowest-scoring loaded item for a better
//! unloaded candidate on feedback. Every load and swap is recorded as a
//! metadata event carrying the source paths and reasoning id.

use serde::Serialize;

use crate::afs::Caller;
use crate::error::{AfsError, Result};
use crate::indexer;
use crate::path::AfsPath;
use crate::pipeline::{
    classify_provenance, estimate_tokens, ContextManifest, ExcludeReason, Pipeline,
};
use crate::provenance::{canonical_json, EventPayload, OpType, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadMode {
    Snapshot,
    Incremental,
    Adaptive,
}

impl std::str::FromStr for LoadMode {
    type Err = AfsError;

    fn from_str(s: &str) -> Result<LoadMode> {
        match s {
            "snapshot" => Ok(LoadMode::Snapshot),
            "incremental" => Ok(LoadMode::Incremental),
            "adaptive" => Ok(LoadMode::Adaptive),
            other => Err(AfsError::ConfigError { reason: format!("unknown load mode {other:?}") }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WindowItem {
    pub path: AfsPath,
    pub revision_id: u64,
    pub est_tokens: u64,
    pub score: f64,
    pub text: String,
    pub loaded: bool,
    pub compressed: bool,
}

/// The bounded reasoning window for one reasoning id.
pub struct ActiveWindow {
    pub reasoning_id: String,
    pub manifest_id: String,
    pub mode: LoadMode,
    usable: u64,
    items: Vec<WindowItem>,
    /// Paths excluded from the manifest for budget/score reasons;
    /// eligible to swap in under adaptive mode. Access-denied paths are
    /// never eligible.
    swap_candidates: Vec<AfsPath>,
    next_fragment_idx: usize,
}

impl ActiveWindow {
    pub fn items(&self) -> &[WindowItem] {
        &self.items
    }

    pub fn loaded_items(&self) -> impl Iterator<Item = &WindowItem> {
        self.items.iter().filter(|i| i.loaded)
    }

    pub fn loaded_tokens(&self) -> u64 {
        self.loaded_items().map(|i| i.est_tokens).sum()
    }

    /// The context section of the prompt: loaded items in manifest
    /// order, each prefixed by its canonical path and pinned revision.
    pub fn context_text(&self) -> String {
        let mut out = String::new();
        for item in self.loaded_items() {
            out.push_str(&format!("item: {} (rev {})\n{}\n", item.path, item.revision_id, item.text));
        }
        out
    }

    /// Fixed prompt schema: system instructions, loaded items in
    /// manifest order, then the user query.
    pub fn assemble_prompt(&self, instructions: &str, query: &str) -> String {
        format!("system: {instructions}\n{}query: {query}", self.context_text())
    }

    fn check_budget(&self) -> Result<()> {
        if self.loaded_tokens() > self.usable {
            return Err(AfsError::WindowOverflow {
                reason: format!(
                    "loaded {} tokens exceed usable {} (internal bug guard)",
                    self.loaded_tokens(),
                    self.usable
                ),
            });
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct LoadInput<'a> {
    mode: LoadMode,
    #[serde(rename = "manifestId")]
    manifest_id: &'a str,
    #[serde(rename = "sourcePaths")]
    source_paths: Vec<String>,
}

#[derive(Serialize)]
struct SwapInput<'a> {
    #[serde(rename = "manifestId")]
    manifest_id: &'a str,
    #[serde(rename = "feedbackQuery")]
    feedback_query: &'a str,
    #[serde(rename = "swapOut", skip_serializing_if = "Option::is_none")]
    swap_out: Option<String>,
    #[serde(rename = "swapIn", skip_serializing_if = "Option::is_none")]
    swap_in: Option<String>,
}

impl Pipeline {
    fn fetch_pinned(&self, path: &AfsPath, revision_id: u64) -> Result<Vec<u8>> {
        if let Ok(record) = self.afs().node_record(path) {
            if record.meta.revision_id == revision_id {
                return self.afs().read_raw(path);
            }
        }
        self.afs()
            .provenance()
            .get_revision(path, revision_id)
            .map_err(|_| AfsError::RevisionMissing { path: path.to_string(), revision: revision_id })
    }

    /// Assembles the window for a manifest. Snapshot and adaptive modes
    /// load every included item immediately; incremental mode starts
    /// empty and feeds items through [`Pipeline::next_fragment`].
    pub fn load_context(
        &self,
        caller: &Caller,
        manifest: &ContextManifest,
        mode: LoadMode,
    ) -> Result<ActiveWindow> {
        let caller = caller.clone().with_reasoning(&manifest.reasoning_id);
        let mut draft = self.event_draft(&caller, OpType::Load, Some(manifest.namespace_path()));
        let inner = self.load_inner(manifest, mode);
        match &inner {
            Ok(window) => {
                let loaded: Vec<String> =
                    window.loaded_items().map(|i| i.path.to_string()).collect();
                draft.input = EventPayload::stored(canonical_json(&LoadInput {
                    mode,
                    manifest_id: &manifest.manifest_id,
                    source_paths: loaded,
                }));
            }
            Err(e) => draft.outcome = Outcome::error(e.code()),
        }
        self.afs().provenance().commit(draft)?;
        inner
    }

    fn load_inner(&self, manifest: &ContextManifest, mode: LoadMode) -> Result<ActiveWindow> {
        let usable = manifest.budget.usable()?;
        let load_all = !matches!(mode, LoadMode::Incremental);
        let mut items = Vec::new();
        let mut spent = 0u64;
        for included in &manifest.included {
            let raw = self.fetch_pinned(&included.path, included.revision_id)?;
            let compressed = manifest
                .compression_applied
                .iter()
                .any(|c| c.path == included.path);
            let text = if compressed {
                // The compression cap at construction time was the budget
                // remaining before this item; reconstruct it from the
                // manifest order and re-derive the same summary.
                let cap = usable - spent;
                self.provider().summarize(&String::from_utf8_lossy(&raw), cap)
            } else {
                String::from_utf8_lossy(&raw).into_owned()
            };
            spent += included.est_tokens;
            items.push(WindowItem {
                path: included.path.clone(),
                revision_id: included.revision_id,
                est_tokens: included.est_tokens,
                score: included.score,
                text,
                loaded: load_all,
                compressed,
            });
        }
        let swap_candidates = manifest
            .excluded
            .iter()
            .filter(|e| e.reason != ExcludeReason::AccessDenied)
            .map(|e| e.path.clone())
            .collect();
        let window = ActiveWindow {
            reasoning_id: manifest.reasoning_id.clone(),
            manifest_id: manifest.manifest_id.clone(),
            mode,
            usable,
            items,
            swap_candidates,
            next_fragment_idx: 0,
        };
        window.check_budget()?;
        Ok(window)
    }

    /// Incremental mode: loads the next manifest item into the window.
    /// Returns its path, or `None` when everything is loaded.
    pub fn next_fragment(&self, caller: &Caller, window: &mut ActiveWindow) -> Result<Option<AfsPath>> {
        if window.mode != LoadMode::Incremental {
            return Err(AfsError::ConfigError {
                reason: "next_fragment requires incremental mode".into(),
            });
        }
        let caller = caller.clone().with_reasoning(&window.reasoning_id);
        let fragment = window.items.get_mut(window.next_fragment_idx).map(|item| {
            item.loaded = true;
            item.path.clone()
        });
        if fragment.is_some() {
            window.next_fragment_idx += 1;
            window.check_budget()?;
        }
        let mut draft = self.event_draft(&caller, OpType::Load, fragment.clone());
        draft.input = EventPayload::stored(canonical_json(&LoadInput {
            mode: LoadMode::Incremental,
            manifest_id: &window.manifest_id,
            source_paths: fragment.iter().map(|p| p.to_string()).collect(),
        }));
        self.afs().provenance().commit(draft)?;
        Ok(fragment)
    }

    /// Adaptive refresh: re-scores loaded items and unloaded candidates
    /// against the feedback query and swaps the lowest-scoring loaded
    /// item for the best candidate when the candidate scores strictly
    /// higher and fits the budget. Returns the (out, in) pair when a
    /// swap happened.
    pub fn refresh(
        &self,
        caller: &Caller,
        window: &mut ActiveWindow,
        feedback_query: &str,
    ) -> Result<Option<(AfsPath, AfsPath)>> {
        if window.mode != LoadMode::Adaptive {
            return Err(AfsError::ConfigError { reason: "refresh requires adaptive mode".into() });
        }
        let caller = caller.clone().with_reasoning(&window.reasoning_id);
        let inner = self.refresh_inner(window, feedback_query);
        let mut draft = self.event_draft(&caller, OpType::Load, None);
        match &inner {
            Ok(swap) => {
                draft.input = EventPayload::stored(canonical_json(&SwapInput {
                    manifest_id: &window.manifest_id,
                    feedback_query,
                    swap_out: swap.as_ref().map(|(out, _)| out.to_string()),
                    swap_in: swap.as_ref().map(|(_, inp)| inp.to_string()),
                }));
            }
            Err(e) => draft.outcome = Outcome::error(e.code()),
        }
        self.afs().provenance().commit(draft)?;
        inner
    }

    fn refresh_inner(
        &self,
        window: &mut ActiveWindow,
        feedback_query: &str,
    ) -> Result<Option<(AfsPath, AfsPath)>> {
        let feedback = indexer::embed(feedback_query.as_bytes());
        let now = self.afs().clock().now_ms();
        let rescore = |path: &AfsPath, content: &[u8]| -> f64 {
            let cosine = indexer::cosine(&feedback, &indexer::embed(content));
            let age_ms = self
                .afs()
                .node_record(path)
                .map(|r| now.saturating_sub(r.meta.modified_at))
                .unwrap_or(0);
            self.scoring.score(cosine, age_ms, classify_provenance(path))
        };

        // Lowest-scoring loaded item; ties keep the earliest in manifest
        // order.
        let mut lowest: Option<(usize, f64)> = None;
        for (idx, item) in window.items.iter().enumerate() {
            if !item.loaded {
                continue;
            }
            let score = rescore(&item.path, item.text.as_bytes());
            if lowest.map(|(_, s)| score < s).unwrap_or(true) {
                lowest = Some((idx, score));
            }
        }
        let Some((lowest_idx, lowest_score)) = lowest else {
            return Ok(None);
        };

        // Best unloaded candidate: manifest leftovers plus previously
        // evicted items; ties to the lexicographically smaller path.
        let mut candidates: Vec<(AfsPath, Vec<u8>)> = Vec::new();
        for path in &window.swap_candidates {
            if let Ok(content) = self.afs().read_raw(path) {
                candidates.push((path.clone(), content));
            }
        }
        for item in window.items.iter().filter(|i| !i.loaded) {
            candidates.push((item.path.clone(), item.text.clone().into_bytes()));
        }
        candidates.sort_by_key(|(path, _)| path.to_string());
        let mut best: Option<(AfsPath, Vec<u8>, f64)> = None;
        for (path, content) in candidates {
            let score = rescore(&path, &content);
            if best.as_ref().map(|(_, _, s)| score > *s).unwrap_or(true) {
                best = Some((path, content, score));
            }
        }
        let Some((best_path, best_content, best_score)) = best else {
            return Ok(None);
        };
        if best_score <= lowest_score {
            return Ok(None);
        }
        let incoming_tokens = estimate_tokens(&best_content);
        let new_total =
            window.loaded_tokens() - window.items[lowest_idx].est_tokens + incoming_tokens;
        if new_total > window.usable {
            return Ok(None);
        }

        let out_path = window.items[lowest_idx].path.clone();
        window.items[lowest_idx].loaded = false;
        window.swap_candidates.retain(|p| p != &best_path);
        // The evicted item stays in `items` (unloaded) and may swap back
        // on a later refresh.
        let revision_id = self
            .afs()
            .node_record(&best_path)
            .map(|r| r.meta.revision_id)
            .unwrap_or(1);
        window.items.push(WindowItem {
            path: best_path.clone(),
            revision_id,
            est_tokens: incoming_tokens,
            score: best_score,
            text: String::from_utf8_lossy(&best_content).into_owned(),
            loaded: true,
            compressed: false,
        });
        window.check_budget()?;
        Ok(Some((out_path, best_path)))
    }
}
