//! The staged retrieval pipeline.
//!
//! Stage 1 keeps the top-`i` corpus reports by cosine similarity with the
//! query embedding. Stage 2 re-ranks those candidates by image-text matching
//! score and keeps the top `j`. Stage 3 traverses the re-ranked list and
//! selects at most `k` reports, rejecting candidates the growing output
//! already entails or contradicts (or, in the threshold variant, candidates
//! too similar under a text-pair score). The selected texts are joined with
//! single spaces into one output report.
//!
//! Every run produces a [`RetrievalTrace`] recording all three stages and the
//! per-candidate filter verdicts; [`replay_selection`] reconstructs the
//! selected batch from a trace.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{l2_norm, CorpusBundle, EmbeddingMatrix};
use crate::scoring::{ItmScore, NliLabel, ScoreError, Scorer};

/// Default stage-1 candidate count.
pub const DEFAULT_TOP_I: usize = 50;
/// Default output batch capacity.
pub const DEFAULT_TOP_K: usize = 2;
/// Default threshold for the text-pair filter variant.
pub const DEFAULT_BERTSCORE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("query dimension {query} does not match corpus dimension {corpus}")]
    DimensionMismatch { query: usize, corpus: usize },
    #[error("zero vector: {context}")]
    ZeroVector { context: String },
    #[error("unknown report id {id:?}")]
    UnknownId { id: String },
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Which redundancy filter runs in stage 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Nli,
    Bertscore,
    None,
}

impl FilterKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterKind::Nli => "nli",
            FilterKind::Bertscore => "bertscore",
            FilterKind::None => "none",
        }
    }
}

/// Which similarity ranks the final candidate list: the matching score, or
/// the stage-1 cosine score alone (ablation variant that skips stage 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingMetric {
    Cosine,
    Itm,
}

impl RankingMetric {
    pub fn as_str(&self) -> &'static str {
        match self {
            RankingMetric::Cosine => "cosine",
            RankingMetric::Itm => "itm",
        }
    }
}

/// The `(i, j, k, filter)` parameters of the pipeline.
///
/// `j` defaults to `i` when absent. Invariant: `k <= j <= i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub i: usize,
    pub j: Option<usize>,
    pub k: usize,
    pub filter: FilterKind,
    pub bertscore_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            i: DEFAULT_TOP_I,
            j: None,
            k: DEFAULT_TOP_K,
            filter: FilterKind::Nli,
            bertscore_threshold: DEFAULT_BERTSCORE_THRESHOLD,
        }
    }
}

impl PipelineConfig {
    pub fn effective_j(&self) -> usize {
        self.j.unwrap_or(self.i)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        let fail = |msg: String| Err(RetrievalError::InvalidConfig(msg));
        if self.i == 0 || self.k == 0 {
            return fail(format!("i = {} and k = {} must be positive", self.i, self.k));
        }
        if self.j == Some(0) {
            return fail("j must be positive when present".into());
        }
        let j = self.effective_j();
        if !(self.k <= j && j <= self.i) {
            return fail(format!(
                "require k <= j <= i, got k = {}, j = {j}, i = {}",
                self.k, self.i
            ));
        }
        if !(0.0..=1.0).contains(&self.bertscore_threshold) {
            return fail(format!(
                "bertscore threshold {} outside [0, 1]",
                self.bertscore_threshold
            ));
        }
        Ok(())
    }
}

/// A report id carrying its stage scores through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub report_id: String,
    pub cosine: f64,
    pub itm: Option<ItmScore>,
}

/// Per-candidate stage-3 verdict, in traversal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// First candidate: accepted without a filter call (the premise is empty).
    First,
    Entailment,
    Contradiction,
    Neutral,
    BelowThreshold,
    AtOrAboveThreshold,
}

impl Verdict {
    /// Whether this verdict admits the candidate into the batch.
    pub fn accepts(self) -> bool {
        matches!(self, Verdict::First | Verdict::Neutral | Verdict::BelowThreshold)
    }
}

impl From<NliLabel> for Verdict {
    fn from(label: NliLabel) -> Self {
        match label {
            NliLabel::Contradiction => Verdict::Contradiction,
            NliLabel::Entailment => Verdict::Entailment,
            NliLabel::Neutral => Verdict::Neutral,
        }
    }
}

/// The ordered batch of selected report ids and the premise they compose.
/// `premise` always equals [`compose`] of `selected`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionState {
    pub selected: Vec<String>,
    pub premise: String,
}

impl SelectionState {
    fn push(&mut self, id: &str, text: &str) {
        if !self.selected.is_empty() {
            self.premise.push(' ');
        }
        self.premise.push_str(text);
        self.selected.push(id.to_string());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneEntry {
    pub id: String,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTwoEntry {
    pub id: String,
    pub itm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub id: String,
    pub verdict: Verdict,
}

/// Full audit record of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub query_id: String,
    pub stage1: Vec<StageOneEntry>,
    pub stage2: Vec<StageTwoEntry>,
    pub verdicts: Vec<VerdictEntry>,
    pub output: String,
}

/// Reconstructs the selected batch from a trace by replaying its verdicts:
/// the first verdict accepts, later candidates are accepted while capacity
/// remains and the recorded verdict admits them.
///
/// An empty verdict list identifies an unfiltered run (a filtered run always
/// records a verdict for the first candidate it examines), whose batch is the
/// stage-2 prefix of length `k`.
pub fn replay_selection(trace: &RetrievalTrace, k: usize) -> Vec<String> {
    if trace.verdicts.is_empty() {
        return trace.stage2.iter().take(k).map(|e| e.id.clone()).collect();
    }
    let mut selected = Vec::new();
    for entry in &trace.verdicts {
        if selected.len() == k {
            break;
        }
        if entry.verdict.accepts() {
            selected.push(entry.id.clone());
        }
    }
    selected
}

fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Heap entry ordered so the maximum is the *worst* kept candidate:
/// lower cosine is worse, and on ties the larger id is worse.
struct HeapEntry<'a> {
    cosine: f64,
    id: &'a str,
    row: usize,
}

impl PartialEq for HeapEntry<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry<'_> {}

impl PartialOrd for HeapEntry<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Cosines are finite: embeddings are validated and norms positive.
        other
            .cosine
            .partial_cmp(&self.cosine)
            .expect("finite cosine")
            .then_with(|| self.id.cmp(other.id))
    }
}

/// Top-`i` corpus rows by cosine similarity with `query`, descending, ties
/// broken by ascending id.
///
/// Cosines are computed on L2-normalized vectors: rows already flagged
/// normalized are used as stored, otherwise each row is normalized with the
/// same recipe as [`crate::corpus::normalize`]; the query is always
/// normalized. Dot products accumulate in f64 over the f32 values in index
/// order, so the result is deterministic and equal to a full-sort selection.
///
/// A bounded heap of capacity `i` keeps memory flat over large corpora.
pub fn cosine_top_i(
    query: &[f32],
    corpus: &EmbeddingMatrix,
    i: usize,
) -> Result<Vec<RankedCandidate>, RetrievalError> {
    if i == 0 {
        return Err(RetrievalError::InvalidConfig("i must be positive".into()));
    }
    if query.len() != corpus.dim {
        return Err(RetrievalError::DimensionMismatch {
            query: query.len(),
            corpus: corpus.dim,
        });
    }
    let query_norm = l2_norm(query);
    if query_norm == 0.0 {
        return Err(RetrievalError::ZeroVector {
            context: "query embedding".into(),
        });
    }
    let normalized_query: Vec<f32> = query
        .iter()
        .map(|&x| (x as f64 / query_norm) as f32)
        .collect();

    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(i + 1);
    let mut scratch = vec![0f32; corpus.dim];
    for row in 0..corpus.len() {
        let values = corpus.row(row);
        let cosine = if corpus.normalized {
            dot_f64(&normalized_query, values)
        } else {
            let norm = l2_norm(values);
            if norm == 0.0 {
                return Err(RetrievalError::ZeroVector {
                    context: format!("corpus row for {:?}", corpus.ids[row]),
                });
            }
            for (dst, &x) in scratch.iter_mut().zip(values) {
                *dst = (x as f64 / norm) as f32;
            }
            dot_f64(&normalized_query, &scratch)
        };
        let entry = HeapEntry {
            cosine,
            id: &corpus.ids[row],
            row,
        };
        if heap.len() < i {
            heap.push(entry);
        } else if entry < *heap.peek().expect("nonempty heap") {
            heap.pop();
            heap.push(entry);
        }
    }

    let mut kept: Vec<HeapEntry> = heap.into_vec();
    // HeapEntry's order is worseness, so ascending sort puts the best first.
    kept.sort_unstable();
    Ok(kept
        .into_iter()
        .map(|e| RankedCandidate {
            report_id: corpus.ids[e.row].clone(),
            cosine: e.cosine,
            itm: None,
        })
        .collect())
}

/// Re-ranks candidates by matching score, descending, ties broken by
/// ascending id; keeps the top `j`. Cosine scores are preserved.
pub fn itm_top_j(
    query_id: &str,
    candidates: &[RankedCandidate],
    scorer: &dyn Scorer,
    j: usize,
) -> Result<Vec<RankedCandidate>, RetrievalError> {
    if j == 0 {
        return Err(RetrievalError::InvalidConfig("j must be positive".into()));
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let ids: Vec<&str> = candidates.iter().map(|c| c.report_id.as_str()).collect();
    let scores = scorer.itm_scores(query_id, &ids)?;
    let mut ranked: Vec<RankedCandidate> = candidates
        .iter()
        .zip(scores)
        .map(|(c, score)| RankedCandidate {
            report_id: c.report_id.clone(),
            cosine: c.cosine,
            itm: Some(score),
        })
        .collect();
    ranked.sort_by(|a, b| {
        let sa = a.itm.expect("scored").value();
        let sb = b.itm.expect("scored").value();
        sb.partial_cmp(&sa)
            .expect("finite itm score")
            .then_with(|| a.report_id.cmp(&b.report_id))
    });
    ranked.truncate(j.min(ranked.len()));
    Ok(ranked)
}

fn report_text<'a>(bundle: &'a CorpusBundle, id: &str) -> Result<&'a str, RetrievalError> {
    bundle
        .report(id)
        .map(|r| r.text.as_str())
        .ok_or_else(|| RetrievalError::UnknownId { id: id.to_string() })
}

/// Stage-3 selection with the NLI filter.
///
/// Traverses candidates in order. The first is accepted without a filter
/// call; each later candidate is accepted while the batch has room and the
/// backend classifies (current premise, candidate text) as neutral.
/// Traversal stops as soon as the batch is full.
pub fn select_nli(
    candidates: &[RankedCandidate],
    bundle: &CorpusBundle,
    nli: &dyn Scorer,
    k: usize,
) -> Result<(SelectionState, Vec<VerdictEntry>), RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidConfig("k must be positive".into()));
    }
    let mut state = SelectionState::default();
    let mut verdicts = Vec::new();
    for candidate in candidates {
        if state.selected.len() == k {
            break;
        }
        let text = report_text(bundle, &candidate.report_id)?;
        let verdict = if state.selected.is_empty() {
            Verdict::First
        } else {
            Verdict::from(nli.nli_classify(&state.premise, text)?)
        };
        verdicts.push(VerdictEntry {
            id: candidate.report_id.clone(),
            verdict,
        });
        if verdict.accepts() {
            state.push(&candidate.report_id, text);
        }
    }
    Ok((state, verdicts))
}

/// Stage-3 selection with the text-pair threshold filter: a later candidate
/// is accepted only when its pair score against the current premise is
/// strictly below `threshold`.
pub fn select_bertscore(
    candidates: &[RankedCandidate],
    bundle: &CorpusBundle,
    pair: &dyn Scorer,
    threshold: f64,
    k: usize,
) -> Result<(SelectionState, Vec<VerdictEntry>), RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidConfig("k must be positive".into()));
    }
    let mut state = SelectionState::default();
    let mut verdicts = Vec::new();
    for candidate in candidates {
        if state.selected.len() == k {
            break;
        }
        let text = report_text(bundle, &candidate.report_id)?;
        let verdict = if state.selected.is_empty() {
            Verdict::First
        } else {
            let score = pair.text_pair_score(&state.premise, text)?;
            if score < threshold {
                Verdict::BelowThreshold
            } else {
                Verdict::AtOrAboveThreshold
            }
        };
        verdicts.push(VerdictEntry {
            id: candidate.report_id.clone(),
            verdict,
        });
        if verdict.accepts() {
            state.push(&candidate.report_id, text);
        }
    }
    Ok((state, verdicts))
}

/// Joins the texts of the given report ids with a single space character.
/// A singleton list yields its text unchanged; an empty list yields "".
pub fn compose(ids: &[String], bundle: &CorpusBundle) -> Result<String, RetrievalError> {
    let mut parts = Vec::with_capacity(ids.len());
    for id in ids {
        parts.push(report_text(bundle, id)?);
    }
    Ok(parts.join(" "))
}

/// Runs the full pipeline for one query and returns the composed output
/// report together with its trace.
pub fn retrieve(
    query_id: &str,
    query: &[f32],
    bundle: &CorpusBundle,
    cfg: &PipelineConfig,
    metric: RankingMetric,
    itm: &dyn Scorer,
    filter: &dyn Scorer,
) -> Result<(String, RetrievalTrace), RetrievalError> {
    cfg.validate()?;
    let stage1 = cosine_top_i(query, bundle.normalized_embeddings(), cfg.i)?;
    let stage2 = match metric {
        RankingMetric::Itm => itm_top_j(query_id, &stage1, itm, cfg.effective_j())?,
        // Stage 1 is already sorted by cosine with the id tie-break.
        RankingMetric::Cosine => stage1
            .iter()
            .take(cfg.effective_j())
            .cloned()
            .collect(),
    };
    let (state, verdicts) = match cfg.filter {
        FilterKind::Nli => select_nli(&stage2, bundle, filter, cfg.k)?,
        FilterKind::Bertscore => {
            select_bertscore(&stage2, bundle, filter, cfg.bertscore_threshold, cfg.k)?
        }
        FilterKind::None => {
            let selected: Vec<String> = stage2
                .iter()
                .take(cfg.k)
                .map(|c| c.report_id.clone())
                .collect();
            let premise = compose(&selected, bundle)?;
            (SelectionState { selected, premise }, Vec::new())
        }
    };
    let trace = RetrievalTrace {
        query_id: query_id.to_string(),
        stage1: stage1
            .iter()
            .map(|c| StageOneEntry {
                id: c.report_id.clone(),
                cosine: c.cosine,
            })
            .collect(),
        stage2: stage2
            .iter()
            .map(|c| StageTwoEntry {
                id: c.report_id.clone(),
                itm: c.itm.map(|s| s.value()),
            })
            .collect(),
        verdicts,
        output: state.premise.clone(),
    };
    Ok((state.premise, trace))
}
