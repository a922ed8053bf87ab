//! Pluggable scorer backends.
//!
//! Three request kinds flow through the [`Scorer`] trait: image-text matching
//! scores for a query against a batch of reports, three-way NLI
//! classification of a premise/hypothesis pair, and a bounded text-pair
//! similarity. Backends: precomputed score matrix, deterministic mock, and a
//! client for an external process speaking one JSON object per line.
//!
//! No non-finite value crosses the trait boundary in either direction.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::tokenize;

/// Default number of report ids per external matching-score request.
pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Antonym pairs the mock NLI rule treats as contradictory when crossed
/// between premise and hypothesis.
pub fn default_antonyms() -> Vec<(String, String)> {
    vec![
        ("no".into(), "present".into()),
        ("normal".into(), "abnormal".into()),
    ]
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("unknown id {id:?}")]
    UnknownId { id: String },
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("non-finite score {value} ({context})")]
    NonFiniteScore { context: String, value: f64 },
    #[error("unknown NLI label {label:?}")]
    UnknownLabel { label: String },
    #[error("pair score {value} outside [0, 1]")]
    OutOfRange { value: f64 },
}

/// An image-text matching score: any finite real, higher means a better
/// match. Ordering, not scale, matters downstream.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ItmScore(f64);

impl ItmScore {
    pub fn new(value: f64) -> Result<Self, ScoreError> {
        if !value.is_finite() {
            return Err(ScoreError::NonFiniteScore {
                context: "itm score".into(),
                value,
            });
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Contradiction,
    Entailment,
    Neutral,
}

impl NliLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            NliLabel::Contradiction => "contradiction",
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
        }
    }

    fn parse(label: &str) -> Result<Self, ScoreError> {
        match label {
            "contradiction" => Ok(NliLabel::Contradiction),
            "entailment" => Ok(NliLabel::Entailment),
            "neutral" => Ok(NliLabel::Neutral),
            other => Err(ScoreError::UnknownLabel {
                label: other.to_string(),
            }),
        }
    }
}

/// A backend serving the three score requests of the pipeline.
///
/// Implementations must return exactly one finite score per input, in input
/// order, and must surface every backend problem as an error rather than a
/// partial result.
pub trait Scorer: Send + Sync {
    /// Matching scores for `query_id` against `report_ids`, aligned to the
    /// input order.
    fn itm_scores(&self, query_id: &str, report_ids: &[&str]) -> Result<Vec<ItmScore>, ScoreError>;

    fn nli_classify(&self, premise: &str, hypothesis: &str) -> Result<NliLabel, ScoreError>;

    /// Similarity of two texts in `[0, 1]`.
    fn text_pair_score(&self, a: &str, b: &str) -> Result<f64, ScoreError>;
}

// ---------------------------------------------------------------------------
// Matrix backend
// ---------------------------------------------------------------------------

/// Precomputed query x report score matrix.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    query_ids: Vec<String>,
    report_ids: Vec<String>,
    values: Vec<f64>,
    query_index: HashMap<String, usize>,
    report_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    query_ids: Vec<String>,
    report_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRow {
    query_id: String,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(
        query_ids: Vec<String>,
        report_ids: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self, ScoreError> {
        let bad = |msg: String| ScoreError::BackendFailure(format!("score matrix: {msg}"));
        if values.len() != query_ids.len() * report_ids.len() {
            return Err(bad(format!(
                "{} values for {} queries x {} reports",
                values.len(),
                query_ids.len(),
                report_ids.len()
            )));
        }
        if let Some(&v) = values.iter().find(|v| !v.is_finite()) {
            return Err(ScoreError::NonFiniteScore {
                context: "score matrix".into(),
                value: v,
            });
        }
        let query_index: HashMap<String, usize> = query_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        if query_index.len() != query_ids.len() {
            return Err(bad("duplicate query id".into()));
        }
        let report_index: HashMap<String, usize> = report_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        if report_index.len() != report_ids.len() {
            return Err(bad("duplicate report id".into()));
        }
        Ok(Self {
            query_ids,
            report_ids,
            values,
            query_index,
            report_index,
        })
    }

    /// Reads the JSONL matrix format: a header line with both id lists, then
    /// one `{"query_id": ..., "scores": [...]}` line per query.
    pub fn load(path: &Path) -> Result<Self, ScoreError> {
        let context = path.display().to_string();
        let bad = |msg: String| ScoreError::BackendFailure(format!("{context}: {msg}"));
        let file = std::fs::File::open(path).map_err(|e| bad(e.to_string()))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| bad("missing header line".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let header: MatrixHeader =
            serde_json::from_str(&header_line).map_err(|e| bad(format!("header: {e}")))?;

        let n_reports = header.report_ids.len();
        let mut rows: HashMap<String, Vec<f64>> = HashMap::new();
        for (number, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: MatrixRow = serde_json::from_str(&line)
                .map_err(|e| bad(format!("line {}: {e}", number + 2)))?;
            if row.scores.len() != n_reports {
                return Err(bad(format!(
                    "line {}: {} scores for {} reports",
                    number + 2,
                    row.scores.len(),
                    n_reports
                )));
            }
            if rows.insert(row.query_id.clone(), row.scores).is_some() {
                return Err(bad(format!("duplicate row for query {:?}", row.query_id)));
            }
        }

        let mut values = Vec::with_capacity(header.query_ids.len() * n_reports);
        for id in &header.query_ids {
            let row = rows
                .remove(id)
                .ok_or_else(|| bad(format!("no row for query {id:?}")))?;
            values.extend(row);
        }
        if let Some(extra) = rows.keys().next() {
            return Err(bad(format!("row for unknown query {extra:?}")));
        }
        Self::new(header.query_ids, header.report_ids, values)
    }

    /// Serializes to the JSONL matrix format read by [`Self::load`].
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&MatrixHeader {
            query_ids: self.query_ids.clone(),
            report_ids: self.report_ids.clone(),
        })
        .expect("header serializes");
        out.push('\n');
        for (i, query_id) in self.query_ids.iter().enumerate() {
            let row = MatrixRow {
                query_id: query_id.clone(),
                scores: self.values[i * self.report_ids.len()..(i + 1) * self.report_ids.len()]
                    .to_vec(),
            };
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn value(&self, query_id: &str, report_id: &str) -> Option<f64> {
        let q = *self.query_index.get(query_id)?;
        let r = *self.report_index.get(report_id)?;
        Some(self.values[q * self.report_ids.len() + r])
    }

    pub fn query_ids(&self) -> &[String] {
        &self.query_ids
    }

    pub fn report_ids(&self) -> &[String] {
        &self.report_ids
    }
}

/// Backend that looks matching scores up in a [`ScoreMatrix`]. NLI and
/// text-pair requests are not servable from a matrix keyed by ids.
#[derive(Debug, Clone)]
pub struct MatrixScorer {
    matrix: ScoreMatrix,
}

impl MatrixScorer {
    pub fn new(matrix: ScoreMatrix) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &ScoreMatrix {
        &self.matrix
    }
}

impl Scorer for MatrixScorer {
    fn itm_scores(&self, query_id: &str, report_ids: &[&str]) -> Result<Vec<ItmScore>, ScoreError> {
        if !self.matrix.query_index.contains_key(query_id) {
            return Err(ScoreError::UnknownId {
                id: query_id.to_string(),
            });
        }
        report_ids
            .iter()
            .map(|&id| {
                let value = self
                    .matrix
                    .value(query_id, id)
                    .ok_or_else(|| ScoreError::UnknownId { id: id.to_string() })?;
                ItmScore::new(value)
            })
            .collect()
    }

    fn nli_classify(&self, _premise: &str, _hypothesis: &str) -> Result<NliLabel, ScoreError> {
        Err(ScoreError::BackendFailure(
            "matrix backend does not serve nli requests".into(),
        ))
    }

    fn text_pair_score(&self, _a: &str, _b: &str) -> Result<f64, ScoreError> {
        Err(ScoreError::BackendFailure(
            "matrix backend does not serve pair requests".into(),
        ))
    }
}

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

/// Deterministic scorer for tests and demos.
///
/// * Matching score: a seeded FNV-1a hash of `(query id, report id)` mapped
///   to `[0, 1)`.
/// * NLI: `entailment` if the hypothesis token set is a subset of the
///   premise's; `contradiction` if an antonym pair is crossed between the two
///   texts; `neutral` otherwise. A pure function of the two token sets.
/// * Pair: token-set Jaccard similarity (1.0 when both sets are empty).
///
/// Tokenization matches [`crate::metrics::tokenize`].
#[derive(Debug, Clone)]
pub struct MockScorer {
    seed: u64,
    antonyms: Vec<(String, String)>,
}

impl Default for MockScorer {
    fn default() -> Self {
        Self::new(0)
    }
}

impl MockScorer {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            antonyms: default_antonyms(),
        }
    }

    pub fn with_antonyms(mut self, antonyms: Vec<(String, String)>) -> Self {
        self.antonyms = antonyms;
        self
    }

    fn hash01(&self, query_id: &str, report_id: &str) -> f64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&self.seed.to_le_bytes());
        eat(query_id.as_bytes());
        eat(&[0]);
        eat(report_id.as_bytes());
        // Top 53 bits give a uniform double in [0, 1).
        (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

impl Scorer for MockScorer {
    fn itm_scores(&self, query_id: &str, report_ids: &[&str]) -> Result<Vec<ItmScore>, ScoreError> {
        report_ids
            .iter()
            .map(|&id| ItmScore::new(self.hash01(query_id, id)))
            .collect()
    }

    fn nli_classify(&self, premise: &str, hypothesis: &str) -> Result<NliLabel, ScoreError> {
        let p = token_set(premise);
        let h = token_set(hypothesis);
        if h.is_subset(&p) {
            return Ok(NliLabel::Entailment);
        }
        let crossed = self.antonyms.iter().any(|(x, y)| {
            (p.contains(x) && h.contains(y)) || (p.contains(y) && h.contains(x))
        });
        if crossed {
            Ok(NliLabel::Contradiction)
        } else {
            Ok(NliLabel::Neutral)
        }
    }

    fn text_pair_score(&self, a: &str, b: &str) -> Result<f64, ScoreError> {
        let sa = token_set(a);
        let sb = token_set(b);
        let union = sa.union(&sb).count();
        if union == 0 {
            return Ok(1.0);
        }
        let inter = sa.intersection(&sb).count();
        Ok(inter as f64 / union as f64)
    }
}

// ---------------------------------------------------------------------------
// Wire protocol
// ---------------------------------------------------------------------------

/// One request of the scorer wire protocol (UTF-8, one JSON object per line,
/// responses in request order; the server exits cleanly on end-of-input).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum WireRequest {
    Itm {
        query_id: String,
        report_ids: Vec<String>,
    },
    Nli {
        premise: String,
        hypothesis: String,
    },
    Pair {
        a: String,
        b: String,
    },
}

/// A score on the wire: a JSON number, or a string carrying a non-finite
/// value (JSON itself cannot encode NaN or infinities).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireScore {
    Number(f64),
    Text(String),
}

impl WireScore {
    pub fn from_f64(value: f64) -> Self {
        if value.is_finite() {
            WireScore::Number(value)
        } else {
            WireScore::Text(value.to_string())
        }
    }

    fn into_f64(self, context: &str) -> Result<f64, ScoreError> {
        match self {
            WireScore::Number(v) if v.is_finite() => Ok(v),
            WireScore::Number(v) => Err(ScoreError::NonFiniteScore {
                context: context.to_string(),
                value: v,
            }),
            WireScore::Text(s) => match s.parse::<f64>() {
                Ok(v) if !v.is_finite() => Err(ScoreError::NonFiniteScore {
                    context: context.to_string(),
                    value: v,
                }),
                _ => Err(ScoreError::BackendFailure(format!(
                    "{context}: score must be a JSON number, got {s:?}"
                ))),
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItmResponse {
    pub scores: Vec<WireScore>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NliResponse {
    pub label: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairResponse {
    pub score: WireScore,
}

// ---------------------------------------------------------------------------
// External-process backend
// ---------------------------------------------------------------------------

struct ExternalProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl ExternalProcess {
    /// One ordered request/response round trip.
    fn round_trip(&mut self, request: &WireRequest) -> Result<String, ScoreError> {
        let line = serde_json::to_string(request)
            .map_err(|e| ScoreError::BackendFailure(format!("request encoding: {e}")))?;
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| ScoreError::BackendFailure("scorer process stdin closed".into()))?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
            .map_err(|e| ScoreError::BackendFailure(format!("scorer process write: {e}")))?;
        let mut response = String::new();
        let n = self
            .stdout
            .read_line(&mut response)
            .map_err(|e| ScoreError::BackendFailure(format!("scorer process read: {e}")))?;
        if n == 0 {
            return Err(ScoreError::BackendFailure(
                "scorer process closed its output mid-stream".into(),
            ));
        }
        Ok(response)
    }
}

impl Drop for ExternalProcess {
    fn drop(&mut self) {
        // Closing stdin signals end-of-input; a conforming server exits.
        self.stdin.take();
        let _ = self.child.wait();
    }
}

/// Client for an external scorer process.
///
/// Requests are serialized per process instance; callers wanting parallelism
/// create one instance per worker.
pub struct ExternalScorer {
    process: Mutex<ExternalProcess>,
    batch_size: usize,
    command: Vec<String>,
}

impl ExternalScorer {
    pub fn spawn(command: &[String], batch_size: usize) -> Result<Self, ScoreError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| ScoreError::BackendFailure("empty scorer command".into()))?;
        if batch_size == 0 {
            return Err(ScoreError::BackendFailure("batch size must be >= 1".into()));
        }
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| {
                ScoreError::BackendFailure(format!("cannot spawn {program:?}: {e}"))
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            process: Mutex::new(ExternalProcess {
                child,
                stdin: Some(stdin),
                stdout,
            }),
            batch_size,
            command: command.to_vec(),
        })
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    fn request(&self, request: &WireRequest) -> Result<String, ScoreError> {
        let mut process = self
            .process
            .lock()
            .map_err(|_| ScoreError::BackendFailure("scorer client poisoned".into()))?;
        process.round_trip(request)
    }
}

impl Scorer for ExternalScorer {
    fn itm_scores(&self, query_id: &str, report_ids: &[&str]) -> Result<Vec<ItmScore>, ScoreError> {
        let mut out = Vec::with_capacity(report_ids.len());
        for chunk in report_ids.chunks(self.batch_size) {
            let request = WireRequest::Itm {
                query_id: query_id.to_string(),
                report_ids: chunk.iter().map(|s| s.to_string()).collect(),
            };
            let line = self.request(&request)?;
            let response: ItmResponse = serde_json::from_str(&line)
                .map_err(|e| ScoreError::BackendFailure(format!("itm response: {e}")))?;
            if response.scores.len() != chunk.len() {
                return Err(ScoreError::BackendFailure(format!(
                    "itm response has {} scores for {} reports",
                    response.scores.len(),
                    chunk.len()
                )));
            }
            for (score, &id) in response.scores.into_iter().zip(chunk) {
                out.push(ItmScore::new(score.into_f64(&format!("itm score for {id:?}"))?)?);
            }
        }
        Ok(out)
    }

    fn nli_classify(&self, premise: &str, hypothesis: &str) -> Result<NliLabel, ScoreError> {
        let request = WireRequest::Nli {
            premise: premise.to_string(),
            hypothesis: hypothesis.to_string(),
        };
        let line = self.request(&request)?;
        let response: NliResponse = serde_json::from_str(&line)
            .map_err(|e| ScoreError::BackendFailure(format!("nli response: {e}")))?;
        NliLabel::parse(&response.label)
    }

    fn text_pair_score(&self, a: &str, b: &str) -> Result<f64, ScoreError> {
        let request = WireRequest::Pair {
            a: a.to_string(),
            b: b.to_string(),
        };
        let line = self.request(&request)?;
        let response: PairResponse = serde_json::from_str(&line)
            .map_err(|e| ScoreError::BackendFailure(format!("pair response: {e}")))?;
        let value = response.score.into_f64("pair score")?;
        if !(0.0..=1.0).contains(&value) {
            return Err(ScoreError::OutOfRange { value });
        }
        Ok(value)
    }
}

// ---------------------------------------------------------------------------
// Backend construction
// ---------------------------------------------------------------------------

/// Serializable description of a scorer backend; exactly one kind is active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    Matrix {
        path: PathBuf,
    },
    ExternalProcess {
        command: Vec<String>,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
    },
    Mock {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        antonyms: Option<Vec<(String, String)>>,
    },
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

impl ScorerSpec {
    pub fn build(&self) -> Result<ScorerBackend, ScoreError> {
        match self {
            ScorerSpec::Matrix { path } => {
                Ok(ScorerBackend::Matrix(MatrixScorer::new(ScoreMatrix::load(path)?)))
            }
            ScorerSpec::ExternalProcess {
                command,
                batch_size,
            } => Ok(ScorerBackend::External(ExternalScorer::spawn(
                command,
                *batch_size,
            )?)),
            ScorerSpec::Mock { seed, antonyms } => {
                let mut mock = MockScorer::new(*seed);
                if let Some(pairs) = antonyms {
                    mock = mock.with_antonyms(pairs.clone());
                }
                Ok(ScorerBackend::Mock(mock))
            }
        }
    }
}

/// A constructed backend of any kind.
pub enum ScorerBackend {
    Matrix(MatrixScorer),
    External(ExternalScorer),
    Mock(MockScorer),
}

impl ScorerBackend {
    fn inner(&self) -> &dyn Scorer {
        match self {
            ScorerBackend::Matrix(s) => s,
            ScorerBackend::External(s) => s,
            ScorerBackend::Mock(s) => s,
        }
    }
}

impl Scorer for ScorerBackend {
    fn itm_scores(&self, query_id: &str, report_ids: &[&str]) -> Result<Vec<ItmScore>, ScoreError> {
        self.inner().itm_scores(query_id, report_ids)
    }

    fn nli_classify(&self, premise: &str, hypothesis: &str) -> Result<NliLabel, ScoreError> {
        self.inner().nli_classify(premise, hypothesis)
    }

    fn text_pair_score(&self, a: &str, b: &str) -> Result<f64, ScoreError> {
        self.inner().text_pair_score(a, b)
    }
}
