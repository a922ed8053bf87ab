//! Evaluation metrics and aggregation.
//!
//! Computed locally: sentence-level BLEU-2 and the cosine similarity of
//! binary label presence vectors. Ingested from files: per-pair BERTScore and
//! RadGraph-style F1 values, which external models produce. The composite
//! score is a linear combination of BLEU-2 and the ingested F1 (lower is
//! better under the default coefficients); it is reported only where the F1
//! is available, never imputed.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelVector, LABEL_CLASSES};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("malformed record ({context}, line {line}): {reason}")]
    MalformedRecord {
        context: String,
        line: usize,
        reason: String,
    },
    #[error("score {value} for {field} outside [0, 1] ({context}, line {line})")]
    OutOfRange {
        context: String,
        line: usize,
        field: String,
        value: f64,
    },
    #[error("duplicate study id {id:?}")]
    DuplicateId { id: String },
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("cannot access {path}: {source}")]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Canonical tokenizer: lowercase, every character outside `[a-z0-9]`
/// becomes a space, then split on whitespace runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| {
            if c.is_ascii_lowercase() || c.is_ascii_digit() {
                c
            } else {
                ' '
            }
        })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn clipped_precision(candidate: &[String], reference: &[String], n: usize) -> f64 {
    let total = candidate.len() + 1 - n;
    let reference_counts = ngram_counts(reference, n);
    let clipped: usize = ngram_counts(candidate, n)
        .into_iter()
        .map(|(gram, count)| count.min(*reference_counts.get(gram).unwrap_or(&0)))
        .sum();
    clipped as f64 / total as f64
}

/// Sentence-level BLEU-2 without smoothing.
///
/// `p1` and `p2` are clipped modified n-gram precisions; a zero in either
/// makes the score zero. Otherwise the score is
/// `BP * exp((ln p1 + ln p2) / 2)` with `BP = 1` when the candidate is longer
/// than the reference and `exp(1 - r/c)` otherwise. Two empty texts score
/// 1.0; an empty candidate against a nonempty reference scores 0.0. A
/// single-token candidate has no bigrams, so only `p1` and the brevity
/// penalty apply.
pub fn bleu2(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() && refr.is_empty() {
        return 1.0;
    }
    if cand.is_empty() {
        return 0.0;
    }
    let p1 = clipped_precision(&cand, &refr, 1);
    let p2 = if cand.len() >= 2 {
        clipped_precision(&cand, &refr, 2)
    } else {
        1.0
    };
    if p1 == 0.0 || p2 == 0.0 {
        return 0.0;
    }
    let c = cand.len() as f64;
    let r = refr.len() as f64;
    let brevity_penalty = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    brevity_penalty * ((p1.ln() + p2.ln()) / 2.0).exp()
}

/// Cosine similarity of two binary presence vectors. Two all-zero vectors
/// agree (1.0); exactly one all-zero vector scores 0.0.
pub fn presence_cosine(a: &[u8; LABEL_CLASSES], b: &[u8; LABEL_CLASSES]) -> f64 {
    let na = a.iter().filter(|&&x| x == 1).count();
    let nb = b.iter().filter(|&&x| x == 1).count();
    if na == 0 && nb == 0 {
        return 1.0;
    }
    if na == 0 || nb == 0 {
        return 0.0;
    }
    let inter = a
        .iter()
        .zip(b.iter())
        .filter(|(&x, &y)| x == 1 && y == 1)
        .count();
    inter as f64 / ((na * nb) as f64).sqrt()
}

/// Label-vector similarity: cosine of the two presence vectors.
pub fn chexbert_sim(a: &LabelVector, b: &LabelVector) -> f64 {
    presence_cosine(&a.presence(), &b.presence())
}

/// Presence-OR across label vectors: a finding counts as present in a
/// composed report when any constituent report carries it.
pub fn presence_union<'a>(
    labels: impl IntoIterator<Item = &'a LabelVector>,
) -> [u8; LABEL_CLASSES] {
    let mut out = [0u8; LABEL_CLASSES];
    for l in labels {
        for (dst, &p) in out.iter_mut().zip(l.presence().iter()) {
            *dst |= p;
        }
    }
    out
}

/// Coefficients of the composite score. The defaults make higher BLEU-2 and
/// higher F1 decrease the score, matching its lower-is-better orientation;
/// override them in config to use externally fitted values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadCliqCoeffs {
    pub intercept: f64,
    pub w_bleu2: f64,
    pub w_radgraph: f64,
}

impl Default for RadCliqCoeffs {
    fn default() -> Self {
        Self {
            intercept: 0.0,
            w_bleu2: -1.0,
            w_radgraph: -1.0,
        }
    }
}

/// Exactly `intercept + w_bleu2 * bleu2 + w_radgraph * radgraph_f1`.
pub fn radcliq(bleu2: f64, radgraph_f1: f64, coeffs: &RadCliqCoeffs) -> Result<f64, MetricsError> {
    let value = coeffs.intercept + coeffs.w_bleu2 * bleu2 + coeffs.w_radgraph * radgraph_f1;
    if !value.is_finite() {
        return Err(MetricsError::NonFinite(format!(
            "composite of ({bleu2}, {radgraph_f1})"
        )));
    }
    Ok(value)
}

/// Externally computed per-pair scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    pub bertscore: Option<f64>,
    pub radgraph_f1: Option<f64>,
}

#[derive(Deserialize)]
struct ExternalScoreRecord {
    study_id: String,
    #[serde(default)]
    bertscore: Option<f64>,
    #[serde(default)]
    radgraph_f1: Option<f64>,
}

/// Reads a JSONL file of `{"study_id", "bertscore"?, "radgraph_f1"?}` lines.
/// Every present value must lie in [0, 1]; study ids must be unique; each
/// line must carry at least one score.
pub fn ingest_external_scores(path: &Path) -> Result<BTreeMap<String, ExternalScores>, MetricsError> {
    let context = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| MetricsError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for (number, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ExternalScoreRecord =
            serde_json::from_str(&line).map_err(|e| MetricsError::MalformedRecord {
                context: context.clone(),
                line: number + 1,
                reason: e.to_string(),
            })?;
        if record.bertscore.is_none() && record.radgraph_f1.is_none() {
            return Err(MetricsError::MalformedRecord {
                context: context.clone(),
                line: number + 1,
                reason: "record carries neither bertscore nor radgraph_f1".into(),
            });
        }
        for (field, value) in [
            ("bertscore", record.bertscore),
            ("radgraph_f1", record.radgraph_f1),
        ] {
            if let Some(v) = value {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(MetricsError::OutOfRange {
                        context: context.clone(),
                        line: number + 1,
                        field: field.into(),
                        value: v,
                    });
                }
            }
        }
        let scores = ExternalScores {
            bertscore: record.bertscore,
            radgraph_f1: record.radgraph_f1,
        };
        if out.insert(record.study_id.clone(), scores).is_some() {
            return Err(MetricsError::DuplicateId {
                id: record.study_id,
            });
        }
    }
    Ok(out)
}

/// All metric values for one candidate/reference pair. The composite score
/// is present exactly when the ingested F1 is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub study_id: String,
    pub bleu2: f64,
    pub chexbert_sim: f64,
    pub bertscore: Option<f64>,
    pub radgraph_f1: Option<f64>,
    pub radcliq: Option<f64>,
}

/// Scores one pair: BLEU-2 and presence cosine computed here, external
/// values attached, composite filled in when the F1 is available.
pub fn score_pair(
    study_id: &str,
    candidate_text: &str,
    reference_text: &str,
    candidate_presence: &[u8; LABEL_CLASSES],
    reference_presence: &[u8; LABEL_CLASSES],
    external: Option<&ExternalScores>,
    coeffs: &RadCliqCoeffs,
) -> Result<PairScores, MetricsError> {
    let bleu = bleu2(candidate_text, reference_text);
    let chexbert = presence_cosine(candidate_presence, reference_presence);
    let external = external.copied().unwrap_or_default();
    let composite = external
        .radgraph_f1
        .map(|f1| radcliq(bleu, f1, coeffs))
        .transpose()?;
    Ok(PairScores {
        study_id: study_id.to_string(),
        bleu2: bleu,
        chexbert_sim: chexbert,
        bertscore: external.bertscore,
        radgraph_f1: external.radgraph_f1,
        radcliq: composite,
    })
}

/// Metric column names in report order (composite first, BLEU-2 last).
pub const METRIC_COLUMNS: [&str; 5] = ["radcliq", "radgraph_f1", "chexbert", "bertscore", "bleu2"];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub metric: &'static str,
    pub mean: Option<f64>,
    pub n: usize,
}

/// Per-metric means over non-missing values, in [`METRIC_COLUMNS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub count: usize,
    pub rows: Vec<MetricSummary>,
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Arithmetic means over the non-missing values per metric.
pub fn aggregate(pairs: &[PairScores]) -> Result<SummaryTable, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let collect = |get: fn(&PairScores) -> Option<f64>| -> Vec<f64> {
        pairs.iter().filter_map(get).collect()
    };
    let columns: [(&'static str, Vec<f64>); 5] = [
        ("radcliq", collect(|p| p.radcliq)),
        ("radgraph_f1", collect(|p| p.radgraph_f1)),
        ("chexbert", collect(|p| Some(p.chexbert_sim))),
        ("bertscore", collect(|p| p.bertscore)),
        ("bleu2", collect(|p| Some(p.bleu2))),
    ];
    let rows = columns
        .into_iter()
        .map(|(metric, values)| MetricSummary {
            metric,
            mean: mean_of(&values),
            n: values.len(),
        })
        .collect();
    Ok(SummaryTable {
        count: pairs.len(),
        rows,
    })
}

/// Formats a float the way every CSV and table in this crate does: shortest
/// round-trip representation, empty for a missing value.
pub fn format_metric(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

impl SummaryTable {
    /// CSV with header `metric,mean,n`; missing means are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean,n\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{}",
                row.metric,
                format_metric(row.mean),
                row.n
            );
        }
        out
    }
}
