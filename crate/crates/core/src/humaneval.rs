//! Human-evaluation machinery.
//!
//! Annotators score each line of a report with an error severity 0..=4.
//! Per-annotation summaries collapse the lines to a maximum error severity
//! (MES) and an average error severity (AES). Source-level tables report the
//! empirical CDF of either measure at thresholds 0..=3, and a paired
//! comparison restricts to studies annotated under both the system and the
//! baseline. Study-to-source assignment draws independently per study from a
//! seeded generator.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest valid per-line error severity.
pub const MAX_SEVERITY: u8 = 4;

/// ECDF thresholds, mirroring the report table columns 0, <=1, <=2, <=3.
pub const ECDF_THRESHOLDS: [f64; 4] = [0.0, 1.0, 2.0, 3.0];

#[derive(Debug, Error)]
pub enum HumanEvalError {
    #[error("malformed record ({context}, line {line}): {reason}")]
    MalformedRecord {
        context: String,
        line: usize,
        reason: String,
    },
    #[error("severity {value} outside 0..=4 for study {study_id:?}")]
    InvalidSeverity { study_id: String, value: u8 },
    #[error("study {study_id:?} has no line severities")]
    EmptySeverities { study_id: String },
    #[error("empty input")]
    EmptyInput,
    #[error("bad source probabilities: {0}")]
    BadProbabilities(String),
    #[error("cannot access {path}: {source}")]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where an annotated report came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    Xrem,
    Baseline,
    HumanBenchmark,
}

impl ReportSource {
    pub const ALL: [ReportSource; 3] = [
        ReportSource::Xrem,
        ReportSource::Baseline,
        ReportSource::HumanBenchmark,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ReportSource::Xrem => "xrem",
            ReportSource::Baseline => "baseline",
            ReportSource::HumanBenchmark => "human_benchmark",
        }
    }
}

/// One annotator's per-line error severities for one study's report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub study_id: String,
    pub source: ReportSource,
    pub annotator_id: String,
    pub severities: Vec<u8>,
}

impl Annotation {
    /// Severities must be nonempty with every value in 0..=4. Out-of-range
    /// values are an error, never clamped.
    pub fn validate(&self) -> Result<(), HumanEvalError> {
        if self.severities.is_empty() {
            return Err(HumanEvalError::EmptySeverities {
                study_id: self.study_id.clone(),
            });
        }
        if let Some(&value) = self.severities.iter().find(|&&v| v > MAX_SEVERITY) {
            return Err(HumanEvalError::InvalidSeverity {
                study_id: self.study_id.clone(),
                value,
            });
        }
        Ok(())
    }
}

/// Loads and validates annotations from JSONL.
pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>, HumanEvalError> {
    let context = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| HumanEvalError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut annotations = Vec::new();
    for (number, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let annotation: Annotation =
            serde_json::from_str(&line).map_err(|e| HumanEvalError::MalformedRecord {
                context: context.clone(),
                line: number + 1,
                reason: e.to_string(),
            })?;
        annotation.validate()?;
        annotations.push(annotation);
    }
    Ok(annotations)
}

/// Maximum error severity across the annotation's lines.
pub fn mes(a: &Annotation) -> u8 {
    a.severities.iter().copied().max().unwrap_or(0)
}

/// Average error severity: severity sum divided by line count.
pub fn aes(a: &Annotation) -> f64 {
    if a.severities.is_empty() {
        return 0.0;
    }
    a.severities.iter().map(|&v| v as f64).sum::<f64>() / a.severities.len() as f64
}

/// Both per-annotation summaries; `aes <= mes` always.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeveritySummary {
    pub mes: u8,
    pub aes: f64,
}

pub fn severity_summary(a: &Annotation) -> SeveritySummary {
    SeveritySummary {
        mes: mes(a),
        aes: aes(a),
    }
}

/// Which per-annotation measure a table row summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Mes,
    Aes,
}

fn measure_of(a: &Annotation, measure: Measure) -> f64 {
    match measure {
        Measure::Mes => mes(a) as f64,
        Measure::Aes => aes(a),
    }
}

/// Proportions of annotations with measure <= t for each ECDF threshold.
/// Non-decreasing across thresholds by construction.
pub fn ecdf_row(annotations: &[Annotation], measure: Measure) -> Result<[f64; 4], HumanEvalError> {
    if annotations.is_empty() {
        return Err(HumanEvalError::EmptyInput);
    }
    let values: Vec<f64> = annotations.iter().map(|a| measure_of(a, measure)).collect();
    let n = values.len() as f64;
    let mut row = [0.0; 4];
    for (slot, &threshold) in row.iter_mut().zip(ECDF_THRESHOLDS.iter()) {
        *slot = values.iter().filter(|&&v| v <= threshold).count() as f64 / n;
    }
    Ok(row)
}

/// Per-source means over the paired studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedMeans {
    pub xrem: f64,
    pub baseline: f64,
}

/// Outcome of the paired comparison over studies annotated under both the
/// system and the baseline. All quantities are `None` when no study
/// qualifies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedReport {
    pub n_studies: usize,
    pub frac_same_or_lower_mes: Option<f64>,
    pub frac_same_or_lower_aes: Option<f64>,
    pub mean_mes: Option<PairedMeans>,
    pub mean_aes: Option<PairedMeans>,
}

/// Mean with the addends sorted first, so the result is invariant under
/// input reordering.
fn sorted_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite measure"));
    values.iter().sum::<f64>() / values.len() as f64
}

/// Restricts to studies with at least one annotation from both the system
/// and the baseline. Multiple annotations of the same study and source are
/// collapsed by their mean before comparing; "same or lower" is <=.
pub fn paired_compare(annotations: &[Annotation]) -> PairedReport {
    #[derive(Default)]
    struct StudySide {
        mes: Vec<f64>,
        aes: Vec<f64>,
    }
    let mut studies: BTreeMap<&str, (StudySide, StudySide)> = BTreeMap::new();
    for a in annotations {
        let sides = studies.entry(a.study_id.as_str()).or_default();
        let side = match a.source {
            ReportSource::Xrem => &mut sides.0,
            ReportSource::Baseline => &mut sides.1,
            ReportSource::HumanBenchmark => continue,
        };
        side.mes.push(mes(a) as f64);
        side.aes.push(aes(a));
    }

    let mut n_studies = 0usize;
    let mut mes_le = 0usize;
    let mut aes_le = 0usize;
    let mut xrem_mes = Vec::new();
    let mut base_mes = Vec::new();
    let mut xrem_aes = Vec::new();
    let mut base_aes = Vec::new();
    for (xrem, baseline) in studies.into_values() {
        if xrem.mes.is_empty() || baseline.mes.is_empty() {
            continue;
        }
        n_studies += 1;
        let xm = sorted_mean(xrem.mes);
        let bm = sorted_mean(baseline.mes);
        let xa = sorted_mean(xrem.aes);
        let ba = sorted_mean(baseline.aes);
        if xm <= bm {
            mes_le += 1;
        }
        if xa <= ba {
            aes_le += 1;
        }
        xrem_mes.push(xm);
        base_mes.push(bm);
        xrem_aes.push(xa);
        base_aes.push(ba);
    }

    if n_studies == 0 {
        return PairedReport {
            n_studies: 0,
            frac_same_or_lower_mes: None,
            frac_same_or_lower_aes: None,
            mean_mes: None,
            mean_aes: None,
        };
    }
    let n = n_studies as f64;
    PairedReport {
        n_studies,
        frac_same_or_lower_mes: Some(mes_le as f64 / n),
        frac_same_or_lower_aes: Some(aes_le as f64 / n),
        mean_mes: Some(PairedMeans {
            xrem: sorted_mean(xrem_mes),
            baseline: sorted_mean(base_mes),
        }),
        mean_aes: Some(PairedMeans {
            xrem: sorted_mean(xrem_aes),
            baseline: sorted_mean(base_aes),
        }),
    }
}

/// Per-source draw probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceProbs {
    pub xrem: f64,
    pub baseline: f64,
    pub human_benchmark: f64,
}

impl Default for SourceProbs {
    fn default() -> Self {
        Self {
            xrem: 0.5,
            baseline: 0.25,
            human_benchmark: 0.25,
        }
    }
}

impl SourceProbs {
    pub fn validate(&self) -> Result<(), HumanEvalError> {
        let parts = [self.xrem, self.baseline, self.human_benchmark];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(HumanEvalError::BadProbabilities(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(HumanEvalError::BadProbabilities(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssignmentEntry {
    pub study_id: String,
    pub source: ReportSource,
}

/// A source per study, with the generating seed recorded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceAssignment {
    pub seed: u64,
    pub entries: Vec<AssignmentEntry>,
}

/// Draws a source per study, independently, from a generator seeded with
/// `seed`. The output depends only on the study id order, the seed, and the
/// probabilities.
pub fn assign_sources(
    study_ids: &[String],
    seed: u64,
    probs: &SourceProbs,
) -> Result<SourceAssignment, HumanEvalError> {
    probs.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = study_ids
        .iter()
        .map(|study_id| {
            let u: f64 = rng.gen();
            let source = if u < probs.xrem {
                ReportSource::Xrem
            } else if u < probs.xrem + probs.baseline {
                ReportSource::Baseline
            } else {
                ReportSource::HumanBenchmark
            };
            AssignmentEntry {
                study_id: study_id.clone(),
                source,
            }
        })
        .collect();
    Ok(SourceAssignment { seed, entries })
}
