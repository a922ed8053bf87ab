//! Run configuration: a single JSON document plus command-line overrides.
//!
//! Precedence per knob: command-line flag > config file > built-in default.
//! Relative paths inside the config file resolve against the file's own
//! directory; paths given on the command line resolve against the working
//! directory as usual.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use xrem_core::metrics::RadCliqCoeffs;
use xrem_core::retrieval::{FilterKind, PipelineConfig, RankingMetric};
use xrem_core::scoring::ScorerSpec;

use crate::CliError;

/// Built-in default seed, used wherever no seed is configured.
pub const DEFAULT_SEED: u64 = 42;
/// Built-in default output directory.
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub reports: PathBuf,
    pub embeddings: PathBuf,
    pub embedding_ids: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryPaths {
    pub embeddings: PathBuf,
    pub embedding_ids: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerSpecs {
    pub itm: Option<ScorerSpec>,
    pub nli: Option<ScorerSpec>,
    pub pair: Option<ScorerSpec>,
}

/// Pipeline knobs as they appear in the config file; every field optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelinePartial {
    pub i: Option<usize>,
    pub j: Option<usize>,
    pub k: Option<usize>,
    pub filter: Option<FilterKind>,
    pub bertscore_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningSection {
    pub negatives_per_image: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub pairs: Option<PathBuf>,
    pub composed: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub external_scores: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HumanEvalSection {
    pub annotations: Option<PathBuf>,
    pub assign_ids: Option<PathBuf>,
}

/// The ablation grid: one row per cell of the cross product.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub metric: Vec<RankingMetric>,
    pub filter: Vec<FilterKind>,
    pub i: Vec<usize>,
    pub k: Vec<usize>,
    pub pt: Vec<bool>,
    /// Matching-score matrix used by `pt = false` cells; `pt = true` cells
    /// use the `scorers.itm` backend.
    pub itm_matrix_no_pt: Option<PathBuf>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            metric: vec![RankingMetric::Itm],
            filter: vec![FilterKind::Nli],
            i: vec![xrem_core::retrieval::DEFAULT_TOP_I],
            k: vec![xrem_core::retrieval::DEFAULT_TOP_K],
            pt: vec![true],
            itm_matrix_no_pt: None,
        }
    }
}

impl AblationSection {
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, empty) in [
            ("metric", self.metric.is_empty()),
            ("filter", self.filter.is_empty()),
            ("i", self.i.is_empty()),
            ("k", self.k.is_empty()),
            ("pt", self.pt.is_empty()),
        ] {
            if empty {
                return Err(CliError::config(format!("ablation.{name} must be nonempty")));
            }
        }
        Ok(())
    }
}

/// The config file as written.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub corpus: Option<CorpusPaths>,
    pub queries: Option<QueryPaths>,
    pub scorers: ScorerSpecs,
    pub pipeline: PipelinePartial,
    pub radcliq: Option<RadCliqCoeffs>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub mining: MiningSection,
    pub eval: EvalSection,
    pub humaneval: HumanEvalSection,
    pub ablation: Option<AblationSection>,
}

fn absolutize(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

fn absolutize_spec(base: &Path, spec: &mut ScorerSpec) {
    if let ScorerSpec::Matrix { path } = spec {
        absolutize(base, path);
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: FileConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        if let Some(corpus) = &mut config.corpus {
            absolutize(&base, &mut corpus.reports);
            absolutize(&base, &mut corpus.embeddings);
            absolutize(&base, &mut corpus.embedding_ids);
        }
        if let Some(queries) = &mut config.queries {
            absolutize(&base, &mut queries.embeddings);
            absolutize(&base, &mut queries.embedding_ids);
        }
        for spec in [&mut config.scorers.itm, &mut config.scorers.nli, &mut config.scorers.pair]
            .into_iter()
            .flatten()
        {
            absolutize_spec(&base, spec);
        }
        if let Some(out) = &mut config.out {
            absolutize(&base, out);
        }
        for path in [
            &mut config.eval.pairs,
            &mut config.eval.composed,
            &mut config.eval.trace,
            &mut config.eval.references,
            &mut config.eval.external_scores,
            &mut config.humaneval.annotations,
            &mut config.humaneval.assign_ids,
        ]
        .into_iter()
        .flatten()
        {
            absolutize(&base, path);
        }
        if let Some(ablation) = &mut config.ablation {
            if let Some(path) = &mut ablation.itm_matrix_no_pt {
                absolutize(&base, path);
            }
        }
        Ok(config)
    }
}

/// Shared flags after merging with the config file and defaults.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub file: FileConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub pipeline: PipelineConfig,
    pub radcliq: RadCliqCoeffs,
}

/// Flag-level overrides of the pipeline knobs.
#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineOverrides {
    pub i: Option<usize>,
    pub j: Option<usize>,
    pub k: Option<usize>,
    pub filter: Option<FilterKind>,
    pub bertscore_threshold: Option<f64>,
}

pub fn parse_filter(name: &str) -> Result<FilterKind, CliError> {
    match name {
        "nli" => Ok(FilterKind::Nli),
        "bertscore" => Ok(FilterKind::Bertscore),
        "none" => Ok(FilterKind::None),
        other => Err(CliError::config(format!(
            "unknown filter {other:?} (expected nli, bertscore, or none)"
        ))),
    }
}

pub fn resolve(
    config_path: Option<&Path>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    workers: Option<usize>,
    overrides: PipelineOverrides,
) -> Result<Resolved, CliError> {
    let file = match config_path {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let defaults = PipelineConfig::default();
    let pipeline = PipelineConfig {
        i: overrides.i.or(file.pipeline.i).unwrap_or(defaults.i),
        j: overrides.j.or(file.pipeline.j),
        k: overrides.k.or(file.pipeline.k).unwrap_or(defaults.k),
        filter: overrides
            .filter
            .or(file.pipeline.filter)
            .unwrap_or(defaults.filter),
        bertscore_threshold: overrides
            .bertscore_threshold
            .or(file.pipeline.bertscore_threshold)
            .unwrap_or(defaults.bertscore_threshold),
    };
    let workers = workers.or(file.workers).unwrap_or(1);
    if workers == 0 {
        return Err(CliError::config("workers must be >= 1".into()));
    }
    Ok(Resolved {
        seed: seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        out: out.or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        workers,
        radcliq: file.radcliq.unwrap_or_default(),
        pipeline,
        file,
    })
}
