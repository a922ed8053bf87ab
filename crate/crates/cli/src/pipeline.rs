//! Query execution and run-level evaluation shared by `retrieve`, `eval`,
//! and `ablate`.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use xrem_core::corpus::{CorpusBundle, EmbeddingMatrix, LabelVector};
use xrem_core::metrics::{
    presence_union, score_pair, ExternalScores, PairScores, RadCliqCoeffs,
};
use xrem_core::retrieval::{
    replay_selection, retrieve, PipelineConfig, RankingMetric, RetrievalTrace,
};
use xrem_core::scoring::Scorer;

use crate::CliError;

/// One line of the composed-reports output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComposedLine {
    pub query_id: String,
    pub report: String,
}

/// Outcome of the pipeline for one query.
#[derive(Debug, Clone)]
pub struct QueryResult {
    pub query_id: String,
    pub output: String,
    pub trace: RetrievalTrace,
}

/// Runs every query row through the pipeline. With `workers > 1` the queries
/// are mapped in parallel; results keep the query file order either way.
pub fn run_queries(
    bundle: &CorpusBundle,
    queries: &EmbeddingMatrix,
    cfg: &PipelineConfig,
    metric: RankingMetric,
    itm: &dyn Scorer,
    filter: &dyn Scorer,
    workers: usize,
) -> Result<Vec<QueryResult>, CliError> {
    let run_one = |row: usize| -> Result<QueryResult, CliError> {
        let query_id = &queries.ids[row];
        let (output, trace) = retrieve(
            query_id,
            queries.row(row),
            bundle,
            cfg,
            metric,
            itm,
            filter,
        )?;
        Ok(QueryResult {
            query_id: query_id.clone(),
            output,
            trace,
        })
    };
    if workers <= 1 {
        (0..queries.len()).map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::config(format!("cannot build worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            (0..queries.len()).into_par_iter().map(run_one).collect()
        })
    }
}

/// Reference text and labels for one query/study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReference {
    pub study_id: String,
    pub text: String,
    pub labels: LabelVector,
}

pub fn load_references(path: &Path) -> Result<BTreeMap<String, EvalReference>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut references = BTreeMap::new();
    for (number, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let reference: EvalReference = serde_json::from_str(&line).map_err(|e| {
            CliError::data(format!("{} line {}: {e}", path.display(), number + 1))
        })?;
        if references
            .insert(reference.study_id.clone(), reference)
            .is_some()
        {
            return Err(CliError::data(format!(
                "{}: duplicate study id",
                path.display()
            )));
        }
    }
    Ok(references)
}

/// Scores a pipeline run against references. The candidate's label presence
/// is the OR over the selected reports' labels, reconstructed from the trace
/// by verdict replay; a replay that does not recompose the recorded output
/// (a `k` mismatch between the run and this config, say) is rejected.
pub fn eval_run(
    results: &[QueryResult],
    bundle: &CorpusBundle,
    k: usize,
    references: &BTreeMap<String, EvalReference>,
    external: Option<&BTreeMap<String, ExternalScores>>,
    coeffs: &RadCliqCoeffs,
) -> Result<Vec<PairScores>, CliError> {
    results
        .iter()
        .map(|result| {
            let reference = references.get(&result.query_id).ok_or_else(|| {
                CliError::data(format!("no reference for query {:?}", result.query_id))
            })?;
            let selected = replay_selection(&result.trace, k);
            let recomposed = xrem_core::retrieval::compose(&selected, bundle)?;
            if recomposed != result.output {
                return Err(CliError::data(format!(
                    "trace for query {:?} does not replay to its recorded output (was the run made with a different k?)",
                    result.query_id
                )));
            }
            let mut labels = Vec::with_capacity(selected.len());
            for id in &selected {
                let report = bundle
                    .report(id)
                    .ok_or_else(|| CliError::data(format!("unknown report id {id:?}")))?;
                labels.push(report.labels.as_ref().ok_or_else(|| {
                    CliError::data(format!("report {id:?} has no label vector"))
                })?);
            }
            let candidate_presence = presence_union(labels);
            let scores = score_pair(
                &result.query_id,
                &result.output,
                &reference.text,
                &candidate_presence,
                &reference.labels.presence(),
                external.and_then(|map| map.get(&result.query_id)),
                coeffs,
            )?;
            Ok(scores)
        })
        .collect()
}

/// Loads a composed-reports file back in.
pub fn load_composed(path: &Path) -> Result<Vec<ComposedLine>, CliError> {
    read_jsonl(path)
}

/// Loads a trace file back in.
pub fn load_traces(path: &Path) -> Result<Vec<RetrievalTrace>, CliError> {
    read_jsonl(path)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (number, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            CliError::data(format!("{} line {}: {e}", path.display(), number + 1))
        })?);
    }
    Ok(out)
}
