//! The five subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use xrem_core::corpus::{load_corpus, load_embeddings, CorpusBundle, EmbeddingMatrix, LabelVector};
use xrem_core::humaneval::{
    assign_sources, ecdf_row, load_annotations, paired_compare, Annotation, Measure,
    ReportSource, SourceProbs,
};
use xrem_core::metrics::{
    aggregate, format_metric, ingest_external_scores, score_pair, ExternalScores, PairScores,
    SummaryTable, METRIC_COLUMNS,
};
use xrem_core::mining::{build_itm_dataset, dataset_to_jsonl, MiningConfig};
use xrem_core::retrieval::{FilterKind, PipelineConfig, RankingMetric};
use xrem_core::scoring::{MockScorer, ScorerBackend, ScorerSpec};

use crate::config::Resolved;
use crate::pipeline::{
    eval_run, load_composed, load_references, load_traces, run_queries, ComposedLine, QueryResult,
};
use crate::CliError;

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", out.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("serializable line"));
        out.push('\n');
    }
    out
}

fn load_bundle(resolved: &Resolved) -> Result<CorpusBundle, CliError> {
    let corpus = resolved
        .file
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::config("no corpus paths configured".into()))?;
    Ok(load_corpus(
        &corpus.reports,
        &corpus.embeddings,
        &corpus.embedding_ids,
    )?)
}

fn load_query_matrix(resolved: &Resolved) -> Result<EmbeddingMatrix, CliError> {
    let queries = resolved
        .file
        .queries
        .as_ref()
        .ok_or_else(|| CliError::config("no query embedding paths configured".into()))?;
    Ok(load_embeddings(&queries.embeddings, &queries.embedding_ids)?)
}

fn build_scorer(spec: Option<&ScorerSpec>, role: &str) -> Result<ScorerBackend, CliError> {
    let spec = spec.ok_or_else(|| {
        CliError::config(format!("no {role} scorer configured under scorers.{role}"))
    })?;
    Ok(spec.build()?)
}

/// The stage-3 filter backend a config requires, if any.
fn build_filter_backend(
    resolved: &Resolved,
    filter: FilterKind,
) -> Result<ScorerBackend, CliError> {
    match filter {
        FilterKind::Nli => build_scorer(resolved.file.scorers.nli.as_ref(), "nli"),
        FilterKind::Bertscore => build_scorer(resolved.file.scorers.pair.as_ref(), "pair"),
        // Never called; a mock stands in so the pipeline signature is total.
        FilterKind::None => Ok(ScorerBackend::Mock(MockScorer::default())),
    }
}

// ---------------------------------------------------------------------------
// retrieve
// ---------------------------------------------------------------------------

pub fn cmd_retrieve(resolved: &Resolved) -> Result<(), CliError> {
    resolved.pipeline.validate()?;
    let bundle = load_bundle(resolved)?;
    let queries = load_query_matrix(resolved)?;
    let itm = build_scorer(resolved.file.scorers.itm.as_ref(), "itm")?;
    let filter = build_filter_backend(resolved, resolved.pipeline.filter)?;
    let results = run_queries(
        &bundle,
        &queries,
        &resolved.pipeline,
        RankingMetric::Itm,
        &itm,
        &filter,
        resolved.workers,
    )?;
    ensure_out_dir(&resolved.out)?;
    write_file(
        &resolved.out.join("composed.jsonl"),
        &jsonl(results.iter().map(|r| ComposedLine {
            query_id: r.query_id.clone(),
            report: r.output.clone(),
        })),
    )?;
    write_file(
        &resolved.out.join("trace.jsonl"),
        &jsonl(results.iter().map(|r| &r.trace)),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// mine
// ---------------------------------------------------------------------------

pub fn cmd_mine(resolved: &Resolved, negatives_per_image: Option<usize>) -> Result<(), CliError> {
    let bundle = load_bundle(resolved)?;
    let cfg = MiningConfig {
        seed: resolved.seed,
        negatives_per_image: negatives_per_image
            .or(resolved.file.mining.negatives_per_image)
            .unwrap_or(1),
    };
    let dataset = build_itm_dataset(&bundle, &cfg)?;
    ensure_out_dir(&resolved.out)?;
    write_file(&resolved.out.join("dataset.jsonl"), &dataset_to_jsonl(&dataset))
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// One explicit candidate/reference pair; both label vectors are required
/// because the label-similarity column is always computed.
#[derive(Debug, Deserialize)]
struct EvalPairLine {
    study_id: String,
    candidate: String,
    reference: String,
    candidate_labels: LabelVector,
    reference_labels: LabelVector,
}

#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub pairs: Option<PathBuf>,
    pub composed: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub external_scores: Option<PathBuf>,
}

fn score_explicit_pairs(
    path: &Path,
    external: Option<&BTreeMap<String, ExternalScores>>,
    resolved: &Resolved,
) -> Result<Vec<PairScores>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (number, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: EvalPairLine = serde_json::from_str(&line).map_err(|e| {
            CliError::data(format!("{} line {}: {e}", path.display(), number + 1))
        })?;
        out.push(score_pair(
            &pair.study_id,
            &pair.candidate,
            &pair.reference,
            &pair.candidate_labels.presence(),
            &pair.reference_labels.presence(),
            external.and_then(|map| map.get(&pair.study_id)),
            &resolved.radcliq,
        )?);
    }
    Ok(out)
}

pub fn cmd_eval(resolved: &Resolved, args: EvalInputs) -> Result<(), CliError> {
    let inputs = EvalInputs {
        pairs: args.pairs.or_else(|| resolved.file.eval.pairs.clone()),
        composed: args.composed.or_else(|| resolved.file.eval.composed.clone()),
        trace: args.trace.or_else(|| resolved.file.eval.trace.clone()),
        references: args
            .references
            .or_else(|| resolved.file.eval.references.clone()),
        external_scores: args
            .external_scores
            .or_else(|| resolved.file.eval.external_scores.clone()),
    };
    let external = inputs
        .external_scores
        .as_deref()
        .map(ingest_external_scores)
        .transpose()?;

    let pairs = match (&inputs.pairs, &inputs.composed) {
        (Some(pairs_path), None) => {
            score_explicit_pairs(pairs_path, external.as_ref(), resolved)?
        }
        (None, Some(composed_path)) => {
            let trace_path = inputs
                .trace
                .as_ref()
                .ok_or_else(|| CliError::config("eval from a run needs a trace file".into()))?;
            let references_path = inputs.references.as_ref().ok_or_else(|| {
                CliError::config("eval from a run needs a references file".into())
            })?;
            let bundle = load_bundle(resolved)?;
            let composed = load_composed(composed_path)?;
            let traces = load_traces(trace_path)?;
            if composed.len() != traces.len() {
                return Err(CliError::data(format!(
                    "{} composed lines but {} traces",
                    composed.len(),
                    traces.len()
                )));
            }
            let results: Vec<QueryResult> = composed
                .into_iter()
                .zip(traces)
                .map(|(line, trace)| {
                    if line.query_id != trace.query_id {
                        return Err(CliError::data(format!(
                            "composed query {:?} does not match trace query {:?}",
                            line.query_id, trace.query_id
                        )));
                    }
                    Ok(QueryResult {
                        query_id: line.query_id,
                        output: line.report,
                        trace,
                    })
                })
                .collect::<Result<_, _>>()?;
            let references = load_references(references_path)?;
            eval_run(
                &results,
                &bundle,
                resolved.pipeline.k,
                &references,
                external.as_ref(),
                &resolved.radcliq,
            )?
        }
        (Some(_), Some(_)) => {
            return Err(CliError::config(
                "give either an explicit pairs file or a composed/trace run, not both".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::config(
                "eval needs a pairs file or a composed/trace run".into(),
            ))
        }
    };

    let summary = aggregate(&pairs)?;
    ensure_out_dir(&resolved.out)?;
    write_file(&resolved.out.join("per_pair.jsonl"), &jsonl(pairs.iter()))?;
    write_file(&resolved.out.join("summary.csv"), &summary.to_csv())
}

// ---------------------------------------------------------------------------
// human-eval
// ---------------------------------------------------------------------------

fn ecdf_csv(annotations: &[Annotation]) -> Result<String, CliError> {
    let mut out = String::from(
        "source,n,mes_le_0,mes_le_1,mes_le_2,mes_le_3,aes_le_0,aes_le_1,aes_le_2,aes_le_3\n",
    );
    for source in ReportSource::ALL {
        let of_source: Vec<Annotation> = annotations
            .iter()
            .filter(|a| a.source == source)
            .cloned()
            .collect();
        if of_source.is_empty() {
            continue;
        }
        let mes_row = ecdf_row(&of_source, Measure::Mes)?;
        let aes_row = ecdf_row(&of_source, Measure::Aes)?;
        let cells: Vec<String> = mes_row
            .iter()
            .chain(aes_row.iter())
            .map(|&p| format_metric(Some(p)))
            .collect();
        let _ = writeln!(out, "{},{},{}", source.as_str(), of_source.len(), cells.join(","));
    }
    Ok(out)
}

fn paired_csv(annotations: &[Annotation]) -> String {
    let report = paired_compare(annotations);
    let mut out = String::from(
        "n_studies,frac_same_or_lower_mes,frac_same_or_lower_aes,mean_mes_xrem,mean_mes_baseline,mean_aes_xrem,mean_aes_baseline\n",
    );
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{}",
        report.n_studies,
        format_metric(report.frac_same_or_lower_mes),
        format_metric(report.frac_same_or_lower_aes),
        format_metric(report.mean_mes.map(|m| m.xrem)),
        format_metric(report.mean_mes.map(|m| m.baseline)),
        format_metric(report.mean_aes.map(|m| m.xrem)),
        format_metric(report.mean_aes.map(|m| m.baseline)),
    );
    out
}

pub fn cmd_human_eval(
    resolved: &Resolved,
    annotations_path: Option<PathBuf>,
    assign_ids_path: Option<PathBuf>,
) -> Result<(), CliError> {
    let annotations_path = annotations_path.or_else(|| resolved.file.humaneval.annotations.clone());
    let assign_ids_path = assign_ids_path.or_else(|| resolved.file.humaneval.assign_ids.clone());
    if annotations_path.is_none() && assign_ids_path.is_none() {
        return Err(CliError::config(
            "human-eval needs an annotations file or --assign".into(),
        ));
    }
    ensure_out_dir(&resolved.out)?;
    if let Some(path) = annotations_path {
        let annotations = load_annotations(&path)?;
        if annotations.is_empty() {
            return Err(CliError::data(format!("{}: no annotations", path.display())));
        }
        write_file(&resolved.out.join("ecdf.csv"), &ecdf_csv(&annotations)?)?;
        write_file(&resolved.out.join("paired.csv"), &paired_csv(&annotations))?;
    }
    if let Some(path) = assign_ids_path {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        let ids: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let assignment = assign_sources(&ids, resolved.seed, &SourceProbs::default())?;
        let mut out = serde_json::json!({ "seed": assignment.seed }).to_string();
        out.push('\n');
        out.push_str(&jsonl(assignment.entries.iter()));
        write_file(&resolved.out.join("assignments.jsonl"), &out)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct Cell {
    metric: RankingMetric,
    filter: FilterKind,
    i: usize,
    k: usize,
    pt: bool,
}

impl Cell {
    fn prefix(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.metric.as_str(),
            self.filter.as_str(),
            self.i,
            self.k,
            self.pt
        )
    }
}

fn cell_means(summary: &SummaryTable) -> String {
    // Rows come back in METRIC_COLUMNS order.
    debug_assert!(summary
        .rows
        .iter()
        .map(|r| r.metric)
        .eq(METRIC_COLUMNS.iter().copied()));
    summary
        .rows
        .iter()
        .map(|row| format_metric(row.mean))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn cmd_ablate(resolved: &Resolved) -> Result<(), CliError> {
    let grid = resolved
        .file
        .ablation
        .clone()
        .ok_or_else(|| CliError::config("no ablation grid configured".into()))?;
    grid.validate()?;
    let bundle = load_bundle(resolved)?;
    let queries = load_query_matrix(resolved)?;
    let references_path = resolved
        .file
        .eval
        .references
        .as_ref()
        .ok_or_else(|| CliError::config("ablate needs eval.references".into()))?;
    let references = load_references(references_path)?;

    // Deterministic row order: lexicographic over the sorted, deduplicated
    // grid axes in column order.
    let mut metrics = grid.metric.clone();
    metrics.sort_by_key(|m| m.as_str());
    metrics.dedup();
    let mut filters = grid.filter.clone();
    filters.sort_by_key(|f| f.as_str());
    filters.dedup();
    let mut i_values = grid.i.clone();
    i_values.sort_unstable();
    i_values.dedup();
    let mut k_values = grid.k.clone();
    k_values.sort_unstable();
    k_values.dedup();
    let mut pt_values = grid.pt.clone();
    pt_values.sort_unstable();
    pt_values.dedup();

    let mut rows = Vec::new();
    for &metric in &metrics {
        for &filter in &filters {
            for &i in &i_values {
                for &k in &k_values {
                    for &pt in &pt_values {
                        let cell = Cell {
                            metric,
                            filter,
                            i,
                            k,
                            pt,
                        };
                        match run_cell(resolved, &grid, &bundle, &queries, &references, &cell) {
                            Ok(summary) => {
                                rows.push(format!("{},{}", cell.prefix(), cell_means(&summary)))
                            }
                            Err(e) => {
                                // The failed cell keeps its config columns;
                                // remaining cells still run.
                                eprintln!("ablate cell [{}]: {e}", cell.prefix());
                                rows.push(format!("{},,,,,", cell.prefix()));
                            }
                        }
                    }
                }
            }
        }
    }

    let mut csv =
        String::from("metric,filter,i,k,pt,radcliq,radgraph_f1,chexbert,bertscore,bleu2\n");
    for row in rows {
        let _ = writeln!(csv, "{row}");
    }
    ensure_out_dir(&resolved.out)?;
    write_file(&resolved.out.join("ablation.csv"), &csv)
}

fn run_cell(
    resolved: &Resolved,
    grid: &crate::config::AblationSection,
    bundle: &CorpusBundle,
    queries: &EmbeddingMatrix,
    references: &BTreeMap<String, crate::pipeline::EvalReference>,
    cell: &Cell,
) -> Result<SummaryTable, CliError> {
    let cfg = PipelineConfig {
        i: cell.i,
        j: None,
        k: cell.k,
        filter: cell.filter,
        bertscore_threshold: resolved.pipeline.bertscore_threshold,
    };
    cfg.validate()?;
    // The cosine variant never consults the matching scorer, so pre-trained
    // score files are not required for those rows.
    let itm: ScorerBackend = match (cell.metric, cell.pt) {
        (RankingMetric::Cosine, _) => ScorerBackend::Mock(MockScorer::default()),
        (RankingMetric::Itm, true) => build_scorer(resolved.file.scorers.itm.as_ref(), "itm")?,
        (RankingMetric::Itm, false) => {
            let path = grid.itm_matrix_no_pt.as_ref().ok_or_else(|| {
                CliError::config("pt = false needs ablation.itm_matrix_no_pt".into())
            })?;
            ScorerSpec::Matrix { path: path.clone() }.build()?
        }
    };
    let filter = build_filter_backend(resolved, cell.filter)?;
    let results = run_queries(
        bundle,
        queries,
        &cfg,
        cell.metric,
        &itm,
        &filter,
        resolved.workers,
    )?;
    let pairs = eval_run(
        &results,
        bundle,
        cell.k,
        references,
        None,
        &resolved.radcliq,
    )?;
    Ok(aggregate(&pairs)?)
}
