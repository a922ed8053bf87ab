//! Small hand-built fixtures shared by tests, golden files, and demos.
//!
//! The golden corpus has five reports over a 4-dimensional embedding space
//! and two queries, sized so every pipeline stage can be traced by hand:
//!
//! * q1 embeds near `r3`; its matching scores rank r3 > r1 > r4 > r2 > r5.
//!   Under the mock NLI rule, r1 is entailed by r3's text, r4 crosses the
//!   no/present antonym pair, and r2 is neutral, so k = 2 selects [r3, r2].
//! * q2 embeds near `r5` and produces the exact cosine tie r1 = r2 (both
//!   dot 0.6), exercising the ascending-id tie-break. Its matching scores
//!   rank r5 > r2 > r1 > r3 > r4 and k = 2 selects [r5, r2].

use std::path::{Path, PathBuf};

use crate::corpus::{
    save_embeddings, save_reports, CorpusBundle, EmbeddingMatrix, LabelVector, Report, Section,
    LABEL_CLASSES,
};
use crate::humaneval::{Annotation, ReportSource};
use crate::scoring::ScoreMatrix;

fn labels(positive_at: &[usize], noise: &[(usize, u8)]) -> LabelVector {
    let mut classes = [0u8; LABEL_CLASSES];
    for &i in positive_at {
        classes[i] = 1;
    }
    for &(i, class) in noise {
        classes[i] = class;
    }
    LabelVector::new(classes).expect("valid fixture labels")
}

/// The five golden reports. Presence sets: r1 {0}, r2 {0, 1}, r3 {2},
/// r4 {0, 1, 2}, r5 {} (its labels are negative/uncertain only).
pub fn golden_reports() -> Vec<Report> {
    vec![
        Report {
            id: "r1".into(),
            text: "no acute process".into(),
            labels: Some(labels(&[0], &[(1, 2), (2, 3)])),
            section: Section::Impression,
        },
        Report {
            id: "r2".into(),
            text: "cardiomegaly is stable".into(),
            labels: Some(labels(&[0, 1], &[])),
            section: Section::Impression,
        },
        Report {
            id: "r3".into(),
            text: "no acute cardiopulmonary process".into(),
            labels: Some(labels(&[2], &[(1, 2)])),
            section: Section::Impression,
        },
        Report {
            id: "r4".into(),
            text: "small effusion present".into(),
            labels: Some(labels(&[0, 1, 2], &[])),
            section: Section::Impression,
        },
        Report {
            id: "r5".into(),
            text: "lungs are clear".into(),
            labels: Some(labels(&[], &[(0, 2), (1, 3), (2, 2)])),
            section: Section::Impression,
        },
    ]
}

/// Corpus embeddings: orthogonal unit axes for r1..r4 and the diagonal
/// (1, 1, 0, 0) for r5, dimension 4.
pub fn golden_embeddings() -> EmbeddingMatrix {
    EmbeddingMatrix::new(
        vec!["r1".into(), "r2".into(), "r3".into(), "r4".into(), "r5".into()],
        4,
        vec![
            1.0, 0.0, 0.0, 0.0, // r1
            0.0, 1.0, 0.0, 0.0, // r2
            0.0, 0.0, 1.0, 0.0, // r3
            0.0, 0.0, 0.0, 1.0, // r4
            1.0, 1.0, 0.0, 0.0, // r5
        ],
    )
    .expect("valid fixture embeddings")
}

pub fn golden_bundle() -> CorpusBundle {
    CorpusBundle::new(golden_reports(), golden_embeddings()).expect("valid fixture bundle")
}

/// Query embeddings: q1 leans on the r3 axis; q2 sits on the r5 diagonal
/// with identical projections onto r1 and r2 (cosine tie).
pub fn golden_queries() -> EmbeddingMatrix {
    EmbeddingMatrix::new(
        vec!["q1".into(), "q2".into()],
        4,
        vec![
            0.1, 0.2, 0.9, 0.0, // q1
            0.6, 0.6, 0.0, 0.1, // q2
        ],
    )
    .expect("valid fixture queries")
}

/// Matching scores: q1 ranks r3 > r1 > r4 > r2 > r5, q2 ranks
/// r5 > r2 > r1 > r3 > r4.
pub fn golden_itm_matrix() -> ScoreMatrix {
    ScoreMatrix::new(
        vec!["q1".into(), "q2".into()],
        vec!["r1".into(), "r2".into(), "r3".into(), "r4".into(), "r5".into()],
        vec![
            2.0, 0.5, 4.0, 1.0, -1.0, // q1
            2.0, 2.5, 0.0, -0.5, 3.0, // q2
        ],
    )
    .expect("valid fixture scores")
}

/// Reference texts and labels for evaluating the two golden queries.
/// q1's reference shares presence {0, 2}; q2's reference has no positive
/// finding, matching r5's empty presence set.
pub fn golden_references() -> Vec<(String, String, LabelVector)> {
    vec![
        (
            "q1".into(),
            "no acute cardiopulmonary process".into(),
            labels(&[0, 2], &[]),
        ),
        ("q2".into(), "lungs are clear".into(), labels(&[], &[(0, 2)])),
    ]
}

/// Twelve annotations across four studies and three sources.
///
/// Paired studies (one annotation from both the system and the baseline):
/// s1, s2, s3. Per-study per-source MES means: s1 x=2 b=2, s2 x=0 b=3,
/// s3 x=3 b=1; AES means: s1 x=7/6 b=2, s2 x=0 b=5/2, s3 x=3 b=1/2.
pub fn golden_annotations() -> Vec<Annotation> {
    let ann = |study: &str, source: ReportSource, annotator: &str, severities: &[u8]| Annotation {
        study_id: study.into(),
        source,
        annotator_id: annotator.into(),
        severities: severities.to_vec(),
    };
    vec![
        ann("s1", ReportSource::Xrem, "a1", &[0, 3, 1]),
        ann("s1", ReportSource::Xrem, "a2", &[1, 1]),
        ann("s1", ReportSource::Baseline, "a1", &[2, 2]),
        ann("s2", ReportSource::Xrem, "a1", &[0, 0, 0]),
        ann("s2", ReportSource::Baseline, "a2", &[4]),
        ann("s2", ReportSource::Baseline, "a1", &[2, 0]),
        ann("s3", ReportSource::Xrem, "a2", &[3, 3, 3]),
        ann("s3", ReportSource::Baseline, "a1", &[1, 0, 1, 0]),
        ann("s4", ReportSource::Xrem, "a1", &[2]),
        ann("s4", ReportSource::HumanBenchmark, "a2", &[0]),
        ann("s3", ReportSource::HumanBenchmark, "a1", &[0, 1]),
        ann("s2", ReportSource::HumanBenchmark, "a2", &[1, 2, 3]),
    ]
}

/// File names produced by [`write_golden_inputs`].
#[derive(Debug, Clone)]
pub struct GoldenPaths {
    pub reports: PathBuf,
    pub embeddings: PathBuf,
    pub embedding_ids: PathBuf,
    pub queries: PathBuf,
    pub query_ids: PathBuf,
    pub itm_scores: PathBuf,
    pub references: PathBuf,
    pub annotations: PathBuf,
}

/// Writes every golden input file into `dir`.
pub fn write_golden_inputs(dir: &Path) -> std::io::Result<GoldenPaths> {
    let paths = GoldenPaths {
        reports: dir.join("reports.jsonl"),
        embeddings: dir.join("reports.emb"),
        embedding_ids: dir.join("reports.emb.ids.jsonl"),
        queries: dir.join("queries.emb"),
        query_ids: dir.join("queries.emb.ids.jsonl"),
        itm_scores: dir.join("itm_scores.jsonl"),
        references: dir.join("references.jsonl"),
        annotations: dir.join("annotations.jsonl"),
    };
    let io_err = |e: crate::corpus::CorpusError| std::io::Error::other(e.to_string());
    save_reports(&golden_reports(), &paths.reports).map_err(io_err)?;
    save_embeddings(&golden_embeddings(), &paths.embeddings, &paths.embedding_ids)
        .map_err(io_err)?;
    save_embeddings(&golden_queries(), &paths.queries, &paths.query_ids).map_err(io_err)?;
    std::fs::write(&paths.itm_scores, golden_itm_matrix().to_jsonl())?;

    let mut references = String::new();
    for (study_id, text, labels) in golden_references() {
        references.push_str(
            &serde_json::json!({"study_id": study_id, "text": text, "labels": labels})
                .to_string(),
        );
        references.push('\n');
    }
    std::fs::write(&paths.references, references)?;

    let mut annotations = String::new();
    for a in golden_annotations() {
        annotations.push_str(&serde_json::to_string(&a).expect("annotation serializes"));
        annotations.push('\n');
    }
    std::fs::write(&paths.annotations, annotations)?;
    Ok(paths)
}
