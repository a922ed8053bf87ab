//! Staged retrieval for radiology-style report generation.
//!
//! The pipeline narrows a report corpus to the top-`i` candidates by cosine
//! similarity, re-ranks them with an image-text matching score, filters
//! redundant or conflicting candidates with a natural-language-inference
//! check, and concatenates the survivors into a single output report.
//!
//! Modules:
//! - [`corpus`]: report/embedding data model, file formats, validation.
//! - [`scoring`]: pluggable scorer backends (matrix, mock, external process).
//! - [`retrieval`]: the staged pipeline and its trace format.
//! - [`mining`]: matching-task dataset generation from clinical labels.
//! - [`metrics`]: BLEU-2, label-vector similarity, composite score, aggregation.
//! - [`humaneval`]: severity scoring, ECDF tables, paired comparison.
//! - [`fixtures`]: small hand-built corpora for tests and demos.

pub mod corpus;
pub mod fixtures;
pub mod humaneval;
pub mod metrics;
pub mod mining;
pub mod retrieval;
pub mod scoring;
