//! Report corpus: data model, file formats, loading and validation.
//!
//! A corpus pairs a set of reports (JSONL, one object per line) with a dense
//! embedding matrix stored in a small binary container plus a JSONL id
//! sidecar. [`load_corpus`] validates everything up front; a loaded
//! [`CorpusBundle`] is immutable and safe to share across threads.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of classes in a clinical label vector.
pub const LABEL_CLASSES: usize = 14;

/// Magic bytes opening an embedding container.
pub const EMBEDDING_MAGIC: [u8; 4] = *b"XREM";

/// Embedding container format version.
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record ({context}, line {line}): {reason}")]
    MalformedRecord {
        context: String,
        line: usize,
        reason: String,
    },
    #[error("duplicate id {id:?}")]
    DuplicateId { id: String },
    #[error("alignment mismatch: {detail}")]
    AlignmentMismatch { detail: String },
    #[error("zero vector for id {id:?}")]
    ZeroVector { id: String },
    #[error("label class {value} at position {index} outside 0..=3")]
    InvalidLabelClass { index: usize, value: u8 },
    #[error("label vector has {len} entries, expected {LABEL_CLASSES}")]
    InvalidLabelLength { len: usize },
    #[error("cannot access {path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which report section(s) the text was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Impression,
    Findings,
    ImpressionFindings,
}

/// A 14-class clinical label vector.
///
/// Classes are encoded 0 = blank, 1 = positive, 2 = negative, 3 = uncertain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct LabelVector([u8; LABEL_CLASSES]);

impl LabelVector {
    pub fn new(classes: [u8; LABEL_CLASSES]) -> Result<Self, CorpusError> {
        for (index, &value) in classes.iter().enumerate() {
            if value > 3 {
                return Err(CorpusError::InvalidLabelClass { index, value });
            }
        }
        Ok(Self(classes))
    }

    pub fn classes(&self) -> &[u8; LABEL_CLASSES] {
        &self.0
    }

    /// Binary presence view: 1 where the class is positive, else 0.
    pub fn presence(&self) -> [u8; LABEL_CLASSES] {
        let mut out = [0u8; LABEL_CLASSES];
        for (dst, &class) in out.iter_mut().zip(self.0.iter()) {
            *dst = u8::from(class == 1);
        }
        out
    }
}

impl TryFrom<Vec<u8>> for LabelVector {
    type Error = CorpusError;

    fn try_from(v: Vec<u8>) -> Result<Self, Self::Error> {
        let arr: [u8; LABEL_CLASSES] = v
            .try_into()
            .map_err(|v: Vec<u8>| CorpusError::InvalidLabelLength { len: v.len() })?;
        Self::new(arr)
    }
}

impl From<LabelVector> for Vec<u8> {
    fn from(l: LabelVector) -> Self {
        l.0.to_vec()
    }
}

/// One retrievable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub text: String,
    pub labels: Option<LabelVector>,
    pub section: Section,
}

/// Dense float32 embeddings aligned to string ids, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    pub dim: usize,
    pub rows: Vec<f32>,
    pub normalized: bool,
}

impl EmbeddingMatrix {
    /// Builds a matrix and checks every type invariant.
    pub fn new(ids: Vec<String>, dim: usize, rows: Vec<f32>) -> Result<Self, CorpusError> {
        let m = Self {
            ids,
            dim,
            rows,
            normalized: false,
        };
        match validate_embeddings(&m).into_iter().next() {
            None => Ok(m),
            Some(v) => Err(v.into_error()),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.rows[index * self.dim..(index + 1) * self.dim]
    }
}

/// L2 norm of a row, accumulated in f64.
pub fn l2_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&x| {
            let x = x as f64;
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// L2-normalizes every row: each element becomes `(x / norm) as f32` with the
/// norm accumulated in f64. An already-normalized matrix is returned
/// unchanged, so the operation is idempotent bit for bit.
pub fn normalize(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix, CorpusError> {
    if m.normalized {
        return Ok(m.clone());
    }
    let mut rows = Vec::with_capacity(m.rows.len());
    for (index, id) in m.ids.iter().enumerate() {
        let row = m.row(index);
        let norm = l2_norm(row);
        if norm == 0.0 {
            return Err(CorpusError::ZeroVector { id: id.clone() });
        }
        rows.extend(row.iter().map(|&x| (x as f64 / norm) as f32));
    }
    Ok(EmbeddingMatrix {
        ids: m.ids.clone(),
        dim: m.dim,
        rows,
        normalized: true,
    })
}

/// One invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateReportId { id: String },
    EmptyText { id: String },
    DuplicateEmbeddingId { id: String },
    RowCountMismatch { ids: usize, values: usize, dim: usize },
    ZeroRow { id: String },
    NonFiniteValue { id: String },
    NotNormalized { id: String, norm: f64 },
    OrphanEmbedding { id: String },
    MissingEmbedding { id: String },
}

impl Violation {
    fn into_error(self) -> CorpusError {
        match self {
            Violation::DuplicateReportId { id } | Violation::DuplicateEmbeddingId { id } => {
                CorpusError::DuplicateId { id }
            }
            Violation::ZeroRow { id } => CorpusError::ZeroVector { id },
            Violation::OrphanEmbedding { .. } | Violation::MissingEmbedding { .. } => {
                CorpusError::AlignmentMismatch {
                    detail: self.to_string(),
                }
            }
            other => CorpusError::MalformedRecord {
                context: "corpus".into(),
                line: 0,
                reason: other.to_string(),
            },
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateReportId { id } => write!(f, "duplicate report id {id:?}"),
            Violation::EmptyText { id } => {
                write!(f, "report {id:?} has empty text after trimming")
            }
            Violation::DuplicateEmbeddingId { id } => write!(f, "duplicate embedding id {id:?}"),
            Violation::RowCountMismatch { ids, values, dim } => write!(
                f,
                "embedding value count {values} does not equal {ids} ids x dim {dim}"
            ),
            Violation::ZeroRow { id } => write!(f, "embedding row for {id:?} is the zero vector"),
            Violation::NonFiniteValue { id } => {
                write!(f, "embedding row for {id:?} contains a non-finite value")
            }
            Violation::NotNormalized { id, norm } => write!(
                f,
                "matrix is flagged normalized but row for {id:?} has norm {norm}"
            ),
            Violation::OrphanEmbedding { id } => {
                write!(f, "embedding id {id:?} has no matching report")
            }
            Violation::MissingEmbedding { id } => {
                write!(f, "report id {id:?} has no embedding row")
            }
        }
    }
}

fn validate_embeddings(m: &EmbeddingMatrix) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for id in &m.ids {
        if !seen.insert(id.as_str()) {
            out.push(Violation::DuplicateEmbeddingId { id: id.clone() });
        }
    }
    if m.dim == 0 || m.rows.len() != m.ids.len() * m.dim {
        out.push(Violation::RowCountMismatch {
            ids: m.ids.len(),
            values: m.rows.len(),
            dim: m.dim,
        });
        return out; // per-row checks need a consistent shape
    }
    for (index, id) in m.ids.iter().enumerate() {
        let row = m.row(index);
        if row.iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFiniteValue { id: id.clone() });
            continue;
        }
        let norm = l2_norm(row);
        if norm == 0.0 {
            out.push(Violation::ZeroRow { id: id.clone() });
        } else if m.normalized && (norm - 1.0).abs() > 1e-4 {
            out.push(Violation::NotNormalized {
                id: id.clone(),
                norm,
            });
        }
    }
    out
}

/// Lists every invariant violation in the given reports + embeddings pair.
/// An empty list means [`CorpusBundle::new`] would accept the inputs.
pub fn validate(reports: &[Report], embeddings: &EmbeddingMatrix) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut report_ids = HashSet::new();
    for report in reports {
        if !report_ids.insert(report.id.as_str()) {
            out.push(Violation::DuplicateReportId {
                id: report.id.clone(),
            });
        }
        if report.text.trim().is_empty() {
            out.push(Violation::EmptyText {
                id: report.id.clone(),
            });
        }
    }
    out.extend(validate_embeddings(embeddings));
    let embedding_ids: HashSet<&str> = embeddings.ids.iter().map(String::as_str).collect();
    for id in &embeddings.ids {
        if !report_ids.contains(id.as_str()) {
            out.push(Violation::OrphanEmbedding { id: id.clone() });
        }
    }
    for report in reports {
        if !embedding_ids.contains(report.id.as_str()) {
            out.push(Violation::MissingEmbedding {
                id: report.id.clone(),
            });
        }
    }
    out
}

/// A validated corpus: reports plus aligned embeddings.
///
/// Immutable after construction. The raw embeddings are kept for bit-exact
/// round trips; a normalized copy is cached for cosine computation.
#[derive(Debug, Clone)]
pub struct CorpusBundle {
    reports: Vec<Report>,
    report_embeddings: EmbeddingMatrix,
    normalized_embeddings: EmbeddingMatrix,
    index_by_id: HashMap<String, usize>,
}

impl CorpusBundle {
    pub fn new(reports: Vec<Report>, report_embeddings: EmbeddingMatrix) -> Result<Self, CorpusError> {
        if let Some(v) = validate(&reports, &report_embeddings).into_iter().next() {
            return Err(v.into_error());
        }
        let normalized_embeddings = normalize(&report_embeddings)?;
        let index_by_id = reports
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        Ok(Self {
            reports,
            report_embeddings,
            normalized_embeddings,
            index_by_id,
        })
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    pub fn raw_embeddings(&self) -> &EmbeddingMatrix {
        &self.report_embeddings
    }

    pub fn normalized_embeddings(&self) -> &EmbeddingMatrix {
        &self.normalized_embeddings
    }

    pub fn report(&self, id: &str) -> Option<&Report> {
        self.index_by_id.get(id).map(|&i| &self.reports[i])
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// Re-checks every invariant; empty on a bundle built through [`Self::new`].
    pub fn validate(&self) -> Vec<Violation> {
        validate(&self.reports, &self.report_embeddings)
    }
}

#[derive(Serialize, Deserialize)]
struct RowId {
    row: usize,
    id: String,
}

fn open(path: &Path) -> Result<File, CorpusError> {
    File::open(path).map_err(|source| CorpusError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File, CorpusError> {
    File::create(path).map_err(|source| CorpusError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads reports from JSONL. Report text is stored trimmed; empty lines are
/// skipped.
pub fn load_reports(path: &Path) -> Result<Vec<Report>, CorpusError> {
    let context = path.display().to_string();
    let reader = BufReader::new(open(path)?);
    let mut reports = Vec::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut report: Report =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                context: context.clone(),
                line: number + 1,
                reason: e.to_string(),
            })?;
        report.text = report.text.trim().to_string();
        if report.text.is_empty() {
            return Err(CorpusError::MalformedRecord {
                context: context.clone(),
                line: number + 1,
                reason: format!("report {:?} has empty text after trimming", report.id),
            });
        }
        reports.push(report);
    }
    Ok(reports)
}

pub fn save_reports(reports: &[Report], path: &Path) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(create(path)?);
    for report in reports {
        serde_json::to_writer(&mut w, report).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an embedding container and its id sidecar.
///
/// Container layout, all little-endian: magic `XREM`, version u32, count u32,
/// dim u32, then count x dim float32 values row-major. The sidecar is JSONL
/// with `{"row": n, "id": "..."}`, rows `0..count-1` each exactly once.
pub fn load_embeddings(data_path: &Path, ids_path: &Path) -> Result<EmbeddingMatrix, CorpusError> {
    let context = data_path.display().to_string();
    let malformed = |reason: String| CorpusError::MalformedRecord {
        context: context.clone(),
        line: 0,
        reason,
    };

    let mut reader = BufReader::new(open(data_path)?);
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if magic != EMBEDDING_MAGIC {
        return Err(malformed(format!("bad magic bytes {magic:?}")));
    }
    let version = reader.read_u32::<LittleEndian>()?;
    if version != EMBEDDING_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let count = reader.read_u32::<LittleEndian>()? as usize;
    let dim = reader.read_u32::<LittleEndian>()? as usize;
    if dim == 0 {
        return Err(malformed("dim must be positive".into()));
    }
    let mut rows = vec![0f32; count * dim];
    reader.read_f32_into::<LittleEndian>(&mut rows)?;
    if reader.read(&mut [0u8; 1])? != 0 {
        return Err(malformed("trailing data after embedding rows".into()));
    }

    let ids_context = ids_path.display().to_string();
    let mut ids: Vec<Option<String>> = vec![None; count];
    let reader = BufReader::new(open(ids_path)?);
    for (number, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: RowId =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                context: ids_context.clone(),
                line: number + 1,
                reason: e.to_string(),
            })?;
        if entry.row >= count {
            return Err(CorpusError::MalformedRecord {
                context: ids_context.clone(),
                line: number + 1,
                reason: format!("row {} out of range for count {count}", entry.row),
            });
        }
        if ids[entry.row].replace(entry.id).is_some() {
            return Err(CorpusError::MalformedRecord {
                context: ids_context.clone(),
                line: number + 1,
                reason: format!("row {} assigned more than once", entry.row),
            });
        }
    }
    let ids: Vec<String> = ids
        .into_iter()
        .enumerate()
        .map(|(row, id)| {
            id.ok_or_else(|| CorpusError::MalformedRecord {
                context: ids_context.clone(),
                line: 0,
                reason: format!("row {row} has no id"),
            })
        })
        .collect::<Result<_, _>>()?;

    EmbeddingMatrix::new(ids, dim, rows)
}

pub fn save_embeddings(
    m: &EmbeddingMatrix,
    data_path: &Path,
    ids_path: &Path,
) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(create(data_path)?);
    w.write_all(&EMBEDDING_MAGIC)?;
    w.write_u32::<LittleEndian>(EMBEDDING_VERSION)?;
    w.write_u32::<LittleEndian>(m.ids.len() as u32)?;
    w.write_u32::<LittleEndian>(m.dim as u32)?;
    for &value in &m.rows {
        w.write_f32::<LittleEndian>(value)?;
    }
    w.flush()?;

    let mut w = BufWriter::new(create(ids_path)?);
    for (row, id) in m.ids.iter().enumerate() {
        serde_json::to_writer(&mut w, &RowId { row, id: id.clone() })
            .map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads and validates a full corpus from its three files.
pub fn load_corpus(
    reports_path: &Path,
    embeddings_path: &Path,
    ids_path: &Path,
) -> Result<CorpusBundle, CorpusError> {
    let reports = load_reports(reports_path)?;
    let embeddings = load_embeddings(embeddings_path, ids_path)?;
    CorpusBundle::new(reports, embeddings)
}

/// Writes a bundle back out in the formats [`load_corpus`] reads.
/// Embedding floats round-trip bit-exactly.
pub fn save_corpus(
    bundle: &CorpusBundle,
    reports_path: &Path,
    embeddings_path: &Path,
    ids_path: &Path,
) -> Result<(), CorpusError> {
    save_reports(bundle.reports(), reports_path)?;
    save_embeddings(bundle.raw_embeddings(), embeddings_path, ids_path)
}
