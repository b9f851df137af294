//! On-disk formats: dataset manifests, feature/logit payloads, fold
//! manifests, score files, and the CSV tables the pipeline reads and writes.
//!
//! Binary payloads use a fixed little-endian layout (`DCVR` magic, version,
//! row/column counts, float32 row-major data) whose row order matches the
//! manifest sample order. The CSV fallback carries sample ids per row, so
//! its order is free; rows are matched back to the manifest by id.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use dcv_rood_core::matrix::Matrix;
use dcv_rood_core::split::{EvaluationRound, FoldAssignment};
use dcv_rood_core::taxonomy::{ClassTaxonomy, SampleRecord, SampleSet, TaxonomyError};

const FEATURE_MAGIC: &[u8; 4] = b"DCVR";
const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("{path}: {rows} payload rows for {samples} manifest samples")]
    RowCount { path: String, rows: usize, samples: usize },
    #[error("{path}: no row for sample `{sample}`")]
    MissingSample { path: String, sample: String },
    #[error("{path}: row for unknown sample `{sample}`")]
    ExtraSample { path: String, sample: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io { path: path.display().to_string(), source }
    }

    fn malformed(path: &Path, message: impl Into<String>) -> Self {
        FormatError::Malformed { path: path.display().to_string(), message: message.into() }
    }
}

// ---------------------------------------------------------------------------
// Dataset manifest (JSON)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ManifestDoc {
    levels: Vec<String>,
    classes: Vec<ManifestClass>,
    classification_level: usize,
    samples: Vec<ManifestSample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestClass {
    level: usize,
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSample {
    id: String,
    path: Vec<String>,
}

/// Parses a dataset manifest. Records come back in manifest order (the
/// order binary payload rows refer to); canonical sorting happens when the
/// `SampleSet` is built.
pub fn read_manifest(
    path: &Path,
) -> Result<(Arc<ClassTaxonomy>, Vec<SampleRecord>), FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let doc: ManifestDoc = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    let taxonomy = ClassTaxonomy::new(
        doc.levels,
        doc.classes.into_iter().map(|c| (c.level, c.id, c.parent)),
        doc.classification_level,
    )?;
    let records = doc
        .samples
        .into_iter()
        .map(|s| SampleRecord::new(s.id, s.path))
        .collect();
    Ok((Arc::new(taxonomy), records))
}

/// Writes a manifest for the given taxonomy and records (record order is
/// preserved and defines the payload row order).
pub fn write_manifest(
    path: &Path,
    taxonomy: &ClassTaxonomy,
    records: &[SampleRecord],
) -> Result<(), FormatError> {
    let mut classes = Vec::new();
    for level in 0..taxonomy.n_levels() {
        for id in taxonomy.canonical_class_order(level)? {
            classes.push(ManifestClass {
                level,
                id: id.to_string(),
                parent: taxonomy.parent(level, id).map(str::to_string),
            });
        }
    }
    let doc = ManifestDoc {
        levels: taxonomy.levels().to_vec(),
        classes,
        classification_level: taxonomy.classification_level(),
        samples: records
            .iter()
            .map(|r| ManifestSample { id: r.sample_id().to_string(), path: r.path().to_vec() })
            .collect(),
    };
    write_json(path, &doc)
}

fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, doc)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
    w.flush().map_err(|e| FormatError::io(path, e))
}

// ---------------------------------------------------------------------------
// Feature / logit payloads
// ---------------------------------------------------------------------------

/// Binary payload: `DCVR` magic, u32 version, u64 rows, u32 cols, then
/// rows×cols float32, all little-endian, row-major.
pub fn write_matrix_binary(path: &Path, m: &Matrix) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| FormatError::io(path, e));
    emit(FEATURE_MAGIC)?;
    emit(&FEATURE_VERSION.to_le_bytes())?;
    emit(&(m.rows() as u64).to_le_bytes())?;
    emit(&(m.cols() as u32).to_le_bytes())?;
    for v in m.data() {
        emit(&(*v as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_matrix_binary(path: &Path) -> Result<Matrix, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| FormatError::io(path, e))?;
    if &magic != FEATURE_MAGIC {
        return Err(FormatError::malformed(path, "bad magic, expected DCVR"));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf).map_err(|e| FormatError::io(path, e))?;
    let version = u32::from_le_bytes(u32buf);
    if version != FEATURE_VERSION {
        return Err(FormatError::malformed(path, format!("unsupported version {version}")));
    }
    r.read_exact(&mut u64buf).map_err(|e| FormatError::io(path, e))?;
    let rows = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u32buf).map_err(|e| FormatError::io(path, e))?;
    let cols = u32::from_le_bytes(u32buf) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    let mut f32buf = [0u8; 4];
    for _ in 0..rows * cols {
        r.read_exact(&mut f32buf).map_err(|e| FormatError::io(path, e))?;
        data.push(f32::from_le_bytes(f32buf) as f64);
    }
    if r.read(&mut f32buf).map_err(|e| FormatError::io(path, e))? != 0 {
        return Err(FormatError::malformed(path, "trailing bytes after payload"));
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

/// CSV feature fallback: header `sample_id,f0,...,f{d-1}`, one row per
/// sample, any order. Returns ids and values in file order.
pub fn read_features_csv(path: &Path) -> Result<(Vec<String>, Matrix), FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    let width = reader
        .headers()
        .map_err(|e| FormatError::malformed(path, e.to_string()))?
        .len()
        .saturating_sub(1);
    if width == 0 {
        return Err(FormatError::malformed(path, "header has no feature columns"));
    }
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| FormatError::malformed(path, e.to_string()))?;
        if record.len() != width + 1 {
            return Err(FormatError::malformed(
                path,
                format!("row {} has {} fields, expected {}", ids.len() + 2, record.len(), width + 1),
            ));
        }
        ids.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| FormatError::malformed(path, format!("bad number `{field}`")))?;
            data.push(v);
        }
    }
    let rows = ids.len();
    Ok((ids, Matrix::from_vec(rows, width, data)))
}

enum Payload {
    Binary(Matrix),
    Csv { ids: Vec<String>, values: Matrix },
}

fn read_payload(path: &Path) -> Result<Payload, FormatError> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let (ids, values) = read_features_csv(path)?;
        Ok(Payload::Csv { ids, values })
    } else {
        Ok(Payload::Binary(read_matrix_binary(path)?))
    }
}

/// Aligns a payload to the manifest record order: binary payloads are taken
/// as already manifest-ordered (count verified); CSV payloads are matched
/// row-by-row through their sample ids.
fn align_payload(
    payload: Payload,
    records: &[SampleRecord],
    path: &Path,
) -> Result<Matrix, FormatError> {
    match payload {
        Payload::Binary(m) => {
            if m.rows() != records.len() {
                return Err(FormatError::RowCount {
                    path: path.display().to_string(),
                    rows: m.rows(),
                    samples: records.len(),
                });
            }
            Ok(m)
        }
        Payload::Csv { ids, values } => {
            let mut row_of: BTreeMap<&str, usize> = BTreeMap::new();
            for (i, id) in ids.iter().enumerate() {
                if row_of.insert(id.as_str(), i).is_some() {
                    return Err(FormatError::malformed(path, format!("duplicate row for `{id}`")));
                }
            }
            if let Some(extra) = ids
                .iter()
                .find(|id| !records.iter().any(|r| r.sample_id() == id.as_str()))
            {
                return Err(FormatError::ExtraSample {
                    path: path.display().to_string(),
                    sample: extra.clone(),
                });
            }
            let order: Vec<usize> = records
                .iter()
                .map(|r| {
                    row_of.get(r.sample_id()).copied().ok_or_else(|| FormatError::MissingSample {
                        path: path.display().to_string(),
                        sample: r.sample_id().to_string(),
                    })
                })
                .collect::<Result<_, _>>()?;
            Ok(values.select_rows(&order))
        }
    }
}

/// Loads a manifest plus optional feature/logit payloads into a validated,
/// canonically ordered sample set.
pub fn load_sample_set(
    manifest: &Path,
    features: Option<&Path>,
    logits: Option<&Path>,
) -> Result<SampleSet, FormatError> {
    let (taxonomy, records) = read_manifest(manifest)?;
    let features = features
        .map(|p| read_payload(p).and_then(|pl| align_payload(pl, &records, p)))
        .transpose()?;
    let logits = logits
        .map(|p| read_payload(p).and_then(|pl| align_payload(pl, &records, p)))
        .transpose()?;
    Ok(SampleSet::new(taxonomy, records, features, logits)?)
}

// ---------------------------------------------------------------------------
// Folds manifest (JSON)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldsDoc {
    pub algorithm: String,
    pub seed: u64,
    pub k: usize,
    pub levels_used: Vec<String>,
    pub folds: Vec<Vec<String>>,
    pub warnings: Vec<String>,
}

impl FoldsDoc {
    pub fn from_assignment(f: &FoldAssignment, taxonomy: &ClassTaxonomy) -> FoldsDoc {
        FoldsDoc {
            algorithm: f.method().as_str().to_string(),
            seed: f.seed(),
            k: f.k(),
            levels_used: vec![taxonomy.levels()[f.level()].clone()],
            folds: (0..f.k())
                .map(|r| f.fold_members(r).into_iter().map(str::to_string).collect())
                .collect(),
            warnings: f.warnings().iter().map(|w| w.to_string()).collect(),
        }
    }

    /// Reconstructs one evaluation round: fold `r` tests, the rest train.
    /// Sample lists come out sorted so downstream iteration is canonical.
    pub fn round(&self, ood: &FoldsDoc, r: usize) -> Result<EvaluationRound, String> {
        if self.k != ood.k {
            return Err(format!("fold counts differ: {} vs {}", self.k, ood.k));
        }
        if r >= self.k {
            return Err(format!("round {r} out of range for k={}", self.k));
        }
        let split = |doc: &FoldsDoc| {
            let mut test: Vec<String> = doc.folds[r].clone();
            let mut train: Vec<String> = doc
                .folds
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != r)
                .flat_map(|(_, fold)| fold.iter().cloned())
                .collect();
            test.sort_unstable();
            train.sort_unstable();
            (train, test)
        };
        let (train_id, test_id) = split(self);
        let (train_ood, test_ood) = split(ood);
        Ok(EvaluationRound { round_index: r, train_id, test_id, train_ood, test_ood })
    }
}

pub fn write_folds_manifest(path: &Path, doc: &FoldsDoc) -> Result<(), FormatError> {
    write_json(path, doc)
}

pub fn read_folds_manifest(path: &Path) -> Result<FoldsDoc, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| FormatError::malformed(path, e.to_string()))
}

// ---------------------------------------------------------------------------
// Score files (CSV)
// ---------------------------------------------------------------------------

/// Writes `sample_id,score` rows with a header.
pub fn write_scores_csv(path: &Path, rows: &[(String, f64)]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    w.write_record(["sample_id", "score"])
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    for (id, score) in rows {
        w.write_record([id.as_str(), &score.to_string()])
            .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

/// Reads a `sample_id,score` file; the header row is optional.
pub fn read_scores_csv(path: &Path) -> Result<Vec<(String, f64)>, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| FormatError::malformed(path, e.to_string()))?;
        if record.len() != 2 {
            return Err(FormatError::malformed(
                path,
                format!("row {} has {} fields, expected 2", i + 1, record.len()),
            ));
        }
        if i == 0 && record[0].eq_ignore_ascii_case("sample_id") {
            continue;
        }
        let score: f64 = record[1]
            .parse()
            .map_err(|_| FormatError::malformed(path, format!("bad score `{}`", &record[1])))?;
        out.push((record[0].to_string(), score));
    }
    Ok(out)
}

/// Validates an external score file against one round's test set: every
/// test sample exactly once, all scores finite.
pub fn external_scores_for_round(
    path: &Path,
    round: &EvaluationRound,
) -> Result<(Vec<f64>, Vec<f64>), FormatError> {
    let rows = read_scores_csv(path)?;
    let mut by_id: BTreeMap<&str, f64> = BTreeMap::new();
    for (id, score) in &rows {
        if !score.is_finite() {
            return Err(FormatError::malformed(path, format!("non-finite score for `{id}`")));
        }
        if by_id.insert(id.as_str(), *score).is_some() {
            return Err(FormatError::malformed(path, format!("duplicate row for `{id}`")));
        }
    }
    let in_round = |id: &str| {
        round.test_id.iter().any(|s| s == id) || round.test_ood.iter().any(|s| s == id)
    };
    if let Some((extra, _)) = by_id.iter().find(|(id, _)| !in_round(id)) {
        return Err(FormatError::ExtraSample {
            path: path.display().to_string(),
            sample: extra.to_string(),
        });
    }
    let pick = |ids: &[String]| -> Result<Vec<f64>, FormatError> {
        ids.iter()
            .map(|id| {
                by_id.get(id.as_str()).copied().ok_or_else(|| FormatError::MissingSample {
                    path: path.display().to_string(),
                    sample: id.clone(),
                })
            })
            .collect()
    };
    Ok((pick(&round.test_id)?, pick(&round.test_ood)?))
}

// ---------------------------------------------------------------------------
// Per-round metric rows (CSV)
// ---------------------------------------------------------------------------

pub const METRIC_HEADER: [&str; 12] = [
    "detector",
    "id_dataset",
    "ood_dataset",
    "round",
    "tpr5",
    "auroc",
    "aupr",
    "f1",
    "acc90",
    "threshold_acc90",
    "n_id",
    "n_ood",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub detector: String,
    pub id_dataset: String,
    pub ood_dataset: String,
    pub round: usize,
    pub tpr5: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub f1: f64,
    pub acc90: f64,
    pub threshold_acc90: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

impl MetricRow {
    pub fn metric(&self, key: &str) -> Option<f64> {
        match key {
            "tpr5" => Some(self.tpr5),
            "auroc" => Some(self.auroc),
            "aupr" => Some(self.aupr),
            "f1" => Some(self.f1),
            "acc90" => Some(self.acc90),
            _ => None,
        }
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<(), FormatError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    w.write_record(METRIC_HEADER)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| FormatError::malformed(path, e.to_string()))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

/// Appends one row, writing the header first when the file does not exist
/// yet (the single-round `eval` path).
pub fn append_metric_row(path: &Path, row: &MetricRow) -> Result<(), FormatError> {
    let fresh = !path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| FormatError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    if fresh {
        w.write_record(METRIC_HEADER)
            .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    }
    w.serialize(row).map_err(|e| FormatError::malformed(path, e.to_string()))?;
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| FormatError::malformed(path, e.to_string())))
        .collect()
}

// ---------------------------------------------------------------------------
// Labeled square matrices (CSV)
// ---------------------------------------------------------------------------

/// Reads a square matrix CSV whose header is `<anything>,label1,label2,...`
/// and whose rows start with the same labels in the same order.
pub fn read_labeled_matrix_csv(path: &Path) -> Result<(Vec<String>, Matrix), FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    let labels: Vec<String> = reader
        .headers()
        .map_err(|e| FormatError::malformed(path, e.to_string()))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let n = labels.len();
    if n == 0 {
        return Err(FormatError::malformed(path, "header has no labels"));
    }
    let mut m = Matrix::zeros(n, n);
    let mut seen = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| FormatError::malformed(path, e.to_string()))?;
        if seen >= n {
            return Err(FormatError::malformed(path, format!("more than {n} rows")));
        }
        if record.len() != n + 1 {
            return Err(FormatError::malformed(
                path,
                format!("row {} has {} fields, expected {}", seen + 2, record.len(), n + 1),
            ));
        }
        if record[0] != labels[seen][..] {
            return Err(FormatError::malformed(
                path,
                format!("row label `{}` does not match header label `{}`", &record[0], labels[seen]),
            ));
        }
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| FormatError::malformed(path, format!("bad number `{field}`")))?;
            m.set(seen, j, v);
        }
        seen += 1;
    }
    if seen != n {
        return Err(FormatError::malformed(path, format!("{seen} rows for {n} labels")));
    }
    Ok((labels, m))
}

pub fn write_labeled_matrix_csv(
    path: &Path,
    first_column: &str,
    labels: &[String],
    m: &Matrix,
) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| FormatError::malformed(path, e.to_string()))?;
    let mut header = vec![first_column.to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(|e| FormatError::malformed(path, e.to_string()))?;
    for (i, label) in labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        for j in 0..labels.len() {
            row.push(m.get(i, j).to_string());
        }
        w.write_record(&row).map_err(|e| FormatError::malformed(path, e.to_string()))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}
