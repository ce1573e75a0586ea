//! Interchange formats between the metric engine and model inference.
//!
//! Matrices are stored as a JSON sidecar `<name>.json` next to a raw
//! row-major little-endian `f32` payload `<name>.bin` (or `<name>.csv` when the
//! sidecar declares `"format": "csv"`). Per-sample evidence (detections,
//! similarity scores, counts) is line-delimited JSON, one record per line.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Lines};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

/// Maximum allowed deviation of a probability row sum from 1.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-4;

pub const DTYPE_F32LE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixRole {
    Probabilities,
    Logits,
    Features,
}

impl std::fmt::Display for MatrixRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MatrixRole::Probabilities => "probabilities",
            MatrixRole::Logits => "logits",
            MatrixRole::Features => "features",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageFormat {
    #[default]
    Bin,
    Csv,
}

/// Sidecar metadata describing a matrix payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub role: MatrixRole,
    #[serde(default)]
    pub format: StorageFormat,
    #[serde(default)]
    pub source_id: String,
}

/// Dense row-major `f32` matrix of probabilities, logits or features.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixArtifact {
    rows: usize,
    cols: usize,
    role: MatrixRole,
    data: Vec<f32>,
    source_id: String,
}

impl MatrixArtifact {
    /// Builds an artifact, checking every type invariant.
    pub fn new(
        rows: usize,
        cols: usize,
        role: MatrixRole,
        data: Vec<f32>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let artifact = MatrixArtifact {
            rows,
            cols,
            role,
            data,
            source_id: source_id.into(),
        };
        artifact.validate()?;
        Ok(artifact)
    }

    /// Builds an artifact from `f64` rows, rounding each entry to `f32`.
    pub fn from_rows(role: MatrixRole, rows: &[Vec<f64>], source_id: &str) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(EvalError::Validation("ragged rows".into()));
        }
        let data = rows.iter().flatten().map(|&v| v as f32).collect();
        Self::new(rows.len(), cols, role, data, source_id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(EvalError::Validation(format!(
                "matrix must have at least one row and column, got {}x{}",
                self.rows, self.cols
            )));
        }
        let expected = self.rows.checked_mul(self.cols).ok_or_else(|| {
            EvalError::Validation(format!("shape {}x{} overflows", self.rows, self.cols))
        })?;
        if self.data.len() != expected {
            return Err(EvalError::Validation(format!(
                "data length {} does not equal rows x cols = {}",
                self.data.len(),
                expected
            )));
        }
        for (row, values) in self.data.chunks_exact(self.cols).enumerate() {
            if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                return Err(EvalError::Validation(format!(
                    "row {row}, column {col}: non-finite value {}",
                    values[col]
                )));
            }
            if self.role == MatrixRole::Probabilities {
                if let Some(col) = values.iter().position(|&v| v < 0.0) {
                    return Err(EvalError::Validation(format!(
                        "row {row}, column {col}: negative probability {}",
                        values[col]
                    )));
                }
                let sum: f64 = values.iter().map(|&v| f64::from(v)).sum();
                if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
                    return Err(EvalError::RowSum { row, sum });
                }
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn role(&self) -> MatrixRole {
        self.role
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.cols..(index + 1) * self.cols]
    }

    /// Fails unless the artifact carries the given role.
    pub fn expect_role(&self, role: MatrixRole) -> Result<&Self> {
        if self.role != role {
            return Err(EvalError::Validation(format!(
                "expected a {role} matrix, got {}",
                self.role
            )));
        }
        Ok(self)
    }

    /// Widens the payload to an `f64` matrix for metric computation.
    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f64::from(v)),
        )
    }

    /// Widens the payload to `f64` rows.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().map(|&v| f64::from(v)).collect())
            .collect()
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            rows: self.rows,
            cols: self.cols,
            dtype: DTYPE_F32LE.to_string(),
            role: self.role,
            format: StorageFormat::Bin,
            source_id: self.source_id.clone(),
        }
    }
}

/// Strips a trailing `.json`, `.bin` or `.csv` so callers may name either file.
pub fn artifact_base(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "bin" | "csv") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    with_suffix(&artifact_base(path), ".json")
}

pub fn payload_path(path: &Path, format: StorageFormat) -> PathBuf {
    let suffix = match format {
        StorageFormat::Bin => ".bin",
        StorageFormat::Csv => ".csv",
    };
    with_suffix(&artifact_base(path), suffix)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<MatrixArtifact> {
    let path = path.as_ref();
    let sidecar_file = sidecar_path(path);
    let text = fs::read_to_string(&sidecar_file).map_err(|e| EvalError::io(&sidecar_file, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)
        .map_err(|e| EvalError::format(&sidecar_file, format!("bad sidecar: {e}")))?;
    if sidecar.dtype != DTYPE_F32LE {
        return Err(EvalError::format(
            &sidecar_file,
            format!(
                "unsupported dtype {:?}, expected {DTYPE_F32LE:?}",
                sidecar.dtype
            ),
        ));
    }

    let payload = payload_path(path, sidecar.format);
    let data = match sidecar.format {
        StorageFormat::Bin => read_bin(&payload, sidecar.rows, sidecar.cols)?,
        StorageFormat::Csv => read_csv(&payload, sidecar.rows, sidecar.cols)?,
    };
    MatrixArtifact::new(
        sidecar.rows,
        sidecar.cols,
        sidecar.role,
        data,
        sidecar.source_id,
    )
}

fn read_bin(path: &Path, rows: usize, cols: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| EvalError::io(path, e))?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| EvalError::format(path, format!("shape {rows}x{cols} overflows")))?;
    if bytes.len() != expected {
        return Err(EvalError::format(
            path,
            format!(
                "expected {expected} bytes for {rows}x{cols} f32le, found {}",
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_csv(path: &Path, rows: usize, cols: usize) -> Result<Vec<f32>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| EvalError::format(path, e.to_string()))?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| EvalError::format(path, e.to_string()))?;
        if record.len() != cols {
            return Err(EvalError::format(
                path,
                format!(
                    "sample {index}: expected {cols} values, found {}",
                    record.len()
                ),
            ));
        }
        for field in record.iter() {
            let value: f32 = field.parse().map_err(|_| {
                EvalError::format(path, format!("sample {index}: bad number {field:?}"))
            })?;
            data.push(value);
        }
        seen += 1;
    }
    if seen != rows {
        return Err(EvalError::format(
            path,
            format!("expected {rows} samples, found {seen}"),
        ));
    }
    Ok(data)
}

/// Writes `<path>.json` and `<path>.bin`, creating parent directories.
pub fn save_matrix(artifact: &MatrixArtifact, path: impl AsRef<Path>) -> Result<()> {
    artifact.validate()?;
    let path = path.as_ref();
    let sidecar_file = sidecar_path(path);
    let payload = payload_path(path, StorageFormat::Bin);
    if let Some(parent) = sidecar_file.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| EvalError::io(parent, e))?;
    }

    let mut json = serde_json::to_string_pretty(&artifact.sidecar())
        .map_err(|e| EvalError::format(&sidecar_file, e.to_string()))?;
    json.push('\n');
    fs::write(&sidecar_file, json).map_err(|e| EvalError::io(&sidecar_file, e))?;

    let bytes: Vec<u8> = artifact.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&payload, bytes).map_err(|e| EvalError::io(&payload, e))
}

/// Class labels paired with a logit or probability matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<usize>);

impl LabelVector {
    pub fn new(labels: Vec<usize>) -> Self {
        LabelVector(labels)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks the labels against a paired matrix shape.
    pub fn check_against(&self, rows: usize, classes: usize) -> Result<()> {
        if self.0.len() != rows {
            return Err(EvalError::Validation(format!(
                "{} labels for a matrix of {rows} rows",
                self.0.len()
            )));
        }
        if let Some((i, &label)) = self.0.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(EvalError::Validation(format!(
                "label {i} is {label}, must be below {classes}"
            )));
        }
        Ok(())
    }
}

/// Reads labels from either a JSON array or whitespace-separated integers.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    let trimmed = text.trim_start();
    let labels = if trimmed.starts_with('[') {
        serde_json::from_str::<Vec<usize>>(trimmed)
            .map_err(|e| EvalError::format(path, format!("bad label array: {e}")))?
    } else {
        trimmed
            .split_whitespace()
            .enumerate()
            .map(|(i, token)| {
                token.parse::<usize>().map_err(|_| {
                    EvalError::format(path, format!("label {i}: {token:?} is not a class index"))
                })
            })
            .collect::<Result<_>>()?
    };
    Ok(LabelVector(labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: String,
    pub score: f64,
}

/// Detector output for one generated image and the class its caption asked for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub expected_class: String,
    #[serde(default)]
    pub detections: Vec<Detection>,
}

/// Similarities between one generated image and `M` candidate captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub query_id: String,
    pub gt_index: usize,
    pub similarities: Vec<f64>,
}

/// Matched vs. antonym-mismatched caption scores for one generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalTriplet {
    pub word: String,
    pub triplet_id: String,
    pub sim_matched: f64,
    pub sim_mismatched: f64,
}

/// Annotated and predicted object counts for one counting caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub caption_id: String,
    pub gt_counts: BTreeMap<String, f64>,
    #[serde(default)]
    pub pred_counts: BTreeMap<String, f64>,
}

/// One caption from a `.jsonl` caption file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Detection,
    Retrieval,
    Triplet,
    Count,
    Caption,
}

/// A line-delimited JSON record with per-record invariants.
pub trait Record: DeserializeOwned {
    const KIND: RecordKind;

    fn check(&self) -> std::result::Result<(), String>;
}

impl Record for DetectionRecord {
    const KIND: RecordKind = RecordKind::Detection;

    fn check(&self) -> std::result::Result<(), String> {
        if self.expected_class.is_empty() {
            return Err("expected_class is empty".into());
        }
        for (i, d) in self.detections.iter().enumerate() {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(format!("detection {i}: score {} outside [0, 1]", d.score));
            }
        }
        Ok(())
    }
}

impl Record for RetrievalRecord {
    const KIND: RecordKind = RecordKind::Retrieval;

    fn check(&self) -> std::result::Result<(), String> {
        let m = self.similarities.len();
        if m < 2 {
            return Err(format!("need at least 2 similarities, found {m}"));
        }
        if self.gt_index >= m {
            return Err(format!(
                "gt_index {} out of range for {m} similarities",
                self.gt_index
            ));
        }
        if let Some(i) = self.similarities.iter().position(|s| !s.is_finite()) {
            return Err(format!("similarity {i} is not finite"));
        }
        Ok(())
    }
}

impl Record for PositionalTriplet {
    const KIND: RecordKind = RecordKind::Triplet;

    fn check(&self) -> std::result::Result<(), String> {
        if self.word.is_empty() {
            return Err("word is empty".into());
        }
        if !self.sim_matched.is_finite() || !self.sim_mismatched.is_finite() {
            return Err("similarities must be finite".into());
        }
        Ok(())
    }
}

impl Record for CountRecord {
    const KIND: RecordKind = RecordKind::Count;

    fn check(&self) -> std::result::Result<(), String> {
        if self.gt_counts.is_empty() {
            return Err("gt_counts is empty".into());
        }
        for (class, &count) in self.gt_counts.iter().chain(&self.pred_counts) {
            if !count.is_finite() || count < 0.0 {
                return Err(format!(
                    "count for {class:?} must be finite and >= 0, got {count}"
                ));
            }
        }
        Ok(())
    }
}

impl Record for CaptionRecord {
    const KIND: RecordKind = RecordKind::Caption;

    fn check(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("caption id is empty".into());
        }
        Ok(())
    }
}

/// Streams validated records from a `.jsonl` source in file order.
///
/// Blank lines are skipped. Each item carries its 1-based line number.
pub struct RecordReader<T, R = BufReader<File>> {
    lines: Lines<R>,
    line: usize,
    _record: PhantomData<T>,
}

impl<T: Record> RecordReader<T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| EvalError::io(path, e))?;
        Ok(Self::from_reader(BufReader::new(file)))
    }
}

impl<T: Record, R: BufRead> RecordReader<T, R> {
    pub fn from_reader(reader: R) -> Self {
        RecordReader {
            lines: reader.lines(),
            line: 0,
            _record: PhantomData,
        }
    }
}

impl<T: Record, R: BufRead> Iterator for RecordReader<T, R> {
    type Item = Result<(usize, T)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(text) => text,
                Err(e) => {
                    return Some(Err(EvalError::Parse {
                        line: self.line + 1,
                        message: e.to_string(),
                    }))
                }
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let line = self.line;
            let record: T = match serde_json::from_str(&text) {
                Ok(record) => record,
                Err(e) => {
                    return Some(Err(EvalError::Parse {
                        line,
                        message: e.to_string(),
                    }))
                }
            };
            return Some(match record.check() {
                Ok(()) => Ok((line, record)),
                Err(message) => Err(EvalError::RecordValidation { line, message }),
            });
        }
    }
}

/// Loads a whole record file, failing on the first bad line.
pub fn load_records<T: Record>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    RecordReader::<T>::open(path)?
        .map(|item| item.map(|(_, record)| record))
        .collect()
}

impl RecordKind {
    /// Validates every line of a record file, returning the record count.
    pub fn validate_file(self, path: &Path) -> Result<usize> {
        fn count<T: Record>(path: &Path) -> Result<usize> {
            RecordReader::<T>::open(path)?.try_fold(0, |n, item| item.map(|_| n + 1))
        }
        match self {
            RecordKind::Detection => count::<DetectionRecord>(path),
            RecordKind::Retrieval => count::<RetrievalRecord>(path),
            RecordKind::Triplet => count::<PositionalTriplet>(path),
            RecordKind::Count => count::<CountRecord>(path),
            RecordKind::Caption => count::<CaptionRecord>(path),
        }
    }

    /// Guesses the record kind from the keys of the first non-blank line.
    pub fn detect(path: &Path) -> Result<Option<RecordKind>> {
        let file = File::open(path).map_err(|e| EvalError::io(path, e))?;
        for (index, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| EvalError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| EvalError::Parse {
                    line: index + 1,
                    message: e.to_string(),
                })?;
            let has = |key: &str| value.get(key).is_some();
            return Ok(if has("expected_class") {
                Some(RecordKind::Detection)
            } else if has("gt_index") {
                Some(RecordKind::Retrieval)
            } else if has("sim_matched") {
                Some(RecordKind::Triplet)
            } else if has("gt_counts") {
                Some(RecordKind::Count)
            } else if has("text") {
                Some(RecordKind::Caption)
            } else {
                None
            });
        }
        Ok(None)
    }
}
