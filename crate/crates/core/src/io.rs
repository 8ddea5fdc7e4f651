//! File formats.
//!
//! * Recording: headerless CSV, one region per row and one sample per
//!   column, plus a JSON sidecar `{dt, subject_id, task_id, scan_id,
//!   input_indices}`.
//! * Params: JSON `{m, n, dt, lambda, Q, A, B1, B2}` with row-major flat
//!   arrays, optionally carrying the model structure and recording labels.
//! * Features: JSON with complex vectors as `[re, im]` pairs and the source tag.
//!
//! Every writer goes through [`atomic_write`] (temporary file + rename).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::RecordingKey;
use crate::modal::{FeatureSource, ModalFeatures, C64};
use crate::model::{ModelParams, ModelStructure, Recording};
use crate::reachability::{Grid, GridLayout};

/// Decimal scientific notation with 17 significant digits.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn atomic_write(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::format(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| format_number(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e))?;
        let row = record
            .iter()
            .map(|cell| {
                cell.parse::<f64>()
                    .map_err(|e| Error::format(path, format!("row {}: '{cell}': {e}", rows.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::format(path, "rows have different lengths"));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub dt: f64,
    pub subject_id: String,
    pub task_id: String,
    pub scan_id: String,
    pub input_indices: Vec<usize>,
}

pub fn read_recording(csv_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<(Recording, RecordingMeta)> {
    let data = read_matrix_csv(csv_path)?;
    let meta: RecordingMeta = read_json(meta_path)?;
    let rec = Recording::new(
        data,
        meta.dt,
        meta.subject_id.clone(),
        meta.task_id.clone(),
        meta.scan_id.clone(),
    )?;
    Ok((rec, meta))
}

pub fn write_recording(
    rec: &Recording,
    input_indices: &[usize],
    csv_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
) -> Result<()> {
    atomic_write(csv_path, matrix_to_csv(rec.data()).as_bytes())?;
    let meta = RecordingMeta {
        dt: rec.dt(),
        subject_id: rec.subject_id().to_string(),
        task_id: rec.task_id().to_string(),
        scan_id: rec.scan_id().to_string(),
        input_indices: input_indices.to_vec(),
    };
    write_json(meta_path, &meta)
}

/// On-disk form of [`ModelParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub m: usize,
    pub n: usize,
    pub dt: f64,
    pub lambda: f64,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B1")]
    pub b1: Vec<f64>,
    #[serde(rename = "B2")]
    pub b2: Vec<f64>,
    #[serde(default)]
    pub model: ModelStructure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_id: Option<String>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(rows: usize, cols: usize, data: &[f64], name: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{name} has {} entries, expected {rows}x{cols}",
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl ParamsFile {
    pub fn from_params(params: &ModelParams, key: Option<&RecordingKey>) -> Self {
        Self {
            m: params.states(),
            n: params.inputs(),
            dt: params.dt(),
            lambda: params.lambda(),
            q: row_major(params.q()),
            a: row_major(params.a()),
            b1: row_major(params.b1()),
            b2: row_major(params.b2()),
            model: params.structure(),
            subject_id: key.map(|k| k.subject_id.clone()),
            task_id: key.map(|k| k.task_id.clone()),
            scan_id: key.map(|k| k.scan_id.clone()),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let (m, n) = (self.m, self.n);
        ModelParams::with_structure(
            from_row_major(m, m, &self.q, "Q")?,
            from_row_major(m, m, &self.a, "A")?,
            from_row_major(m, n, &self.b1, "B1")?,
            from_row_major(m, n, &self.b2, "B2")?,
            self.lambda,
            self.dt,
            self.model,
        )
    }

    /// Labels, when all three are present.
    pub fn key(&self) -> Option<RecordingKey> {
        match (&self.subject_id, &self.task_id, &self.scan_id) {
            (Some(s), Some(t), Some(c)) => Some(RecordingKey::new(s, t, c)),
            _ => None,
        }
    }
}

pub fn read_params(path: impl AsRef<Path>) -> Result<(ModelParams, Option<RecordingKey>)> {
    let path = path.as_ref();
    let file: ParamsFile = read_json(path)?;
    let params = file.to_params().map_err(|e| Error::format(path, e))?;
    Ok((params, file.key()))
}

pub fn write_params(path: impl AsRef<Path>, params: &ModelParams, key: Option<&RecordingKey>) -> Result<()> {
    write_json(path, &ParamsFile::from_params(params, key))
}

/// All `*.json` params files in `dir`, sorted by file name.
pub fn read_params_dir(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, ModelParams, Option<RecordingKey>)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let (params, key) = read_params(&p)?;
            Ok((p, params, key))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturesFile {
    pub format_version: u32,
    pub source: FeatureSource,
    pub dimension: usize,
    pub eigenvalues: Vec<[f64; 2]>,
    pub vectors: Vec<Vec<[f64; 2]>>,
}

impl FeaturesFile {
    pub fn from_features(f: &ModalFeatures) -> Self {
        Self {
            format_version: crate::FORMAT_VERSION,
            source: f.source(),
            dimension: f.dimension(),
            eigenvalues: f.eigenvalues().iter().map(|c| [c.re, c.im]).collect(),
            vectors: f
                .vectors()
                .iter()
                .map(|v| v.iter().map(|c| [c.re, c.im]).collect())
                .collect(),
        }
    }

    pub fn to_features(&self) -> Result<ModalFeatures> {
        if self.vectors.iter().any(|v| v.len() != self.dimension) {
            return Err(Error::Shape("feature vector length differs from dimension".into()));
        }
        ModalFeatures::new(
            self.vectors
                .iter()
                .map(|v| DVector::from_iterator(v.len(), v.iter().map(|p| C64::new(p[0], p[1]))))
                .collect(),
            self.eigenvalues.iter().map(|p| C64::new(p[0], p[1])).collect(),
            self.source,
        )
    }
}

pub fn read_layout(path: impl AsRef<Path>) -> Result<GridLayout> {
    read_json(path)
}

pub fn grid_to_csv(grid: &Grid) -> String {
    let mut out = String::new();
    for row in grid {
        let cells: Vec<String> = row.iter().map(|c| c.map(format_number).unwrap_or_default()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn values_to_csv(values: &[f64]) -> String {
    let mut out = String::from("region,value\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", format_number(*v)));
    }
    out
}
