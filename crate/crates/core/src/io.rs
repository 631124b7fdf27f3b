//! CSV tables, JSON sidecars and checksums.
//!
//! Numbers are written with Rust's shortest round-trip formatting so files
//! reload bit-exactly and reruns produce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::observe::{EmbeddedSeries, EmbeddingLayout, Standardization, TimeSeries};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {path}: {source}")]
    Fs { path: String, source: std::io::Error },
    #[error("malformed CSV {path}: {message}")]
    Csv { path: String, message: String },
    #[error("malformed metadata {path}: {message}")]
    Json { path: String, message: String },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs { path: path.display().to_string(), source }
}

/// A header plus equally long numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(headers: Vec<String>) -> Self {
        let columns = vec![Vec::new(); headers.len()];
        Self { headers, columns }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.columns.len());
        for (c, v) in self.columns.iter_mut().zip(row) {
            c.push(*v);
        }
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers.iter().position(|h| h == name).map(|i| self.columns[i].as_slice())
    }
}

pub fn write_table(path: &Path, table: &Table) -> Result<(), IoError> {
    let csv_err = |e: csv::Error| IoError::Csv { path: path.display().to_string(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&table.headers).map_err(csv_err)?;
    let mut record = Vec::with_capacity(table.columns.len());
    for i in 0..table.rows() {
        record.clear();
        record.extend(table.columns.iter().map(|c| c[i].to_string()));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(fs_err(path))
}

pub fn read_table(path: &Path) -> Result<Table, IoError> {
    let err = |message: String| IoError::Csv { path: path.display().to_string(), message };
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::Fs { path: path.display().to_string(), source },
        other => err(format!("{other:?}")),
    })?;
    let headers: Vec<String> = r.headers().map_err(|e| err(e.to_string()))?.iter().map(str::to_string).collect();
    let mut table = Table::new(headers);
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != table.headers.len() {
            return Err(err(format!("row {} has {} fields, expected {}", line + 2, rec.len(), table.headers.len())));
        }
        for (c, field) in table.columns.iter_mut().zip(rec.iter()) {
            let v: f64 = field.trim().parse().map_err(|_| err(format!("row {}: '{field}' is not a number", line + 2)))?;
            c.push(v);
        }
    }
    Ok(table)
}

/// `<file>.json` next to a data file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| IoError::Json { path: path.display().to_string(), message: e.to_string() })?;
    fs::write(path, text + "\n").map_err(fs_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Json { path: path.display().to_string(), message: e.to_string() })
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(fs_err(path))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Metadata written beside a simulated or observed series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub system: String,
    pub params: Vec<(String, f64)>,
    pub dt: f64,
    pub dt_int: f64,
    pub seed: u64,
    pub transient: f64,
    #[serde(default)]
    pub noise_std_ratio: f64,
}

pub fn write_series(path: &Path, series: &TimeSeries, meta: Option<&SeriesMeta>) -> Result<(), IoError> {
    let mut headers = vec!["t".to_string()];
    headers.extend((1..=series.n_components()).map(|i| format!("w{i}")));
    let mut columns = vec![(0..series.len()).map(|i| series.time(i)).collect()];
    columns.extend(series.columns.iter().cloned());
    write_table(path, &Table { headers, columns })?;
    if let Some(meta) = meta {
        write_json(&sidecar_path(path), meta)?;
    }
    Ok(())
}

/// Reads `t,w1[,w2..]`; the step comes from the sidecar when present,
/// otherwise from the first two time stamps.
pub fn read_series(path: &Path) -> Result<(TimeSeries, Option<SeriesMeta>), IoError> {
    let table = read_table(path)?;
    let err = |message: &str| IoError::Csv { path: path.display().to_string(), message: message.into() };
    if table.headers.first().map(String::as_str) != Some("t") || table.headers.len() < 2 {
        return Err(err("expected header t,w1[,w2,...]"));
    }
    let side = sidecar_path(path);
    let meta: Option<SeriesMeta> = if side.exists() { Some(read_json(&side)?) } else { None };
    let t = &table.columns[0];
    let dt = match &meta {
        Some(m) => m.dt,
        None if t.len() >= 2 => t[1] - t[0],
        None => return Err(err("need a sidecar or at least two rows to infer the time step")),
    };
    let t0 = t.first().copied().unwrap_or(0.0);
    Ok((TimeSeries::new(dt, t0, table.columns[1..].to_vec()), meta))
}

/// Metadata for an embedded series and the derivative targets beside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub dim: usize,
    pub observables: usize,
    pub tau: f64,
    pub lag: usize,
    pub dt: f64,
    pub layout: EmbeddingLayout,
    pub standardization: Standardization,
    pub deriv_order: Option<u32>,
    pub deriv_stride: Option<usize>,
}

/// Columns `t,X1..XD` and, when targets are given, `dX1..dXD`.
pub fn write_embedded(
    path: &Path,
    embedded: &EmbeddedSeries,
    targets: Option<&EmbeddedSeries>,
    meta: &EmbeddingMeta,
) -> Result<(), IoError> {
    let d = embedded.dim;
    let mut headers = vec!["t".to_string()];
    headers.extend((1..=d).map(|i| format!("X{i}")));
    let mut columns = vec![(0..embedded.len()).map(|i| embedded.time(i)).collect()];
    columns.extend((0..d).map(|j| embedded.component(j)));
    if let Some(tg) = targets {
        headers.extend((1..=d).map(|i| format!("dX{i}")));
        columns.extend((0..d).map(|j| tg.component(j)));
    }
    write_table(path, &Table { headers, columns })?;
    write_json(&sidecar_path(path), meta)
}

pub struct EmbeddedFile {
    pub embedded: EmbeddedSeries,
    pub targets: Option<Vec<f64>>,
    pub meta: EmbeddingMeta,
}

pub fn read_embedded(path: &Path) -> Result<EmbeddedFile, IoError> {
    let meta: EmbeddingMeta = read_json(&sidecar_path(path))?;
    let table = read_table(path)?;
    let d = meta.dim;
    let err = |message: String| IoError::Csv { path: path.display().to_string(), message };
    let has_targets = table.headers.len() == 1 + 2 * d;
    if table.headers.len() != 1 + d && !has_targets {
        return Err(err(format!("expected {} or {} columns for dimension {d}", 1 + d, 1 + 2 * d)));
    }
    let rows = table.rows();
    let gather = |offset: usize| -> Vec<f64> {
        (0..rows).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| table.columns[offset + j][i]).collect()
    };
    let embedded = EmbeddedSeries {
        dim: d,
        observables: meta.observables,
        tau: meta.tau,
        lag: meta.lag,
        dt: meta.dt,
        t0: table.columns[0].first().copied().unwrap_or(0.0),
        data: gather(1),
    };
    let targets = has_targets.then(|| gather(1 + d));
    Ok(EmbeddedFile { embedded, targets, meta })
}
