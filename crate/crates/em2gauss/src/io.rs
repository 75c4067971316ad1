//! CSV output, manifests and sample-batch files.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use em2gauss_core::sampling::SampleOrigin;
use em2gauss_core::{DMatrix, DVector, SampleBatch};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// 17 significant digits in scientific notation; `inf`, `-inf` and `NaN` verbatim.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Sidecar path: `<path>.<suffix>`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Ordered key-value record written next to every output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.push((key.into(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| {
                let l = l.trim();
                if l.is_empty() || l.starts_with('#') {
                    return None;
                }
                let (k, v) = l.split_once('=')?;
                Some((k.trim().to_string(), v.trim().to_string()))
            })
            .collect();
        Self { entries }
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let mut f = File::create(path).map_err(io_err(path))?;
        f.write_all(self.to_text().as_bytes()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Ok(Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?))
    }
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    (0..m.nrows())
        .map(|i| fmt_vec(&m.row(i).iter().copied().collect::<Vec<_>>()))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_floats(path: &Path, key: &str, s: &str) -> Result<Vec<f64>, IoError> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| format_err(path, format!("`{key}`: cannot parse `{}`", x.trim())))
        })
        .collect()
}

/// Writes `x1..xd` rows plus a `.meta` sidecar with provenance.
pub fn write_batch(path: &Path, batch: &SampleBatch) -> Result<(), IoError> {
    let header: Vec<String> = (1..=batch.dim()).map(|k| format!("x{k}")).collect();
    let rows: Vec<Vec<String>> = batch
        .points()
        .map(|p| p.iter().map(|v| fmt_f64(*v)).collect())
        .collect();
    write_csv(path, &header, &rows)?;
    let mut meta = Manifest::new();
    meta.push("n", batch.len().to_string());
    meta.push("dim", batch.dim().to_string());
    meta.push("seed", batch.seed().to_string());
    meta.push("stream", batch.stream().to_string());
    meta.push("stabilized", batch.is_stabilized().to_string());
    if let Some(c) = batch.centered_by() {
        meta.push("centered_by", fmt_vec(c.as_slice()));
    }
    if let Some(o) = batch.origin() {
        meta.push("mu1", fmt_vec(o.mu1.as_slice()));
        meta.push("mu2", fmt_vec(o.mu2.as_slice()));
        meta.push("sigma", fmt_matrix(&o.sigma));
    }
    meta.write(&sidecar(path, "meta"))
}

/// Reads a batch CSV (header row, one point per row); the `.meta` sidecar is optional.
pub fn read_batch(path: &Path) -> Result<SampleBatch, IoError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let dim = r.headers().map_err(csv_err(path))?.len();
    let mut data = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != dim {
            return Err(format_err(path, format!("row {} has {} fields, expected {dim}", i + 1, rec.len())));
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| format_err(path, format!("row {}: cannot parse `{field}`", i + 1)))?;
            data.push(v);
        }
    }
    let batch = SampleBatch::from_rows(dim, data).map_err(|e| format_err(path, e.to_string()))?;
    let meta_path = sidecar(path, "meta");
    if !meta_path.exists() {
        return Ok(batch);
    }
    let meta = Manifest::read(&meta_path)?;
    let num = |key: &str| -> Result<u64, IoError> {
        meta.get(key)
            .map(|v| v.parse().map_err(|_| format_err(&meta_path, format!("`{key}`: cannot parse `{v}`"))))
            .unwrap_or(Ok(0))
    };
    let origin = match (meta.get("mu1"), meta.get("mu2"), meta.get("sigma")) {
        (Some(a), Some(b), Some(s)) => {
            let rows = s
                .split(';')
                .map(|r| parse_floats(&meta_path, "sigma", r))
                .collect::<Result<Vec<_>, _>>()?;
            let flat: Vec<f64> = rows.concat();
            if flat.len() != dim * dim {
                return Err(format_err(&meta_path, "`sigma` has the wrong size"));
            }
            Some(SampleOrigin {
                mu1: DVector::from_vec(parse_floats(&meta_path, "mu1", a)?),
                mu2: DVector::from_vec(parse_floats(&meta_path, "mu2", b)?),
                sigma: DMatrix::from_row_slice(dim, dim, &flat),
            })
        }
        _ => None,
    };
    let centered = meta
        .get("centered_by")
        .map(|v| parse_floats(&meta_path, "centered_by", v).map(DVector::from_vec))
        .transpose()?;
    let stabilized = meta.get("stabilized") == Some("true");
    batch
        .with_metadata(origin, num("seed")?, num("stream")?, stabilized, centered)
        .map_err(|e| format_err(&meta_path, e.to_string()))
}
