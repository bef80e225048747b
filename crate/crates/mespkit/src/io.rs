//! Instance and report I/O: Matrix Market symmetric files, dense CSV,
//! and the JSON report schema.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::MespError;
use crate::model::{BoundResult, SYM_TOL};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    /// Matrix Market, `coordinate real symmetric` (lower triangle entries).
    MatrixMarket,
    /// Dense comma-separated rows.
    DenseCsv,
}

impl MatrixFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => MatrixFormat::DenseCsv,
            _ => MatrixFormat::MatrixMarket,
        }
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> MespError {
    MespError::MalformedFile { path: path.display().to_string(), reason: reason.into() }
}

/// Reads a symmetric matrix. Matrix Market coordinate files may carry any
/// triangle; entries are mirrored. Array files are taken column-major over
/// the lower triangle per the symmetric convention.
pub fn read_matrix(path: &Path, format: MatrixFormat) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let m = match format {
        MatrixFormat::MatrixMarket => parse_matrix_market(path, &text)?,
        MatrixFormat::DenseCsv => parse_csv(path, &text)?,
    };
    check_symmetric(path, &m)?;
    Ok(m)
}

fn check_symmetric(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(malformed(path, format!("matrix is {}x{}, not square", n, m.ncols())));
    }
    let scale = m.amax().max(1e-300);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYM_TOL * scale {
                return Err(malformed(path, format!("asymmetric at ({},{})", i + 1, j + 1)));
            }
        }
    }
    Ok(())
}

fn parse_matrix_market(path: &Path, text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| malformed(path, "empty file"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() < 5 || h[0] != "%%MatrixMarket" || h[1] != "matrix" {
        return Err(malformed(path, "missing %%MatrixMarket header"));
    }
    let layout = h[2];
    if h[3] != "real" {
        return Err(malformed(path, format!("unsupported field {}", h[3])));
    }
    let symmetric = h[4] == "symmetric" || h[4] == "general";
    if !symmetric {
        return Err(malformed(path, format!("unsupported symmetry {}", h[4])));
    }

    let mut body = lines.filter(|l| !l.trim_start().starts_with('%') && !l.trim().is_empty());
    let size_line = body.next().ok_or_else(|| malformed(path, "missing size line"))?;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| malformed(path, "bad size line")))
        .collect::<Result<_>>()?;

    match layout {
        "coordinate" => {
            if dims.len() != 3 {
                return Err(malformed(path, "coordinate size line needs 3 fields"));
            }
            let (rows, cols, nnz) = (dims[0], dims[1], dims[2]);
            if rows != cols {
                return Err(malformed(path, "matrix not square"));
            }
            let mut m = DMatrix::zeros(rows, rows);
            let mut count = 0usize;
            for line in body {
                let t: Vec<&str> = line.split_whitespace().collect();
                if t.len() != 3 {
                    return Err(malformed(path, format!("bad entry line: {line}")));
                }
                let i: usize = t[0].parse().map_err(|_| malformed(path, "bad row index"))?;
                let j: usize = t[1].parse().map_err(|_| malformed(path, "bad col index"))?;
                let v: f64 = t[2].parse().map_err(|_| malformed(path, "bad value"))?;
                if i == 0 || j == 0 || i > rows || j > rows {
                    return Err(malformed(path, format!("index ({i},{j}) out of range")));
                }
                m[(i - 1, j - 1)] = v;
                m[(j - 1, i - 1)] = v;
                count += 1;
            }
            if count != nnz {
                return Err(malformed(path, format!("expected {nnz} entries, found {count}")));
            }
            Ok(m)
        }
        "array" => {
            if dims.len() != 2 {
                return Err(malformed(path, "array size line needs 2 fields"));
            }
            let (rows, cols) = (dims[0], dims[1]);
            if rows != cols {
                return Err(malformed(path, "matrix not square"));
            }
            let values: Vec<f64> = body
                .flat_map(|l| l.split_whitespace())
                .map(|t| t.parse().map_err(|_| malformed(path, "bad value")))
                .collect::<Result<_>>()?;
            let expected = rows * (rows + 1) / 2;
            if values.len() != expected {
                return Err(malformed(path, format!("expected {expected} values, found {}", values.len())));
            }
            let mut m = DMatrix::zeros(rows, rows);
            let mut idx = 0usize;
            for j in 0..rows {
                for i in j..rows {
                    m[(i, j)] = values[idx];
                    m[(j, i)] = values[idx];
                    idx += 1;
                }
            }
            Ok(m)
        }
        other => Err(malformed(path, format!("unsupported layout {other}"))),
    }
}

fn parse_csv(path: &Path, text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse().map_err(|_| malformed(path, format!("bad value `{t}`"))))
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(malformed(path, "empty matrix"));
    }
    if rows.iter().any(|r| r.len() != n) {
        return Err(malformed(path, "ragged rows"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Writes a symmetric matrix. Matrix Market output stores the lower
/// triangle in coordinate format with full precision.
pub fn write_matrix(m: &DMatrix<f64>, path: &Path, format: MatrixFormat) -> Result<()> {
    let mut out = String::new();
    let n = m.nrows();
    match format {
        MatrixFormat::MatrixMarket => {
            let mut entries = Vec::new();
            for j in 0..n {
                for i in j..n {
                    if m[(i, j)] != 0.0 {
                        entries.push((i + 1, j + 1, m[(i, j)]));
                    }
                }
            }
            out.push_str("%%MatrixMarket matrix coordinate real symmetric\n");
            out.push_str(&format!("{n} {n} {}\n", entries.len()));
            for (i, j, v) in entries {
                out.push_str(&format!("{i} {j} {v:.17e}\n"));
            }
        }
        MatrixFormat::DenseCsv => {
            for i in 0..n {
                let row: Vec<String> = (0..n).map(|j| format!("{:.17e}", m[(i, j)])).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Sidecar metadata stored next to a matrix file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceSidecar {
    pub s: usize,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub label: String,
}

/// Structured result report written by the CLI and the solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub problem: String,
    pub bound: String,
    pub value: f64,
    pub x: Vec<f64>,
    pub duals: std::collections::BTreeMap<String, Vec<f64>>,
    pub iterations: usize,
    pub wall_time_ms: f64,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<Vec<usize>>,
}

impl Report {
    pub fn from_bound(problem: impl Into<String>, r: &BoundResult, wall_time_ms: f64) -> Self {
        Report {
            problem: problem.into(),
            bound: r.name.clone(),
            value: r.value,
            x: r.x.clone(),
            duals: r.duals.clone(),
            iterations: r.iterations,
            wall_time_ms,
            flags: r.flags.clone(),
            subset: None,
        }
    }
}

pub fn write_report(report: &Report, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(path, text)?;
    Ok(())
}
