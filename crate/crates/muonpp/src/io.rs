//! File helpers: atomic text writes and MAT1 fixture I/O.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use std::fs;
use std::path::Path;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes via a temporary sibling file plus rename, so no output file is
/// ever observed partially written.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn read_mat1_file(path: &Path) -> Result<Matrix> {
    let text = read_to_string(path)?;
    Matrix::from_mat1(&text).map_err(|e| Error::ParseFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn write_mat1_file(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, &m.to_mat1())
}

/// Compact deterministic float formatting for CSV and stdout: integral
/// values print without a fractional part, everything else uses the shortest
/// round-trip representation.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() && x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}
