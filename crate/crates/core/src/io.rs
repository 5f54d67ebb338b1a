//! Header-less numeric CSV used for matrices, feature files and fixtures.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{NelaError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

fn load_err(path: &Path, message: String) -> NelaError {
    NelaError::Load {
        path: path.to_path_buf(),
        message,
    }
}

/// Reads a rectangular matrix, one CSV record per row.
pub fn read_matrix_csv<T: Scalar>(path: &Path) -> Result<Matrix<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(path, e.to_string()))?;
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| load_err(path, format!("row {i}: {e}")))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field
                    .parse::<f64>()
                    .map(T::of)
                    .map_err(|_| load_err(path, format!("row {i}, column {j}: cannot parse {field:?}")))
            })
            .collect::<Result<Vec<T>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(load_err(
                    path,
                    format!("row {i} has {} fields, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(load_err(path, "empty matrix".into()));
    }
    Ok(Matrix::from_rows(&rows))
}

pub fn write_matrix_csv<T: Scalar>(path: &Path, m: &Matrix<T>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `i,j` pairs, one per line. Blank lines are skipped.
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        match parsed {
            Some(edge) => edges.push(edge),
            None => return Err(load_err(path, format!("line {}: expected `i,j`", line_no + 1))),
        }
    }
    Ok(edges)
}
