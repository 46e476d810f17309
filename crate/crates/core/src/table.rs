//! Whitespace-separated numeric tables (one matrix row per line).

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use nalgebra::DMatrix;

/// Values use Rust's shortest round-trip formatting, so reading back is exact.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                s.push(' ');
            }
            write!(s, "{}", m[(r, c)]).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> io::Result<()> {
    std::fs::write(path, format_matrix(m))
}

pub fn parse_matrix(text: &str) -> io::Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("line {} has {} columns, expected {}", i + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

pub fn read_matrix(path: impl AsRef<Path>) -> io::Result<DMatrix<f64>> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_roundtrip() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1e-300, 3.0, f64::MAX, 1.0 / 3.0, -0.0]);
        let back = parse_matrix(&format_matrix(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(parse_matrix("1 2\n3\n").is_err());
    }
}
