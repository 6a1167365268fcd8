//! CSV input: one observation per row, an optional header.

use std::fs;
use std::path::Path;

use fidcov::ObservationSet;
use nalgebra::DMatrix;

use crate::error::{CliError, Result};

/// A parsed numeric table with its source line numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct NumericTable {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn ncols(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.ncols(), |i, j| self.rows[i][j])
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses CSV text. The first row is a header when none of its cells is a number.
pub fn parse_table(text: &str, path: &Path) -> Result<NumericTable> {
    let input_err = |line: u64, message: String| CliError::Input {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        let parsed: Vec<Option<f64>> = record.iter().map(parse_cell).collect();
        if k == 0 && parsed.iter().all(Option::is_none) {
            header = Some(record.iter().map(str::to_string).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        if let Some(w) = width {
            if record.len() != w {
                return Err(input_err(line, format!("expected {w} fields, found {}", record.len())));
            }
        } else {
            width = Some(record.len());
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (j, (value, cell)) in parsed.into_iter().zip(record.iter()).enumerate() {
            match value {
                Some(v) => row.push(v),
                None => {
                    return Err(input_err(line, format!("column {}: `{cell}` is not a finite number", j + 1)));
                }
            }
        }
        rows.push(row);
    }
    let data_err = |message: &str| CliError::Data {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if header.is_none() && rows.is_empty() {
        return Err(data_err("file is empty"));
    }
    if rows.is_empty() {
        return Err(data_err("no observations after the header"));
    }
    if width == Some(0) {
        return Err(data_err("no columns"));
    }
    Ok(NumericTable { header, rows })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Reads observations; all-zero columns are rejected.
pub fn ingest_csv(path: &Path) -> Result<ObservationSet<f64>> {
    let table = parse_table(&read_text(path)?, path)?;
    let obs = ObservationSet::new(table.to_matrix())?;
    if let Some(&j) = obs.zero_variance_coordinates().first() {
        return Err(CliError::Data {
            path: path.to_path_buf(),
            message: format!("column {} is identically zero", j + 1),
        });
    }
    Ok(obs)
}

/// Reads a square matrix such as a true covariance or covariate matrix.
pub fn read_square_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let table = parse_table(&read_text(path)?, path)?;
    if table.rows.len() != table.ncols() {
        return Err(CliError::Data {
            path: path.to_path_buf(),
            message: format!("expected a square matrix, found {}x{}", table.rows.len(), table.ncols()),
        });
    }
    Ok(table.to_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<NumericTable> {
        parse_table(text, Path::new("t.csv"))
    }

    #[test]
    fn plain_rows() {
        let t = parse("1,0\n0,1\n").unwrap();
        assert_eq!(t.rows, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(t.header.is_none());
    }

    #[test]
    fn header_detected() {
        let t = parse("x,y\n1, 2\n").unwrap();
        assert_eq!(t.header.unwrap(), vec!["x", "y"]);
        assert_eq!(t.rows, vec![vec![1.0, 2.0]]);
    }

    #[test]
    fn line_numbers_in_errors() {
        let e = parse("1,2\n3,4\n5\n").unwrap_err();
        assert!(matches!(e, CliError::Input { line: 3, .. }), "{e}");
        let e = parse("a,b\n1,2\n3,oops\n").unwrap_err();
        assert!(matches!(e, CliError::Input { line: 3, .. }), "{e}");
        assert!(e.to_string().contains("oops"));
        let e = parse("1,x\n").unwrap_err();
        assert!(matches!(e, CliError::Input { line: 1, .. }));
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(parse(""), Err(CliError::Data { .. })));
        assert!(matches!(parse("a,b\n"), Err(CliError::Data { .. })));
    }
}
