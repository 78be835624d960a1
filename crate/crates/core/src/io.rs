//! CSV helpers shared by the serializable types.

use std::io::BufRead;

use crate::error::{Error, Result};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Reads numeric CSV rows after checking the header. Lines starting with
/// `#` are comments.
pub fn read_csv_rows<R: BufRead>(input: R, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut lines = input
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.starts_with('#') || s.trim().is_empty()));
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Parse("missing CSV header".into()))?;
    let first = first?;
    let got: Vec<&str> = first.split(',').map(str::trim).collect();
    if got != header {
        return Err(Error::Parse(format!(
            "expected header {:?}, found {:?}",
            header.join(","),
            first
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("line {}: {:?}: {e}", lineno + 1, f.trim()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, found {}",
                lineno + 1,
                header.len(),
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}
