//! CSV sample files: header `x1,...,xd`, one observation per row.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Round-trip safe text form with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_csv(text: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(Error::Empty("csv header"))?;
    let d = header.split(',').count();
    let mut values = Vec::new();
    let mut n = 0;
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d {
            return Err(Error::Parse(format!(
                "row {} has {} fields, header has {d}",
                lineno + 2,
                fields.len()
            )));
        }
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: cannot parse '{f}'", lineno + 2)))?;
            values.push(v);
        }
        n += 1;
    }
    Array2::from_shape_vec((n, d), values).map_err(|e| Error::Parse(e.to_string()))
}

/// Rows with a non-finite entry are dropped.
pub fn read_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    let raw = parse_csv(&text)?;
    let keep: Vec<usize> = (0..raw.nrows())
        .filter(|&i| raw.row(i).iter().all(|x| x.is_finite()))
        .collect();
    if keep.len() < raw.nrows() {
        log::warn!("dropped {} rows with non-finite entries", raw.nrows() - keep.len());
    }
    Ok(raw.select(ndarray::Axis(0), &keep))
}

pub fn to_csv(data: ArrayView2<'_, f64>, integer: bool) -> String {
    let d = data.ncols();
    let mut out = String::new();
    let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in data.rows() {
        for (j, &x) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            if integer {
                let _ = write!(out, "{}", x as i64);
            } else {
                out.push_str(&fmt_f64(x));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, data: ArrayView2<'_, f64>, integer: bool) -> Result<()> {
    std::fs::write(path, to_csv(data, integer))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip() {
        let a = array![[0.1, -2.5e-7], [3.0, 1.0 / 3.0]];
        let back = parse_csv(&to_csv(a.view(), false)).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn integer_output() {
        let a = array![[1.0, 2.0], [3.0, 0.0]];
        assert_eq!(to_csv(a.view(), true), "x1,x2\n1,2\n3,0\n");
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(parse_csv("x1,x2\n1,2\n3\n").is_err());
    }
}
