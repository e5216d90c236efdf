//! MTX1 matrix text format and small CSV helpers.
//!
//! MTX1: UTF-8 text, first line `rows cols`, then `rows` lines of `cols`
//! space-separated values written with 17 significant digits, which
//! round-trips every finite `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn format_mtx(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 25 + 16);
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:.16e}", m[(r, c)]);
        }
        out.push('\n');
    }
    out
}

pub fn parse_mtx(text: &str) -> Result<DMatrix<f64>> {
    let err = |message: String| Error::Parse {
        context: "MTX1".into(),
        message,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| err("missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| err(format!("bad header {header:?}: {e}"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(err(format!("header must be `rows cols`, got {header:?}")));
    };
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| err(format!("expected {rows} rows, found {r}")))?;
        let mut n = 0;
        for (c, tok) in line.split_whitespace().enumerate() {
            if c >= cols {
                return Err(err(format!("row {r} has more than {cols} values")));
            }
            m[(r, c)] = tok
                .parse()
                .map_err(|e| err(format!("row {r} col {c}: {tok:?}: {e}")))?;
            n += 1;
        }
        if n != cols {
            return Err(err(format!("row {r} has {n} values, expected {cols}")));
        }
    }
    if lines.next().is_some() {
        return Err(err(format!("trailing data after {rows} rows")));
    }
    Ok(m)
}

pub fn write_mtx(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_mtx(m)).map_err(|e| Error::io(path, e))
}

pub fn read_mtx(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mtx(&text)
}

/// Joins a header and pre-formatted rows into CSV text.
pub fn csv_text<I, S>(header: &str, rows: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(row.as_ref());
        out.push('\n');
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a two-column integer CSV such as `atom_index,count`.
pub fn parse_index_csv(text: &str, context: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |s: Option<&str>| -> Result<usize> {
            s.map(str::trim)
                .ok_or_else(|| Error::Parse {
                    context: context.into(),
                    message: format!("line {}: missing field", lineno + 1),
                })?
                .parse()
                .map_err(|e| Error::Parse {
                    context: context.into(),
                    message: format!("line {}: {e}", lineno + 1),
                })
        };
        let mut fields = line.split(',');
        out.push((parse(fields.next())?, parse(fields.next())?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_matrix_text() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.0, 3.25]);
        let s = format_mtx(&m);
        assert!(s.starts_with("2 2\n"));
        assert_eq!(s.lines().count(), 3);
        assert_eq!(parse_mtx(&s).unwrap(), m);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_mtx("").is_err());
        assert!(parse_mtx("2 2\n1 2\n").is_err());
        assert!(parse_mtx("1 2\n1 2 3\n").is_err());
        assert!(parse_mtx("1 1\nx\n").is_err());
        assert!(parse_mtx("1 1\n1\n2\n").is_err());
    }

    #[test]
    fn index_csv() {
        let v = parse_index_csv("atom_index,count\n0,5\n1,7\n", "usage").unwrap();
        assert_eq!(v, vec![(0, 5), (1, 7)]);
        assert!(parse_index_csv("h\n0\n", "usage").is_err());
    }

    proptest! {
        #[test]
        fn mtx_round_trip_is_exact(rows in 1usize..5, cols in 1usize..5,
                                   vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 25)) {
            let m = DMatrix::from_fn(rows, cols, |r, c| vals[r * 5 + c]);
            let back = parse_mtx(&format_mtx(&m)).unwrap();
            for (a, b) in m.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
