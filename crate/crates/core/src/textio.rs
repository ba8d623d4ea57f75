//! Line-oriented text helpers for the model and data file formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Shortest decimal representation that parses back to the identical `f64`
/// (never more than 17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("`{tok}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("`{tok}` is not finite")));
    }
    Ok(v)
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn push_row<'a>(out: &mut String, values: impl IntoIterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
}

pub fn push_matrix_rows(out: &mut String, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        push_row(out, row.iter());
    }
}

pub fn push_scalar(out: &mut String, v: f64) {
    let _ = writeln!(out, "{}", fmt_f64(v));
}

/// Cursor over the non-empty lines of a model file, tracking 1-based line numbers.
pub struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    pub fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty()),
        );
        Lines {
            inner: it.peekable(),
            last: 0,
        }
    }

    pub fn next_line(&mut self) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((n, l)) => {
                self.last = n;
                Ok((n, l))
            }
            None => Err(Error::parse(self.last + 1, "unexpected end of file")),
        }
    }

    pub fn header(&mut self, tag: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self.next_line()?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some(tag) {
            return Err(Error::parse(n, format!("expected `{tag}` header")));
        }
        Ok((n, toks.collect()))
    }

    pub fn row(&mut self, len: usize) -> Result<Vec<f64>> {
        let (n, line) = self.next_line()?;
        let vals = line
            .split_whitespace()
            .map(|t| parse_f64(t, n))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != len {
            return Err(Error::parse(
                n,
                format!("expected {len} values, found {}", vals.len()),
            ));
        }
        Ok(vals)
    }

    pub fn vector(&mut self, len: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.row(len)?))
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.row(cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    pub fn scalar(&mut self) -> Result<f64> {
        Ok(self.row(1)?[0])
    }

    pub fn finish(mut self) -> Result<()> {
        match self.inner.next() {
            Some((n, _)) => Err(Error::parse(n, "trailing content")),
            None => Ok(()),
        }
    }
}

pub fn parse_usize(tok: Option<&&str>, line: usize, what: &str) -> Result<usize> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse(line, format!("missing or invalid {what}")))
}
