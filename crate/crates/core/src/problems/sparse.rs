//! Reader and writer for the `label idx:val idx:val ...` sparse text format.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{invalid, Error, Result};

/// One labelled example. Feature indices are 1-based and strictly
/// increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub label: f64,
    pub features: Vec<(u32, f64)>,
}

impl SparseRow {
    /// `Σ w[idx − 1] · val`.
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.features.iter().map(|&(i, v)| w[i as usize - 1] * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseDataset {
    pub rows: Vec<SparseRow>,
    pub n_features: usize,
}

impl SparseDataset {
    pub fn new(rows: Vec<SparseRow>, n_features: usize) -> Result<Self> {
        let max = max_index(&rows);
        if n_features < max {
            return Err(invalid(format!("n_features {n_features} below largest index {max}")));
        }
        for (k, r) in rows.iter().enumerate() {
            if r.label != 1.0 && r.label != -1.0 {
                return Err(invalid(format!("row {k} has label {}, expected ±1", r.label)));
            }
            if r.features.windows(2).any(|w| w[0].0 >= w[1].0) || r.features.first().is_some_and(|f| f.0 == 0) {
                return Err(invalid(format!("row {k} has invalid feature indices")));
            }
        }
        Ok(Self { rows, n_features })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Same rows with a wider feature space, e.g. to align train and test.
    pub fn with_n_features(mut self, n_features: usize) -> Result<Self> {
        let max = max_index(&self.rows);
        if n_features < max {
            return Err(invalid(format!("n_features {n_features} below largest index {max}")));
        }
        self.n_features = n_features;
        Ok(self)
    }

    /// Rows at the given positions, in order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            n_features: self.n_features,
        }
    }
}

fn max_index(rows: &[SparseRow]) -> usize {
    rows.iter()
        .filter_map(|r| r.features.last())
        .map(|&(i, _)| i as usize)
        .max()
        .unwrap_or(0)
}

fn parse_label(tok: &str) -> Option<f64> {
    let v: f64 = tok.parse().ok()?;
    if v == 1.0 {
        Some(1.0)
    } else if v == -1.0 || v == 0.0 {
        Some(-1.0)
    } else {
        None
    }
}

/// Parses sparse text. Blank lines are skipped; labels `0` map to `−1`.
pub fn parse_sparse_text(text: &str) -> Result<SparseDataset> {
    let mut rows = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let label_tok = toks.next().expect("non-empty line has a token");
        let label = parse_label(label_tok).ok_or_else(|| err(format!("bad label '{label_tok}'")))?;
        let mut features: Vec<(u32, f64)> = Vec::new();
        for tok in toks {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("malformed pair '{tok}'")))?;
            let idx: u32 = i.parse().map_err(|_| err(format!("bad index '{i}'")))?;
            let val: f64 = v.parse().map_err(|_| err(format!("bad value '{v}'")))?;
            if idx == 0 {
                return Err(err("indices are 1-based".into()));
            }
            if !val.is_finite() {
                return Err(err(format!("non-finite value '{v}'")));
            }
            if features.last().is_some_and(|&(p, _)| p >= idx) {
                return Err(err(format!("index {idx} not increasing")));
            }
            features.push((idx, val));
        }
        rows.push(SparseRow { label, features });
    }
    let n_features = max_index(&rows);
    Ok(SparseDataset { rows, n_features })
}

/// Inverse of [`parse_sparse_text`]; values use the shortest round-trip
/// representation.
pub fn serialize_sparse_text(ds: &SparseDataset) -> String {
    let mut out = String::new();
    for r in &ds.rows {
        out.push_str(if r.label > 0.0 { "+1" } else { "-1" });
        for &(i, v) in &r.features {
            write!(out, " {i}:{v}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Reads a dataset file, decompressing when the name ends in `.gz`.
pub fn read_sparse_file(path: impl AsRef<Path>) -> Result<SparseDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut text = String::new();
    if is_gzip(path) {
        GzDecoder::new(BufReader::new(file)).read_to_string(&mut text)?;
    } else {
        BufReader::new(file).read_to_string(&mut text)?;
    }
    parse_sparse_text(&text)
}

pub fn write_sparse_file(path: impl AsRef<Path>, ds: &SparseDataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let text = serialize_sparse_text(ds);
    if is_gzip(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(text.as_bytes())?;
        enc.finish()?.flush()?;
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(text.as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows() {
        let ds = parse_sparse_text("+1 3:0.5 7:1\n-1 1:2").unwrap();
        assert_eq!(ds.n_rows(), 2);
        assert_eq!(ds.n_features, 7);
        assert_eq!(ds.rows[0].features, vec![(3, 0.5), (7, 1.0)]);
        assert_eq!(ds.rows[1].label, -1.0);
    }

    #[test]
    fn empty_input() {
        let ds = parse_sparse_text("").unwrap();
        assert_eq!(ds.n_rows(), 0);
        assert_eq!(ds.n_features, 0);
    }

    #[test]
    fn zero_one_labels() {
        let ds = parse_sparse_text("0 1:1\n1 2:1\n").unwrap();
        assert_eq!(ds.rows[0].label, -1.0);
        assert_eq!(ds.rows[1].label, 1.0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("+1 1:1\n\n-1 2-3\n", 3),
            ("+1 3:1 2:1\n", 1),
            ("+1 1:1\n2 1:1\n", 2),
            ("+1 0:1\n", 1),
            ("+1 1:x\n", 1),
        ];
        for (text, line) in cases {
            match parse_sparse_text(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn gzip_round_trip() {
        let dir = std::env::temp_dir().join(format!("svrb-sparse-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ds = parse_sparse_text("+1 3:0.5 7:1\n-1 1:2\n").unwrap();
        for name in ["a.txt", "a.txt.gz"] {
            let p = dir.join(name);
            write_sparse_file(&p, &ds).unwrap();
            assert_eq!(read_sparse_file(&p).unwrap(), ds);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_sparse_file("/nonexistent/x.txt"), Err(Error::Io(_))));
    }
}
