//! On-disk formats.
//!
//! Matrices: 4-byte magic, rows and cols as little-endian `u64`, then
//! `rows × cols` little-endian `f64` in row-major order.
//! Labels: one decimal class index per line.
//! Splits: `source:`, `target:` and (when nonempty) `val:` sections, each
//! followed by comma-separated class indices.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Splits, TestSet};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"TCNF";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub features: PathBuf,
    pub semantics: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

impl DatasetPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            features: dir.join("features.bin"),
            semantics: dir.join("semantics.bin"),
            labels: dir.join("labels.txt"),
            splits: dir.join("splits.txt"),
        }
    }
}

pub fn encode_matrix(magic: &[u8; 4], m: &Matrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(20 + 8 * m.data().len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub(crate) fn read_u64(bytes: &[u8], pos: &mut usize, what: &'static str) -> Result<u64> {
    let end = *pos + 8;
    let chunk = bytes
        .get(*pos..end)
        .ok_or_else(|| Error::format(what, "truncated header"))?;
    *pos = end;
    Ok(u64::from_le_bytes(chunk.try_into().unwrap()))
}

/// Decodes `rows × cols` f64 values at `pos`, advancing it.
pub(crate) fn decode_payload(
    bytes: &[u8],
    pos: &mut usize,
    rows: usize,
    cols: usize,
    what: &'static str,
) -> Result<Matrix> {
    let n = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format(what, "dimensions overflow"))?;
    let payload = bytes
        .get(*pos..*pos + n)
        .ok_or_else(|| Error::format(what, format!("expected {n} payload bytes")))?;
    *pos += n;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, data)
}

pub fn decode_matrix(magic: &[u8; 4], bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::format(
            "matrix file",
            format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 4;
    let rows = read_u64(bytes, &mut pos, "matrix file")? as usize;
    let cols = read_u64(bytes, &mut pos, "matrix file")? as usize;
    let m = decode_payload(bytes, &mut pos, rows, cols, "matrix file")?;
    if pos != bytes.len() {
        return Err(Error::format("matrix file", "trailing bytes"));
    }
    Ok(m)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix(FEATURE_MAGIC, m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(FEATURE_MAGIC, &bytes)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::format("labels", format!("line {}: {:?}", i + 1, l)))
        })
        .collect()
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

pub fn format_splits(s: &Splits) -> String {
    let mut out = format!("source: {}\ntarget: {}\n", join_ids(&s.source), join_ids(&s.target));
    if !s.val.is_empty() {
        out.push_str(&format!("val: {}\n", join_ids(&s.val)));
    }
    out
}

pub fn parse_splits(text: &str) -> Result<Splits> {
    #[derive(Clone, Copy)]
    enum Section {
        Source,
        Target,
        Val,
    }
    let mut splits = Splits::default();
    let mut seen = [false; 3];
    let mut current: Option<Section> = None;
    for (lineno, line) in text.lines().enumerate() {
        let mut rest = line.trim();
        for (name, section, slot) in [
            ("source:", Section::Source, 0),
            ("target:", Section::Target, 1),
            ("val:", Section::Val, 2),
        ] {
            if let Some(r) = rest.strip_prefix(name) {
                if seen[slot] {
                    return Err(Error::format("splits", format!("duplicate section {name}")));
                }
                seen[slot] = true;
                current = Some(section);
                rest = r;
                break;
            }
        }
        for tok in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let id: usize = tok
                .parse()
                .map_err(|_| Error::format("splits", format!("line {}: bad id {tok:?}", lineno + 1)))?;
            match current {
                Some(Section::Source) => splits.source.push(id),
                Some(Section::Target) => splits.target.push(id),
                Some(Section::Val) => splits.val.push(id),
                None => {
                    return Err(Error::format(
                        "splits",
                        format!("line {}: ids before any section header", lineno + 1),
                    ))
                }
            }
        }
    }
    if !seen[0] || !seen[1] {
        return Err(Error::format("splits", "missing source: or target: section"));
    }
    Ok(splits)
}

pub fn write_splits(path: impl AsRef<Path>, s: &Splits) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_splits(s)).map_err(|e| Error::io(path, e))
}

pub fn read_splits(path: impl AsRef<Path>) -> Result<Splits> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_splits(&text)
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let features = read_matrix(&paths.features)?;
    let semantics = read_matrix(&paths.semantics)?;
    let labels = read_labels(&paths.labels)?;
    let splits = read_splits(&paths.splits)?;
    Dataset::new(features, labels, semantics, splits)
}

/// Writes the four dataset files into `dir`, returning their paths.
pub fn save_dataset(d: &Dataset, dir: impl AsRef<Path>) -> Result<DatasetPaths> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths::in_dir(dir);
    write_matrix(&paths.features, d.features())?;
    write_matrix(&paths.semantics, d.semantics())?;
    write_labels(&paths.labels, d.labels())?;
    write_splits(&paths.splits, d.splits())?;
    Ok(paths)
}

pub fn load_test_set(features: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<TestSet> {
    TestSet::new(read_matrix(features)?, read_labels(labels)?)
}

pub fn save_test_set(t: &TestSet, features: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    write_matrix(features, &t.features)?;
    write_labels(labels, &t.labels)
}
