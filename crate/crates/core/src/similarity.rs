//! Source-to-target class similarities from ridge reconstruction.
//!
//! Each source semantic is reconstructed from the target semantics; the
//! coefficients, clamped at zero and normalized to sum to one, become the
//! soft targets of the transfer loss.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{ridge_solve, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    /// `K × L`, rows aligned with `source_order`, columns with `target_order`.
    pub values: Matrix,
    pub source_order: Vec<usize>,
    pub target_order: Vec<usize>,
}

impl SimilarityMatrix {
    /// Row for a global source class id.
    pub fn row_for(&self, class: usize) -> Option<&[f64]> {
        self.source_order
            .iter()
            .position(|&c| c == class)
            .map(|i| self.values.row(i))
    }
}

pub fn class_similarity(
    semantics: &Matrix,
    source_classes: &[usize],
    target_classes: &[usize],
    beta: f64,
) -> Result<SimilarityMatrix> {
    if source_classes.is_empty() || target_classes.is_empty() {
        return Err(Error::Invalid("similarity needs nonempty source and target lists".into()));
    }
    if let Some(&c) = source_classes
        .iter()
        .chain(target_classes)
        .find(|&&c| c >= semantics.rows())
    {
        return Err(Error::UnknownClass(c));
    }
    // Design matrix: one column per target semantic.
    let design = semantics.select_rows(target_classes).transpose();
    let l = target_classes.len();
    let mut values = Matrix::zeros(source_classes.len(), l);
    for (row, &k) in source_classes.iter().enumerate() {
        let b = Matrix::column(semantics.row(k))?;
        let coeffs = ridge_solve(&design, &b, beta)?;
        let clamped: Vec<f64> = coeffs.data().iter().map(|&v| v.max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        let out = values.row_mut(row);
        if total > 0.0 && total.is_finite() {
            for (o, c) in out.iter_mut().zip(&clamped) {
                *o = c / total;
            }
        } else {
            out.fill(1.0 / l as f64);
        }
    }
    Ok(SimilarityMatrix {
        values,
        source_order: source_classes.to_vec(),
        target_order: target_classes.to_vec(),
    })
}

/// CSV: header `source,<target ids...>`, then one row per source class.
pub fn similarity_csv(s: &SimilarityMatrix) -> String {
    let mut out = String::from("source");
    for t in &s.target_order {
        out.push_str(&format!(",{t}"));
    }
    out.push('\n');
    for (i, src) in s.source_order.iter().enumerate() {
        out.push_str(&src.to_string());
        for v in s.values.row(i) {
            // `{:?}` prints the shortest representation that round-trips exactly.
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn export_similarity(s: &SimilarityMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, similarity_csv(s)).map_err(|e| Error::io(path, e))
}

pub fn parse_similarity_csv(text: &str) -> Result<SimilarityMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::format("similarity csv", "empty"))?;
    let mut cols = header.split(',');
    if cols.next().map(str::trim) != Some("source") {
        return Err(Error::format("similarity csv", "header must start with 'source'"));
    }
    let parse_id = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| Error::format("similarity csv", format!("bad class id {t:?}")))
    };
    let target_order = cols.map(parse_id).collect::<Result<Vec<_>>>()?;
    let mut source_order = Vec::new();
    let mut data = Vec::new();
    for line in lines {
        let mut cells = line.split(',');
        source_order.push(parse_id(cells.next().unwrap_or(""))?);
        let row = cells
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format("similarity csv", format!("bad value {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != target_order.len() {
            return Err(Error::format("similarity csv", "ragged row"));
        }
        data.extend(row);
    }
    Ok(SimilarityMatrix {
        values: Matrix::new(source_order.len(), target_order.len(), data)?,
        source_order,
        target_order,
    })
}
