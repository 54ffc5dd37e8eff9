//! ZSL / GZSL recognition and per-class accuracy metrics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TestSet};
use crate::error::{Error, Result};
use crate::linalg::{sigmoid_scalar, Matrix};
use crate::network::{contrast_logits, TcnParams};

/// All values are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GzslMetrics {
    /// Per-class top-1 over target classes, searching all classes.
    pub ts: f64,
    /// Per-class top-1 over source classes, searching all classes.
    pub tr: f64,
    pub h: f64,
    /// Per-class top-1 over target classes, searching target classes only.
    pub zsl_acc: f64,
    /// GZSL accuracy of every class that has test rows.
    pub per_class: BTreeMap<usize, f64>,
}

impl GzslMetrics {
    /// Flat `key=value` report; `per_class` entries appear as `class.<id>=<acc>`.
    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "ts={}\ntr={}\nh={}\nzsl_acc={}\n",
            self.ts, self.tr, self.h, self.zsl_acc
        );
        for (c, acc) in &self.per_class {
            out.push_str(&format!("class.{c}={acc}\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("metrics json", e.to_string()))
    }
}

/// Row-wise argmax restricted to the candidate columns. Ties go to the
/// lowest column index.
pub fn predict(scores: &Matrix, candidate_classes: &[usize]) -> Result<Vec<usize>> {
    if candidate_classes.is_empty() {
        return Err(Error::Invalid("predict needs at least one candidate class".into()));
    }
    if let Some(&c) = candidate_classes.iter().find(|&&c| c >= scores.cols()) {
        return Err(Error::UnknownClass(c));
    }
    let mut candidates = candidate_classes.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    Ok((0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            let mut best = candidates[0];
            for &c in &candidates[1..] {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Per-class accuracy of each class in `class_set` that has at least one row.
pub fn per_class_accuracies(preds: &[usize], labels: &[usize], class_set: &[usize]) -> BTreeMap<usize, f64> {
    let mut counts: BTreeMap<usize, (usize, usize)> = class_set.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &y) in preds.iter().zip(labels) {
        if let Some((correct, total)) = counts.get_mut(&y) {
            *total += 1;
            if p == y {
                *correct += 1;
            }
        }
    }
    counts
        .into_iter()
        .filter(|(_, (_, total))| *total > 0)
        .map(|(c, (correct, total))| (c, 100.0 * correct as f64 / total as f64))
        .collect()
}

/// Mean over classes (not samples) of top-1 accuracy, in percent. Rows whose
/// label is outside `class_set` are ignored; classes without rows are skipped.
pub fn per_class_top1(preds: &[usize], labels: &[usize], class_set: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::LabelCount {
            features: preds.len(),
            labels: labels.len(),
        });
    }
    let accs = per_class_accuracies(preds, labels, class_set);
    if accs.is_empty() {
        return Err(Error::Invalid("no test rows for any class in the evaluated set".into()));
    }
    Ok(accs.values().sum::<f64>() / accs.len() as f64)
}

pub fn harmonic_mean(ts: f64, tr: f64) -> f64 {
    if ts + tr == 0.0 {
        0.0
    } else {
        2.0 * ts * tr / (ts + tr)
    }
}

/// Metrics from a precomputed score grid whose column `c` is global class `c`.
pub fn metrics_from_scores(
    scores: &Matrix,
    labels: &[usize],
    source_classes: &[usize],
    target_classes: &[usize],
) -> Result<GzslMetrics> {
    if scores.rows() == 0 {
        return Err(Error::Invalid("empty test set".into()));
    }
    if scores.rows() != labels.len() {
        return Err(Error::LabelCount {
            features: scores.rows(),
            labels: labels.len(),
        });
    }
    let all: Vec<usize> = source_classes.iter().chain(target_classes).copied().collect();
    let gzsl = predict(scores, &all)?;
    let zsl = predict(scores, target_classes)?;
    let ts = per_class_top1(&gzsl, labels, target_classes)?;
    let tr = per_class_top1(&gzsl, labels, source_classes)?;
    let zsl_acc = per_class_top1(&zsl, labels, target_classes)?;
    Ok(GzslMetrics {
        ts,
        tr,
        h: harmonic_mean(ts, tr),
        zsl_acc,
        per_class: per_class_accuracies(&gzsl, labels, &all),
    })
}

/// Scores the test set against every class once and computes ZSL and GZSL metrics.
///
/// Ranking uses logits; σ is strictly increasing, so predictions are those of
/// the contrastive values without ties introduced by saturation.
pub fn evaluate(params: &TcnParams, dataset: &Dataset, test: &TestSet) -> Result<GzslMetrics> {
    if test.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    if let Some(&c) = test.labels.iter().find(|&&c| c >= dataset.num_classes()) {
        return Err(Error::UnknownClass(c));
    }
    let logits = contrast_logits(params, &test.features, dataset.semantics())?;
    let splits = dataset.splits();
    metrics_from_scores(&logits, &test.labels, &splits.source, &splits.target)
}

/// CSV of contrastive values: header `label,<class ids>`, one row per image.
pub fn scores_csv(scores: &Matrix, labels: &[usize]) -> String {
    let mut out = String::from("label");
    for c in 0..scores.cols() {
        out.push_str(&format!(",{c}"));
    }
    out.push('\n');
    for (i, y) in labels.iter().enumerate() {
        out.push_str(&y.to_string());
        for v in scores.row(i) {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn export_scores(params: &TcnParams, dataset: &Dataset, test: &TestSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let v = contrast_logits(params, &test.features, dataset.semantics())?.map(sigmoid_scalar);
    fs::write(path, scores_csv(&v, &test.labels)).map_err(|e| Error::io(path, e))
}
