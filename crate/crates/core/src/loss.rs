//! Discriminative and transfer losses.
//!
//! Both are binary cross-entropy between contrastive values and targets in
//! `[0, 1]`: one-hot class indicators over the source classes, and
//! similarity rows over the target classes. Everything is computed from
//! logits via `softplus(x) − t·x`.

use crate::data::Reduction;
use crate::error::{Error, Result};
use crate::linalg::{sigmoid_scalar, softplus, Matrix};
use crate::similarity::SimilarityMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_d: f64,
    pub l_t: f64,
    /// `l_d + alpha · l_t`
    pub total: f64,
    pub alpha: f64,
}

/// One-hot rows over `source_classes`.
pub fn indicator_targets(labels: &[usize], source_classes: &[usize]) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), source_classes.len());
    for (i, &y) in labels.iter().enumerate() {
        let j = source_classes
            .iter()
            .position(|&c| c == y)
            .ok_or(Error::NonSourceLabel { row: i, class: y })?;
        m.set(i, j, 1.0);
    }
    Ok(m)
}

/// Row `i` is the similarity row of class `labels[i]`.
pub fn transfer_targets(labels: &[usize], sim: &SimilarityMatrix) -> Result<Matrix> {
    let l = sim.values.cols();
    let mut data = Vec::with_capacity(labels.len() * l);
    for &y in labels {
        data.extend_from_slice(sim.row_for(y).ok_or(Error::UnknownClass(y))?);
    }
    Matrix::new(labels.len(), l, data)
}

fn check_targets(targets: &Matrix) -> Result<()> {
    if targets.data().iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::Invalid("loss targets must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Binary cross-entropy on logits with soft targets.
///
/// Sums over columns; rows are averaged (`Mean`) or summed (`Sum`). Returns
/// the loss and `dL/dlogit = (σ(x) − t) / B` (or without the `1/B` for `Sum`).
pub fn bce_soft(logits: &Matrix, targets: &Matrix, reduction: Reduction) -> Result<(f64, Matrix)> {
    if logits.shape() != targets.shape() {
        return Err(Error::Shape {
            op: "bce_soft",
            left: logits.shape(),
            right: targets.shape(),
        });
    }
    check_targets(targets)?;
    let scale = match reduction {
        Reduction::Mean if logits.rows() > 0 => 1.0 / logits.rows() as f64,
        _ => 1.0,
    };
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.data().len());
    for (&x, &t) in logits.data().iter().zip(targets.data()) {
        loss += softplus(x) - t * x;
        grad.push((sigmoid_scalar(x) - t) * scale);
    }
    Ok((loss * scale, Matrix::new(logits.rows(), logits.cols(), grad)?))
}

/// Cross-entropy from probabilities, clamped to `[eps, 1 − eps]`.
/// For callers that only hold contrastive values, not logits.
pub fn bce_soft_probs(probs: &Matrix, targets: &Matrix, clamp_eps: f64, reduction: Reduction) -> Result<f64> {
    if probs.shape() != targets.shape() {
        return Err(Error::Shape {
            op: "bce_soft_probs",
            left: probs.shape(),
            right: targets.shape(),
        });
    }
    if !(clamp_eps > 0.0 && clamp_eps < 0.5) {
        return Err(Error::Invalid(format!("clamp_eps must be in (0, 0.5), got {clamp_eps}")));
    }
    check_targets(targets)?;
    let total: f64 = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&v, &t)| {
            let v = v.clamp(clamp_eps, 1.0 - clamp_eps);
            -(t * v.ln() + (1.0 - t) * (1.0 - v).ln())
        })
        .sum();
    Ok(match reduction {
        Reduction::Mean if probs.rows() > 0 => total / probs.rows() as f64,
        _ => total,
    })
}

/// `L = L_D + α·L_T`. The returned gradient is `B × (K + L)`: the source
/// block followed by the target block (already scaled by `α`).
pub fn combined_loss(
    logits_src: &Matrix,
    logits_tgt: &Matrix,
    indicators: &Matrix,
    similarities: &Matrix,
    alpha: f64,
    reduction: Reduction,
) -> Result<(LossBreakdown, Matrix)> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let (l_d, g_src) = bce_soft(logits_src, indicators, reduction)?;
    let (l_t, g_tgt) = bce_soft(logits_tgt, similarities, reduction)?;
    let grad = g_src.hstack(&g_tgt.scale(alpha))?;
    let breakdown = LossBreakdown {
        l_d,
        l_t,
        total: l_d + alpha * l_t,
        alpha,
    };
    Ok((breakdown, grad))
}
