//! Central finite-difference check of the full loss ∘ network gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Reduction;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::loss::{combined_loss, indicator_targets, transfer_targets};
use crate::network::{contrast_backward_logits, contrast_forward, init_params, ParamTensors, TcnParams};
use crate::similarity::{class_similarity, SimilarityMatrix};

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so gradients that are zero up to
/// rounding do not blow up the ratio.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// A tiny random problem: network, batch, and loss targets.
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub params: TcnParams,
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Semantic rows, sources first then targets.
    pub semantics: Matrix,
    pub num_source: usize,
    pub similarity: SimilarityMatrix,
    pub alpha: f64,
}

impl GradCheckCase {
    /// Sizes drawn within `d_a ≤ 8, d_f ≤ 12, H ≤ 6, B ≤ 4, K ≤ 5, L ≤ 3`.
    pub fn random(seed: u64, alpha: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let da = rng.random_range(2..=8);
        let df = rng.random_range(2..=12);
        let hg = rng.random_range(2..=6);
        let hh = rng.random_range(2..=6);
        let b = rng.random_range(1..=4);
        let k = rng.random_range(2..=5);
        let l = rng.random_range(1..=3);
        let mut params = init_params(da, df, hg, hh, 0.01, rng.random())?;
        // Nonzero biases so their gradients are exercised away from init.
        for bias in [
            &mut params.tensors.g_b1,
            &mut params.tensors.g_b2,
            &mut params.tensors.h_b1,
            &mut params.tensors.h_b2,
        ] {
            bias.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let features = Matrix::from_fn(b, df, |_, _| rng.random_range(-1.0..1.0));
        let semantics = Matrix::from_fn(k + l, da, |_, _| rng.random_range(-1.0..1.0));
        let labels = (0..b).map(|_| rng.random_range(0..k)).collect();
        let source: Vec<usize> = (0..k).collect();
        let target: Vec<usize> = (k..k + l).collect();
        let similarity = class_similarity(&semantics, &source, &target, 1e-3)?;
        Ok(Self {
            params,
            features,
            labels,
            semantics,
            num_source: k,
            similarity,
            alpha,
        })
    }

    fn source(&self) -> Vec<usize> {
        (0..self.num_source).collect()
    }

    /// Total loss and its analytic gradient at `params`.
    pub fn loss_and_grad(&self, params: &TcnParams) -> Result<(f64, ParamTensors)> {
        let (_, trace) = contrast_forward(params, &self.features, &self.semantics)?;
        let k = self.num_source;
        let src: Vec<usize> = (0..k).collect();
        let tgt: Vec<usize> = (k..self.semantics.rows()).collect();
        let m = indicator_targets(&self.labels, &self.source())?;
        let s = transfer_targets(&self.labels, &self.similarity)?;
        let (loss, d_logits) = combined_loss(
            &trace.logits.select_cols(&src),
            &trace.logits.select_cols(&tgt),
            &m,
            &s,
            self.alpha,
            Reduction::Mean,
        )?;
        let grads = contrast_backward_logits(params, &trace, &d_logits)?;
        Ok((loss.total, grads))
    }

    pub fn loss(&self, params: &TcnParams) -> Result<f64> {
        Ok(self.loss_and_grad(params)?.0)
    }

    /// Maximum relative error over every parameter entry, with the tensor name and index.
    pub fn max_relative_error(&self) -> Result<(f64, &'static str, usize)> {
        let (_, analytic) = self.loss_and_grad(&self.params)?;
        let mut worst = (0.0, ParamTensors::NAMES[0], 0);
        for (t, name) in ParamTensors::NAMES.iter().enumerate() {
            let len = self.params.tensors.iter()[t].data().len();
            for idx in 0..len {
                let mut plus = self.params.clone();
                plus.tensors.iter_mut()[t].data_mut()[idx] += FD_STEP;
                let mut minus = self.params.clone();
                minus.tensors.iter_mut()[t].data_mut()[idx] -= FD_STEP;
                let numeric = (self.loss(&plus)? - self.loss(&minus)?) / (2.0 * FD_STEP);
                let err = relative_error(analytic.iter()[t].data()[idx], numeric);
                if err > worst.0 {
                    worst = (err, name, idx);
                }
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckSummary {
    pub cases: usize,
    pub max_rel_err: f64,
    pub worst_case_seed: u64,
    pub worst_tensor: &'static str,
}

/// Runs `cases` random problems for each of α = 0 and α = 0.1.
pub fn gradcheck_suite(seed: u64, cases: usize) -> Result<GradCheckSummary> {
    let mut summary = GradCheckSummary {
        cases: 0,
        max_rel_err: 0.0,
        worst_case_seed: seed,
        worst_tensor: ParamTensors::NAMES[0],
    };
    for i in 0..cases as u64 {
        let case_seed = seed.wrapping_mul(1_000_003).wrapping_add(i);
        for alpha in [0.0, 0.1] {
            let (err, tensor, _) = GradCheckCase::random(case_seed, alpha)?.max_relative_error()?;
            summary.cases += 1;
            if err > summary.max_rel_err {
                summary.max_rel_err = err;
                summary.worst_case_seed = case_seed;
                summary.worst_tensor = tensor;
            }
        }
    }
    Ok(summary)
}
