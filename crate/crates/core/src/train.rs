//! Seeded mini-batch training with Adam.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, TestSet, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, metrics_from_scores, GzslMetrics};
use crate::linalg::Matrix;
use crate::loss::{combined_loss, indicator_targets, transfer_targets, LossBreakdown};
use crate::network::{contrast_backward_logits, contrast_forward, contrast_logits, init_params, ParamTensors, TcnParams};
use crate::similarity::{class_similarity, SimilarityMatrix};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: ParamTensors,
    v: ParamTensors,
}

impl Adam {
    pub fn new(params: &ParamTensors, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamTensors, grads: &ParamTensors) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .into_iter()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_d: f64,
    pub l_t: f64,
    pub total: f64,
    /// Validation harmonic mean, when validation classes exist.
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub params: TcnParams,
    pub similarity: SimilarityMatrix,
    pub seconds: f64,
}

impl TrainReport {
    /// `epoch,l_d,l_t,total,val_metric`; the last column is empty without validation.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,l_d,l_t,total,val_metric\n");
        for r in &self.records {
            let val = r.val_metric.map_or_else(String::new, |v| format!("{v:?}"));
            out.push_str(&format!("{},{:?},{:?},{:?},{}\n", r.epoch, r.l_d, r.l_t, r.total, val));
        }
        out
    }
}

/// Which classes the loop trains on and how it validates.
struct Plan {
    /// Classes with labeled rows used by the discriminative loss.
    labeled: Vec<usize>,
    /// Classes reached only through the transfer loss.
    transfer: Vec<usize>,
    train_rows: Vec<usize>,
    validation: Option<Validation>,
}

struct Validation {
    features: Matrix,
    labels: Vec<usize>,
    pseudo_source: Vec<usize>,
    pseudo_target: Vec<usize>,
}

/// Validation classes become pseudo-targets: their rows are withheld from the
/// discriminative loss and they join the transfer classes. A seeded fraction
/// of the remaining source rows is held out to measure source accuracy.
fn plan(dataset: &Dataset, config: &TrainConfig) -> Result<Plan> {
    let splits = dataset.splits();
    if splits.val.is_empty() {
        return Ok(Plan {
            labeled: splits.source.clone(),
            transfer: splits.target.clone(),
            train_rows: (0..dataset.len()).collect(),
            validation: None,
        });
    }
    let labeled: Vec<usize> = splits
        .source
        .iter()
        .copied()
        .filter(|c| !splits.val.contains(c))
        .collect();
    if labeled.is_empty() {
        return Err(Error::Config("every source class is a validation class".into()));
    }
    let transfer: Vec<usize> = splits.val.iter().chain(&splits.target).copied().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut train_rows = Vec::new();
    let mut held_out = Vec::new();
    for &c in &labeled {
        let mut rows: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels()[i] == c).collect();
        rows.shuffle(&mut rng);
        let n_hold = if rows.len() >= 2 {
            ((rows.len() as f64 * config.val_holdout_fraction).ceil() as usize).clamp(1, rows.len() - 1)
        } else {
            0
        };
        held_out.extend_from_slice(&rows[..n_hold]);
        train_rows.extend_from_slice(&rows[n_hold..]);
    }
    train_rows.sort_unstable();
    held_out.extend((0..dataset.len()).filter(|&i| splits.val.contains(&dataset.labels()[i])));
    held_out.sort_unstable();
    if train_rows.is_empty() {
        return Err(Error::Config("no training rows left after validation hold-out".into()));
    }
    Ok(Plan {
        validation: Some(Validation {
            features: dataset.features().select_rows(&held_out),
            labels: held_out.iter().map(|&i| dataset.labels()[i]).collect(),
            pseudo_source: labeled.clone(),
            pseudo_target: splits.val.clone(),
        }),
        labeled,
        transfer,
        train_rows,
    })
}

fn validation_metric(params: &TcnParams, dataset: &Dataset, val: &Validation) -> Result<f64> {
    let logits = contrast_logits(params, &val.features, dataset.semantics())?;
    Ok(metrics_from_scores(&logits, &val.labels, &val.pseudo_source, &val.pseudo_target)?.h)
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }
    let started = Instant::now();
    let plan = plan(dataset, config)?;
    let similarity = class_similarity(dataset.semantics(), &plan.labeled, &plan.transfer, config.beta)?;

    let (hidden_g, hidden_h) = config.resolved_hidden(dataset.semantic_dim());
    let mut params = init_params(
        dataset.semantic_dim(),
        dataset.feature_dim(),
        hidden_g,
        hidden_h,
        config.leaky_slope,
        config.seed,
    )?;
    params.normalize_features = config.normalize_features;
    let mut adam = Adam::new(&params.tensors, config.learning_rate);

    let grid_classes: Vec<usize> = plan.labeled.iter().chain(&plan.transfer).copied().collect();
    let grid_semantics = dataset.semantics().select_rows(&grid_classes);
    let k = plan.labeled.len();
    let src_cols: Vec<usize> = (0..k).collect();
    let tgt_cols: Vec<usize> = (k..grid_classes.len()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order = plan.train_rows.clone();
    let n = order.len() as f64;

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, TcnParams)> = None;
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let features = dataset.features().select_rows(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.labels()[i]).collect();
            let (_, trace) = contrast_forward(&params, &features, &grid_semantics).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence {
                    epoch,
                    step,
                    detail: "non-finite activations in forward pass".into(),
                },
                other => other,
            })?;
            let indicators = indicator_targets(&labels, &plan.labeled)?;
            let soft = transfer_targets(&labels, &similarity)?;
            let (loss, d_logits) = combined_loss(
                &trace.logits.select_cols(&src_cols),
                &trace.logits.select_cols(&tgt_cols),
                &indicators,
                &soft,
                config.alpha,
                config.reduction,
            )?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: format!("loss is {}", loss.total),
                });
            }
            let grads = contrast_backward_logits(&params, &trace, &d_logits)?;
            adam.step(&mut params.tensors, &grads);
            if !params.tensors.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    detail: "non-finite parameters after update".into(),
                });
            }
            accumulate(&mut sums, &loss, batch.len(), config);
        }
        let val_metric = match &plan.validation {
            Some(v) => Some(validation_metric(&params, dataset, v)?),
            None => None,
        };
        records.push(EpochRecord {
            epoch,
            l_d: sums[0] / n,
            l_t: sums[1] / n,
            total: sums[2] / n,
            val_metric,
        });
        let metric = val_metric.unwrap_or(f64::NEG_INFINITY);
        let improves = match &best {
            None => true,
            Some((m, _, _)) => val_metric.is_none() || metric > *m,
        };
        if improves {
            best = Some((metric, epoch, params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    Ok(TrainReport {
        records,
        best_epoch,
        params,
        similarity,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Accumulates per-image loss sums so epoch records are per-image means
/// under either reduction.
fn accumulate(sums: &mut [f64; 3], loss: &LossBreakdown, batch: usize, config: &TrainConfig) {
    let w = match config.reduction {
        crate::data::Reduction::Mean => batch as f64,
        crate::data::Reduction::Sum => 1.0,
    };
    sums[0] += loss.l_d * w;
    sums[1] += loss.l_t * w;
    sums[2] += loss.total * w;
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub alpha: f64,
    pub report: TrainReport,
    pub metrics: GzslMetrics,
}

/// Trains one model per `alpha` (same seed, fresh init) and evaluates each on `test`.
pub fn alpha_sweep(dataset: &Dataset, test: &TestSet, config: &TrainConfig, alphas: &[f64]) -> Result<Vec<SweepPoint>> {
    if alphas.is_empty() {
        return Err(Error::Invalid("alpha sweep needs at least one alpha".into()));
    }
    alphas
        .iter()
        .map(|&alpha| {
            let cfg = TrainConfig {
                alpha,
                ..config.clone()
            };
            let report = train(dataset, &cfg)?;
            let metrics = evaluate(&report.params, dataset, test)?;
            Ok(SweepPoint {
                alpha,
                report,
                metrics,
            })
        })
        .collect()
}

/// `alpha,ts,tr,h,zsl_acc`
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("alpha,ts,tr,h,zsl_acc\n");
    for p in points {
        let m = &p.metrics;
        out.push_str(&format!("{},{:?},{:?},{:?},{:?}\n", p.alpha, m.ts, m.tr, m.h, m.zsl_acc));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Splits, SyntheticSpec};

    fn tiny() -> (Dataset, TrainConfig) {
        let data = generate_synthetic(&SyntheticSpec {
            num_source: 4,
            num_target: 2,
            semantic_dim: 4,
            feature_dim: 6,
            per_class_n: 6,
            test_per_class: 2,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            learning_rate: 1e-3,
            ..Default::default()
        };
        (data.dataset, cfg)
    }

    #[test]
    fn one_epoch_smoke() {
        let (d, cfg) = tiny();
        let r = train(&d, &cfg).unwrap();
        assert_eq!(r.records.len(), 1);
        let rec = &r.records[0];
        assert!(rec.l_d.is_finite() && rec.l_t.is_finite() && rec.total.is_finite());
        assert!((rec.total - (rec.l_d + cfg.alpha * rec.l_t)).abs() < 1e-12);
        assert_eq!(r.best_epoch, 1);
        assert_eq!(r.log_csv().lines().count(), 2);
    }

    #[test]
    fn deterministic() {
        let (d, mut cfg) = tiny();
        cfg.epochs = 3;
        let a = train(&d, &cfg).unwrap();
        let b = train(&d, &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.params, b.params);
        assert_eq!(a.log_csv(), b.log_csv());
    }

    #[test]
    fn validation_selects_best_epoch() {
        let (d, mut cfg) = tiny();
        cfg.epochs = 5;
        let splits = Splits::new(d.splits().source.clone(), d.splits().target.clone(), vec![1]);
        let d = Dataset::new(d.features().clone(), d.labels().to_vec(), d.semantics().clone(), splits).unwrap();
        let r = train(&d, &cfg).unwrap();
        let vals: Vec<f64> = r.records.iter().map(|x| x.val_metric.unwrap()).collect();
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(vals[r.best_epoch - 1], max);
        // Validation class 1 is a pseudo-target.
        assert!(r.similarity.target_order.contains(&1));
        assert!(!r.similarity.source_order.contains(&1));
    }

    #[test]
    fn invalid_config_rejected() {
        let (d, mut cfg) = tiny();
        cfg.epochs = 0;
        assert_eq!(train(&d, &cfg).unwrap_err().kind(), "config");
        cfg.epochs = 1;
        cfg.beta = -1.0;
        assert_eq!(train(&d, &cfg).unwrap_err().kind(), "config");
    }

    #[test]
    fn divergence_is_reported() {
        let (d, mut cfg) = tiny();
        cfg.learning_rate = 1e300;
        cfg.epochs = 3;
        let err = train(&d, &cfg).unwrap_err();
        assert_eq!(err.kind(), "divergence");
        assert!(err.to_string().contains("step"));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let p = init_params(2, 2, 1, 1, 0.01, 0).unwrap();
        let mut tensors = p.tensors.clone();
        let mut grads = tensors.zeros_like();
        grads.h_b2.data_mut()[0] = 3.0;
        let mut adam = Adam::new(&tensors, 0.1);
        adam.step(&mut tensors, &grads);
        assert!((tensors.h_b2.data()[0] + 0.1).abs() < 1e-6);
        assert_eq!(tensors.g_w1, p.tensors.g_w1);
    }

    #[test]
    fn sweep_with_identical_alphas_is_identical() {
        let data = generate_synthetic(&SyntheticSpec {
            num_source: 4,
            num_target: 2,
            semantic_dim: 4,
            feature_dim: 6,
            per_class_n: 6,
            test_per_class: 2,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        };
        let pts = alpha_sweep(&data.dataset, &data.test, &cfg, &[0.1, 0.1]).unwrap();
        assert_eq!(pts[0].report.params, pts[1].report.params);
        assert_eq!(pts[0].metrics, pts[1].metrics);
        assert_eq!(sweep_csv(&pts).lines().count(), 3);
        assert!(alpha_sweep(&data.dataset, &data.test, &cfg, &[]).is_err());
    }
}
