//! Shared fixtures and independent oracles for the integration tests.
//!
//! The oracles here are deliberately naive (nested loops over plain slices)
//! and share no code with the library beyond reading parameter values.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcn_core::network::{init_params, TcnParams};
use tcn_core::Matrix;

pub fn tcn_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_tcn"))
}

pub fn run_tcn(args: &[&str]) -> Output {
    Command::new(tcn_bin()).args(args).output().expect("spawn tcn")
}

/// Runs the binary and panics with its stderr on a nonzero exit.
pub fn run_ok(args: &[&str]) -> String {
    let out = run_tcn(args);
    assert!(
        out.status.success(),
        "tcn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Parses `key=value` lines into pairs.
pub fn kv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

pub fn kv_get(text: &str, key: &str) -> f64 {
    kv(text)
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .1
        .parse()
        .unwrap()
}

pub fn stable_softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Row `r` of a dense layer `x·W + b`, with `W` stored row-major `in × out`.
fn dense(x: &[f64], w: &Matrix, b: &Matrix) -> Vec<f64> {
    (0..w.cols())
        .map(|o| b.data()[o] + (0..w.rows()).map(|i| x[i] * w.data()[i * w.cols() + o]).sum::<f64>())
        .collect()
}

/// Logit of one (image, class) pair, computed from scratch.
pub fn oracle_logit(params: &TcnParams, feature: &[f64], semantic: &[f64]) -> f64 {
    let t = &params.tensors;
    let s = params.leaky_slope;
    let hidden: Vec<f64> = dense(semantic, &t.g_w1, &t.g_b1).into_iter().map(|v| leaky(v, s)).collect();
    let encoded = dense(&hidden, &t.g_w2, &t.g_b2);
    let fused: Vec<f64> = feature.iter().zip(&encoded).map(|(a, b)| a * b).collect();
    let head_hidden: Vec<f64> = dense(&fused, &t.h_w1, &t.h_b1).into_iter().map(|v| leaky(v, s)).collect();
    dense(&head_hidden, &t.h_w2, &t.h_b2)[0]
}

/// A tiny training problem for gradient checks.
pub struct TinyProblem {
    pub params: TcnParams,
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Rows `0..k` are source semantics, rows `k..` are target semantics.
    pub semantics: Matrix,
    pub k: usize,
    /// `K × L` transfer targets, row per source class.
    pub similarity: Matrix,
    pub alpha: f64,
}

impl TinyProblem {
    /// Sizes within `d_a ≤ 8, d_f ≤ 12, H ≤ 6, B ≤ 4, K ≤ 5, L ≤ 3`.
    pub fn random(seed: u64, alpha: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f7c4);
        let da = rng.random_range(1..=8);
        let df = rng.random_range(1..=12);
        let hg = rng.random_range(1..=6);
        let hh = rng.random_range(1..=6);
        let b = rng.random_range(1..=4);
        let k = rng.random_range(1..=5);
        let l = rng.random_range(1..=3);
        let mut params = init_params(da, df, hg, hh, 0.01, seed).unwrap();
        for m in [
            &mut params.tensors.g_b1,
            &mut params.tensors.g_b2,
            &mut params.tensors.h_b1,
            &mut params.tensors.h_b2,
        ] {
            for v in m.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
        let features = Matrix::from_fn(b, df, |_, _| rng.random_range(-1.0..1.0));
        let semantics = Matrix::from_fn(k + l, da, |_, _| rng.random_range(-1.0..1.0));
        let labels = (0..b).map(|_| rng.random_range(0..k)).collect();
        // Any row-stochastic matrix is a valid transfer target for the gradient.
        let mut similarity = Matrix::from_fn(k, l, |_, _| rng.random_range(0.0..1.0));
        for r in 0..k {
            let row = similarity.row_mut(r);
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        Self {
            params,
            features,
            labels,
            semantics,
            k,
            similarity,
            alpha,
        }
    }

    /// `L_D + α·L_T`, each the per-image mean of summed soft binary cross-entropies.
    pub fn oracle_loss(&self, params: &TcnParams) -> f64 {
        let b = self.features.rows();
        let c = self.semantics.rows();
        let (mut l_d, mut l_t) = (0.0, 0.0);
        for i in 0..b {
            for j in 0..c {
                let x = oracle_logit(params, self.features.row(i), self.semantics.row(j));
                let (target, is_source) = if j < self.k {
                    (if self.labels[i] == j { 1.0 } else { 0.0 }, true)
                } else {
                    (self.similarity.get(self.labels[i], j - self.k), false)
                };
                let term = stable_softplus(x) - target * x;
                if is_source {
                    l_d += term;
                } else {
                    l_t += term;
                }
            }
        }
        (l_d + self.alpha * l_t) / b as f64
    }

    /// Central differences of the oracle loss for every parameter entry, in
    /// the library's tensor order.
    pub fn oracle_gradient(&self, step: f64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for t in 0..8 {
            let n = self.params.tensors.iter()[t].data().len();
            let mut g = Vec::with_capacity(n);
            for idx in 0..n {
                let mut plus = self.params.clone();
                plus.tensors.iter_mut()[t].data_mut()[idx] += step;
                let mut minus = self.params.clone();
                minus.tensors.iter_mut()[t].data_mut()[idx] -= step;
                g.push((self.oracle_loss(&plus) - self.oracle_loss(&minus)) / (2.0 * step));
            }
            out.push(g);
        }
        out
    }
}

/// Gradient descent on `‖b − A·s‖² + β‖s‖²` with step `1/Lipschitz`, run to
/// a gradient norm of 1e-13 (or the iteration cap).
pub fn ridge_descent_oracle(a: &[Vec<f64>], b: &[f64], beta: f64) -> Vec<f64> {
    let n = a.len();
    let p = a[0].len();
    // Gram matrix G = AᵀA and c = Aᵀb; gradient is 2(G s − c + β s).
    let mut g = vec![vec![0.0; p]; p];
    let mut c = vec![0.0; p];
    for r in 0..n {
        for i in 0..p {
            c[i] += a[r][i] * b[r];
            for j in 0..p {
                g[i][j] += a[r][i] * a[r][j];
            }
        }
    }
    // Largest eigenvalue of G by power iteration.
    let mut v = vec![1.0; p];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..p).map(|i| (0..p).map(|j| g[i][j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    let step = 1.0 / (2.0 * (lambda * 1.01 + beta));
    let mut s = vec![0.0; p];
    for _ in 0..2_000_000 {
        let grad: Vec<f64> = (0..p)
            .map(|i| 2.0 * ((0..p).map(|j| g[i][j] * s[j]).sum::<f64>() - c[i] + beta * s[i]))
            .collect();
        if grad.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-13 {
            break;
        }
        for i in 0..p {
            s[i] -= step * grad[i];
        }
    }
    s
}

/// Moving averages over windows of `w`.
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w).map(|win| win.iter().sum::<f64>() / w as f64).collect()
}
