//! Seeded synthetic zero-shot datasets.
//!
//! Source semantics are random unit vectors (orthonormal whenever `K ≤ d_a`).
//! Each target semantic is a convex mixture of 2-3 source semantics, blended
//! with a random direction when `purity < 1`. A hidden linear map sends
//! semantics to class prototypes in feature space, and images are prototypes
//! plus isotropic Gaussian noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Splits, TestSet};
use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_source: usize,
    pub num_target: usize,
    pub semantic_dim: usize,
    pub feature_dim: usize,
    /// Training images per source class.
    pub per_class_n: usize,
    /// Held-out images per class (source and target).
    pub test_per_class: usize,
    pub noise_sigma: f64,
    /// 1.0 gives exact mixtures; lower values blend in an unrelated direction.
    pub purity: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_source: 8,
            num_target: 4,
            semantic_dim: 16,
            feature_dim: 32,
            per_class_n: 50,
            test_per_class: 20,
            noise_sigma: 0.1,
            purity: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("synthetic spec: {m}")));
        if self.num_source < 2 {
            return bad("need at least 2 source classes");
        }
        if self.num_target < 1 {
            return bad("need at least 1 target class");
        }
        if self.semantic_dim == 0 || self.feature_dim < self.semantic_dim {
            return bad("need 1 <= semantic_dim <= feature_dim");
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return bad("noise_sigma must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.purity) {
            return bad("purity must be in [0, 1]");
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; keys match the field names.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let bad = || Error::Config(format!("bad value for {k}: {v:?}"));
            match k {
                "num_source" => spec.num_source = v.parse().map_err(|_| bad())?,
                "num_target" => spec.num_target = v.parse().map_err(|_| bad())?,
                "semantic_dim" => spec.semantic_dim = v.parse().map_err(|_| bad())?,
                "feature_dim" => spec.feature_dim = v.parse().map_err(|_| bad())?,
                "per_class_n" => spec.per_class_n = v.parse().map_err(|_| bad())?,
                "test_per_class" => spec.test_per_class = v.parse().map_err(|_| bad())?,
                "noise_sigma" => spec.noise_sigma = v.parse().map_err(|_| bad())?,
                "purity" => spec.purity = v.parse().map_err(|_| bad())?,
                "seed" => spec.seed = v.parse().map_err(|_| bad())?,
                other => return Err(Error::Config(format!("unknown synthetic key {other:?}"))),
            }
        }
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        format!(
            "num_source = {}\nnum_target = {}\nsemantic_dim = {}\nfeature_dim = {}\n\
             per_class_n = {}\ntest_per_class = {}\nnoise_sigma = {}\npurity = {}\nseed = {}\n",
            self.num_source,
            self.num_target,
            self.semantic_dim,
            self.feature_dim,
            self.per_class_n,
            self.test_per_class,
            self.noise_sigma,
            self.purity,
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub test: TestSet,
    /// `L × K`: row `j` holds the convex weights target `j` puts on each source class.
    pub mixtures: Matrix,
    /// `(K + L) × d_f` class prototypes.
    pub prototypes: Matrix,
}

impl SyntheticData {
    /// Source positions (0..K) in the mixture of target position `j`.
    pub fn mixture_support(&self, j: usize) -> Vec<usize> {
        (0..self.mixtures.cols())
            .filter(|&k| self.mixtures.get(j, k) > 0.0)
            .collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Random unit rows; Gram-Schmidt makes them orthonormal while `count ≤ dim`.
fn source_semantics(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        if rows.len() < dim {
            for r in &rows {
                let p: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
            }
        }
        normalize(&mut v);
        rows.push(v);
    }
    rows
}

/// Assigns 2-3 source positions to every target, covering each source at
/// least once whenever `K ≤ 3L`, and keeping groups disjoint when `K ≥ 2L`.
fn mixture_groups(k: usize, l: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    let mut groups = vec![Vec::new(); l];
    for (pos, &src) in order.iter().enumerate().take(3 * l) {
        groups[pos % l].push(src);
    }
    for g in &mut groups {
        while g.len() < 2 {
            let candidate = rng.random_range(0..k);
            if !g.contains(&candidate) {
                g.push(candidate);
            }
        }
        g.sort_unstable();
    }
    groups
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let (k, l, da, df) = (spec.num_source, spec.num_target, spec.semantic_dim, spec.feature_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let sources = source_semantics(k, da, &mut rng);
    let groups = mixture_groups(k, l, &mut rng);

    let mut mixtures = Matrix::zeros(l, k);
    let mut sem_rows = sources.clone();
    for (j, group) in groups.iter().enumerate() {
        let raw: Vec<f64> = group.iter().map(|_| rng.random_range(0.25..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut mix = vec![0.0; da];
        for (&src, w) in group.iter().zip(&raw) {
            let w = w / total;
            mixtures.set(j, src, w);
            mix.iter_mut().zip(&sources[src]).for_each(|(m, s)| *m += w * s);
        }
        let mut pert: Vec<f64> = (0..da).map(|_| gaussian(&mut rng)).collect();
        normalize(&mut pert);
        let scale = mix.iter().map(|x| x * x).sum::<f64>().sqrt();
        let row: Vec<f64> = mix
            .iter()
            .zip(&pert)
            .map(|(m, p)| spec.purity * m + (1.0 - spec.purity) * scale * p)
            .collect();
        sem_rows.push(row);
    }
    let semantics = Matrix::from_rows(&sem_rows)?;

    let projection = Matrix::from_fn(da, df, |_, _| gaussian(&mut rng));
    let prototypes = matmul(&semantics, &projection)?;

    let mut sample = |class: usize, n: usize, feats: &mut Vec<f64>, labels: &mut Vec<usize>| {
        for _ in 0..n {
            for &p in prototypes.row(class) {
                let noise = if spec.noise_sigma > 0.0 {
                    spec.noise_sigma * gaussian(&mut rng)
                } else {
                    0.0
                };
                feats.push(p + noise);
            }
            labels.push(class);
        }
    };

    let mut train_feats = Vec::new();
    let mut train_labels = Vec::new();
    for c in 0..k {
        sample(c, spec.per_class_n, &mut train_feats, &mut train_labels);
    }
    let mut test_feats = Vec::new();
    let mut test_labels = Vec::new();
    for c in 0..k + l {
        sample(c, spec.test_per_class, &mut test_feats, &mut test_labels);
    }

    let splits = Splits::new((0..k).collect(), (k..k + l).collect(), Vec::new());
    let dataset = Dataset::new(
        Matrix::new(train_labels.len(), df, train_feats)?,
        train_labels,
        semantics,
        splits,
    )?;
    let test = TestSet::new(Matrix::new(test_labels.len(), df, test_feats)?, test_labels)?;
    Ok(SyntheticData {
        dataset,
        test,
        mixtures,
        prototypes,
    })
}
