use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How per-image loss terms are combined over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Mean over images, sum over classes.
    Mean,
    /// Sum over images and classes.
    Sum,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        })
    }
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "sum" => Ok(Reduction::Sum),
            other => Err(Error::Config(format!("reduction must be mean or sum, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the transfer loss.
    pub alpha: f64,
    /// Ridge regularizer for class similarities.
    pub beta: f64,
    /// `None` picks `min(1024, 4·d_a)`.
    pub hidden_dim_g: Option<usize>,
    pub hidden_dim_h: Option<usize>,
    pub leaky_slope: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub prob_clamp_eps: f64,
    pub reduction: Reduction,
    /// L2-normalize feature rows before training and evaluation.
    pub normalize_features: bool,
    /// Fraction of rows of the remaining source classes held out for validation
    /// when `val` classes are present.
    pub val_holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 1e-3,
            hidden_dim_g: None,
            hidden_dim_h: None,
            leaky_slope: 0.01,
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 300,
            seed: 0,
            prob_clamp_eps: 1e-7,
            reduction: Reduction::Mean,
            normalize_features: false,
            val_holdout_fraction: 0.2,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

fn parse_dim(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn fmt_dim(d: Option<usize>) -> String {
    d.map_or_else(|| "auto".to_string(), |d| d.to_string())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky_slope must be in (0, 1), got {}", self.leaky_slope));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.prob_clamp_eps > 0.0 && self.prob_clamp_eps < 0.5) {
            return bad(format!("prob_clamp_eps must be in (0, 0.5), got {}", self.prob_clamp_eps));
        }
        if self.hidden_dim_g == Some(0) || self.hidden_dim_h == Some(0) {
            return bad("hidden dims must be >= 1".into());
        }
        if !(self.val_holdout_fraction > 0.0 && self.val_holdout_fraction < 1.0) {
            return bad(format!(
                "val_holdout_fraction must be in (0, 1), got {}",
                self.val_holdout_fraction
            ));
        }
        Ok(())
    }

    /// Sets one field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "hidden_dim_g" => self.hidden_dim_g = parse_dim(key, value)?,
            "hidden_dim_h" => self.hidden_dim_h = parse_dim(key, value)?,
            "leaky_slope" => self.leaky_slope = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "prob_clamp_eps" => self.prob_clamp_eps = parse(key, value)?,
            "reduction" => self.reduction = value.parse()?,
            "normalize_features" => self.normalize_features = parse(key, value)?,
            "val_holdout_fraction" => self.val_holdout_fraction = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "alpha = {}\nbeta = {}\nhidden_dim_g = {}\nhidden_dim_h = {}\nleaky_slope = {}\n\
             learning_rate = {}\nbatch_size = {}\nepochs = {}\nseed = {}\nprob_clamp_eps = {}\n\
             reduction = {}\nnormalize_features = {}\nval_holdout_fraction = {}\n",
            self.alpha,
            self.beta,
            fmt_dim(self.hidden_dim_g),
            fmt_dim(self.hidden_dim_h),
            self.leaky_slope,
            self.learning_rate,
            self.batch_size,
            self.epochs,
            self.seed,
            self.prob_clamp_eps,
            self.reduction,
            self.normalize_features,
            self.val_holdout_fraction,
        )
    }

    /// Hidden sizes actually used for a given semantic dimension.
    pub fn resolved_hidden(&self, semantic_dim: usize) -> (usize, usize) {
        let auto = 1024.min(4 * semantic_dim).max(1);
        (self.hidden_dim_g.unwrap_or(auto), self.hidden_dim_h.unwrap_or(auto))
    }
}
