//! Datasets: labeled source features, per-class semantics, and class splits.

mod config;
pub(crate) mod io;
mod synthetic;

pub use config::{Reduction, TrainConfig};
pub use io::{
    decode_matrix, encode_matrix, format_splits, parse_splits,
    load_dataset, load_test_set, read_labels, read_matrix, read_splits, save_dataset,
    save_test_set, write_labels, write_matrix, write_splits, DatasetPaths, FEATURE_MAGIC,
};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Global class indices partitioned into source (labeled), target (unseen),
/// and an optional validation subset of the source classes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub val: Vec<usize>,
}

impl Splits {
    pub fn new(source: Vec<usize>, target: Vec<usize>, val: Vec<usize>) -> Self {
        Self {
            source,
            target,
            val,
        }
    }

    /// Checks disjointness, non-emptiness, uniqueness and `val ⊆ source`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.source.is_empty() || self.target.is_empty() {
            return Err(Error::Invalid(
                "source and target splits must both be nonempty".into(),
            ));
        }
        let mut source = HashSet::new();
        for &c in &self.source {
            if c >= num_classes {
                return Err(Error::UnknownClass(c));
            }
            if !source.insert(c) {
                return Err(Error::format("splits", format!("class {c} repeated in source")));
            }
        }
        let mut target = HashSet::new();
        for &c in &self.target {
            if c >= num_classes {
                return Err(Error::UnknownClass(c));
            }
            if source.contains(&c) {
                return Err(Error::OverlappingSplits(c));
            }
            if !target.insert(c) {
                return Err(Error::format("splits", format!("class {c} repeated in target")));
            }
        }
        let mut val = HashSet::new();
        for &c in &self.val {
            if !source.contains(&c) {
                return Err(Error::ValNotSource(c));
            }
            if !val.insert(c) {
                return Err(Error::format("splits", format!("class {c} repeated in val")));
            }
        }
        Ok(())
    }

    /// Source classes followed by target classes: the column order of every score grid.
    pub fn all_classes(&self) -> Vec<usize> {
        self.source.iter().chain(&self.target).copied().collect()
    }
}

/// Training data. Immutable once constructed; all invariants are checked in [`Dataset::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    semantics: Matrix,
    splits: Splits,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, semantics: Matrix, splits: Splits) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::LabelCount {
                features: features.rows(),
                labels: labels.len(),
            });
        }
        let num_classes = semantics.rows();
        splits.validate(num_classes)?;
        let source: HashSet<usize> = splits.source.iter().copied().collect();
        let target: HashSet<usize> = splits.target.iter().copied().collect();
        for (row, &class) in labels.iter().enumerate() {
            if source.contains(&class) {
                continue;
            }
            if target.contains(&class) {
                return Err(Error::NonSourceLabel { row, class });
            }
            return Err(Error::UnknownClass(class));
        }
        Ok(Self {
            features,
            labels,
            semantics,
            splits,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn semantics(&self) -> &Matrix {
        &self.semantics
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn num_classes(&self) -> usize {
        self.semantics.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn semantic_dim(&self) -> usize {
        self.semantics.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Held-out labeled rows; labels may belong to any class.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl TestSet {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::LabelCount {
                features: features.rows(),
                labels: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
