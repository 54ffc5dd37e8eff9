//! Contrastive image-to-class scoring for zero-shot and generalized zero-shot recognition.
//!
//! Images are contrasted with class semantics: a semantic encoder maps each
//! class description into feature space, the result is fused with image
//! features by element-wise product, and a small head scores the fusion.
//! Training combines a discriminative loss over source classes with a
//! transfer loss that pushes source images toward similar target classes,
//! where similarities come from ridge reconstruction of semantics.
//!
//! Modules, bottom-up: [`linalg`], [`data`], [`similarity`], [`network`],
//! [`loss`], [`train`], [`eval`], plus [`gradcheck`] and the [`cli`].

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod network;
pub mod similarity;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;
