//! Statistical shape analysis of corresponded 3D meshes with confounder control.
//!
//! The toolkit covers the full pipeline from a mesh corpus to an interpretable
//! discriminative shape pattern: point-distribution-model representation and
//! generalized partial Procrustes alignment (`mesh`, `align`), core linear
//! estimators (`pca`, `pls`, `logistic`), confounding deflation (`confound`),
//! the classification pipeline with coefficient back-projection and whitening
//! (`discriminant`), a regression mode with Mahalanobis-constrained
//! representative shapes (`regression`), a semi-synthetic imbalance study
//! harness (`experiments`), and a parametric synthetic cohort generator
//! (`synth`).
//!
//! All fitted models are immutable after construction and safe to share across
//! threads. Every randomized entry point takes an explicit seed and is
//! bit-reproducible.

pub mod align;
pub mod cli;
pub mod cohort;
pub mod confound;
pub mod discriminant;
pub mod error;
pub mod experiments;
pub mod logistic;
pub mod manifest;
pub mod mesh;
pub mod pca;
pub mod pls;
pub mod regression;
pub mod synth;

pub use error::{MorphoError, Result};
