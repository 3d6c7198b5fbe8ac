//! Distance-based likelihood ratios for forensic source comparison.
//!
//! Pairs of traces are reduced to a distance (a scalar dissimilarity or a
//! per-feature absolute-difference vector). The likelihood ratio between
//! the same-source and different-source hypotheses is then estimated either
//! directly, from two-component Gaussian mixtures fitted to the distance
//! populations, or indirectly, by logistic regression corrected for the
//! calibration class proportions.
//!
//! The crate is organized along the pipeline:
//!
//! * [`trace`]: panel ingestion, normalization, dichotomization, splitting,
//!   repeatability diagnostics.
//! * [`pairs`]: pair enumeration and distances.
//! * [`direct`]: Gaussian-mixture likelihoods.
//! * [`logistic`]: logistic calibration.
//! * [`select`]: filter feature selection with grouped cross-validation.
//! * [`eval`]: ROC, AUC, Youden operating point, grouped folds.
//! * [`method`]: the three end-to-end methods behind one interface.
//! * [`synth`]: synthetic panels.
//! * [`persist`], [`report`]: model files, manifests and reports.

pub mod direct;
pub mod error;
pub mod eval;
pub mod logistic;
pub mod method;
pub mod pairs;
pub mod persist;
pub mod report;
pub mod select;
pub mod stats;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};

/// Version stamped into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;
