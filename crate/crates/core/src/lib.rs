//! Sequential model-based optimization (SMBO) of black-box hyperparameter
//! objectives with Gaussian processes, and its agnostic-Bayes ensemble
//! extension (ESMBO): `N` bootstrap-resampled validation histories optimized
//! round-robin while every trained predictor is shared through a loss cache.
//!
//! The crate also ships the pieces needed to evaluate the method: desk-scale
//! learners with log/linear and integer hyperparameter spaces, synthetic
//! objectives, the multi-dataset comparison statistics (expected rank, win
//! frequency, sign test, Beta-posterior "PB" test) and a benchmark harness
//! that writes JSON-lines run logs and CSV/JSON reports.
//!
//! Data-parallel inner loops (EI candidate scoring, GP multi-start fitting,
//! Monte Carlo posterior estimation, benchmark cells) run on rayon when the
//! `parallel` feature is enabled and fall back to sequential iteration
//! otherwise. Results are identical either way.

// Negated comparisons are how NaN is rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod agnostic;
pub mod error;
pub mod esmbo;
pub mod gp;
pub mod harness;
pub mod learners;
pub mod linalg;
pub mod parallel;
pub mod rng;
pub mod smbo;
pub mod sobol;
pub mod space;
pub mod stats;

pub use error::{Error, Result};
pub use space::{DimKind, Dimension, History, HyperParamConfig, HyperParamSpace, Record, Scale};
