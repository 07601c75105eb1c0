#![allow(clippy::needless_range_loop)]

//! Source-free domain adaptation with a bank of classifiers.
//!
//! A feature generator and `k` classifier heads are pre-trained on a labeled
//! source domain while the decision boundaries of the heads are pushed apart.
//! The frozen heads then act as a disagreement metric on an unlabeled target
//! domain: adapting the generator to make the heads agree pulls the target
//! features away from the decision boundaries, without ever touching the
//! source data again.
//!
//! The crate is organized as:
//!
//! - [`numerics`]: dense `f64` matrices, a tape-based reverse-mode
//!   differentiation graph, SGD with momentum, and a finite-difference
//!   gradient checker.
//! - [`model`]: the generator/classifier-bank architecture and ensemble
//!   inference.
//! - [`losses`]: classification, worst-pair separation, trace agreement,
//!   pair-trace, entropy, and pseudo-label objectives.
//! - [`theory`]: exact disagreement-ratio combinatorics, the ratio
//!   recurrence, and empirical disagreement estimates.
//! - [`data`]: synthetic domain pairs, IDX digit files, normalization, and
//!   seeded batching.
//! - [`pipeline`]: source pre-training, model selection, pseudo-labeling,
//!   target adaptation, evaluation, and checkpoints.
//! - [`config`] / [`runner`]: strict experiment configuration and the
//!   CSV-emitting experiment driver behind the `sfda` binary.

pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod report;
pub mod runner;
pub mod theory;

pub use error::SfdaError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SfdaError>;
