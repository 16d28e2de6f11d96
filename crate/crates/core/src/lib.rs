//! Demographic representation workbench.
//!
//! Pretrains small networks on (age, gender) against a Charlson
//! Comorbidity Index target, transfers their embeddings into a
//! gradient-boosted classifier on downstream datasets, and evaluates the
//! result with bootstrapped AUROC/ECE, Welch t-tests, split-gain shares and
//! t-SNE projections.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cci;
pub mod data;
pub mod encoders;
pub mod error;
pub mod gbdt;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod sequencing;
pub mod stats;
pub mod syngen;
pub mod tsne;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision GDP network, the default everywhere.
pub type Model = nn::GdpModel<f64>;
/// Single-precision GDP network.
pub type Model32 = nn::GdpModel<f32>;
pub type Frame = sequencing::SequenceFrame<f64>;
pub type Frame32 = sequencing::SequenceFrame<f32>;
pub type Encoded = encoders::EncodedVector<f64>;
