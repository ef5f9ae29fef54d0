//! Heart-rate response modeling for cycling sessions.
//!
//! The pipeline runs per-second bike-computer sessions through
//! [`ingest`] → [`cleanse`] → [`features`] → [`lstm`] / [`train`] → [`evaluate`],
//! with [`synth`] producing ground-truth corpora in the ingest formats and
//! [`metrics`] computing normalized power and training stress score.
//!
//! The numeric core ([`lstm`], the Adam optimizer, the [`features::Standardizer`],
//! [`metrics`] and the clustering helpers) is generic over [`Scalar`]; the aliases
//! below fix the precision used by the training pipeline and checkpoints (`f64`).

pub mod cleanse;
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod ingest;
pub mod lstm;
pub mod metrics;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision LSTM weights (training and checkpoint precision).
pub type Params = lstm::LstmParams<f64>;
/// Single-precision LSTM weights, e.g. for compact inference copies.
pub type Params32 = lstm::LstmParams<f32>;
pub type State = lstm::LstmState<f64>;
pub type Grads = lstm::Gradients<f64>;
pub type FeatureMatrix = features::FeatureMatrix<f64>;
pub type Standardizer = features::Standardizer<f64>;
pub type Adam = train::adam::AdamState<f64>;
