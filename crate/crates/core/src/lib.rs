//! Markov switching approximate factor models estimated by principal
//! components followed by EM with a Hamilton filter and Kim smoother.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix it to `f64`.

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod em;
pub mod error;
pub mod filter;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod montecarlo;
pub mod oracle;
pub mod pca;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod simulate;
pub mod types;

pub use em::{EmConfig, EmResult, run_em};
pub use error::{Error, Result};
pub use rng::RngHandle;
pub use scalar::Scalar;
pub use types::{
    FactorSpace, ModelParams, Panel, ProbabilityPath, StateProbabilities, TransitionMatrix, cross_index,
    unconditional_probs,
};

pub type Panel64 = Panel<f64>;
pub type ModelParams64 = ModelParams<f64>;
pub type FactorSpace64 = FactorSpace<f64>;
pub type ProbabilityPath64 = ProbabilityPath<f64>;
pub type TransitionMatrix64 = TransitionMatrix<f64>;
