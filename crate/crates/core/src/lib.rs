//! Tempo tracking and rhythm quantization with a switching state-space model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod exact;
pub mod gaussian;
pub mod io;
pub mod lds;
pub mod mcmc;
pub mod scalar;
pub mod score;
pub mod smc;
pub mod tempo;

pub use error::{Error, Result};
pub use gaussian::{GaussianPotential, Label, Moments};
pub use scalar::Scalar;
pub use score::{Beat, Score, ScorePrior};

pub type Potential = GaussianPotential<f64>;
pub type Potential32 = GaussianPotential<f32>;
pub type Params = tempo::TempoParams<f64>;
pub type Params32 = tempo::TempoParams<f32>;
pub type TempoModel = tempo::Model<f64>;
pub type Onsets = tempo::OnsetSequence<f64>;
