//! Storage-and-release single-photon simulator with homodyne state estimation.

pub mod acceptance;
pub mod cavity;
pub mod config;
pub mod error;
pub mod estimation;
pub mod fock;
pub mod homodyne;
pub mod modes;
pub mod photon_stats;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mode = modes::ModeFunction<f64>;
pub type ModeF32 = modes::ModeFunction<f32>;
pub type FockState = fock::FockDiagonalState<f64>;
pub type FockStateF32 = fock::FockDiagonalState<f32>;
pub type Release = cavity::ReleaseResult<f64>;
pub type Pca = estimation::PcaResult<f64>;
pub type MleFit = estimation::MleFit<f64>;
