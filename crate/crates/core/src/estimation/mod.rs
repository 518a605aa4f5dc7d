//! Mode extraction, photon-number tomography and error estimation.

mod bootstrap;
mod decay;
mod histogram;
mod mle;
mod pca;
pub mod simplex;

pub use bootstrap::{
    bootstrap_fit, bootstrap_purity, bootstrap_quadratures, BootstrapSummary, DEFAULT_RESAMPLES,
};
pub use decay::{fit_exponential_decay, DecayFit};
pub use histogram::{histogram_with_overlay, Histogram};
pub use mle::{mle_photon_distribution, LikelihoodTable, MleFit, MAX_N_MAX, MIN_SAMPLES};
pub use pca::{
    autocovariance, autocovariance_in_basis, cross_fitted_eigenvalue, pca_in_basis,
    pca_leading_mode, AnalysisBasis, Autocovariance, PcaResult,
};
