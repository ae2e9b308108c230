//! Independent numeric verifiers.
//!
//! Everything in this crate is written from first principles (densities,
//! quadrature, sampling, exhaustive search) and deliberately does not depend
//! on `certun-core`, so that tests comparing the two are comparing two
//! separate code paths.

pub mod brute;
pub mod divergence;
pub mod montecarlo;
pub mod quadrature;

pub use brute::{brute_min_steps, central_difference_gradient, grid_renyi_conversion};
pub use divergence::{gaussian_renyi, gaussian_tail_quadrature, hs_quadrature};
pub use montecarlo::{
    mc_hockey_stick, mc_renyi_moment, Density1d, Gaussian1d, McAccumulator, McEstimate,
};
pub use quadrature::integrate;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("quadrature did not converge on [{lo}, {hi}] (estimated error {error:e})")]
    IntegrationFailed { lo: f64, hi: f64, error: f64 },

    #[error("density evaluation failed at x = {0}")]
    DensityFailure(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, OracleError>;
