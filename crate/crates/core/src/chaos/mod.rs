//! Wiener chaos machinery for the nodal volumes of ℓ independent waves.

pub mod gramian;
pub mod hermite;
pub mod limit;
pub mod projection;
pub mod spectral;

use thiserror::Error;

use crate::field::FieldError;
use crate::lattice::LatticeError;

pub use gramian::{
    alpha, gramian_hermite_coefficient, gramian_hermite_expectation, gramian_monte_carlo,
    gramian_table, GramianEntry, GramianError,
};
pub use hermite::{beta, beta_at_level, beta_eps, hermite, hermite_and_beta, HermiteBeta};
pub use limit::{sample_limit_law, sample_limit_law_normalized, LimitLawSpec};
pub use projection::{
    low_order_projections, proj4, proj4_contracted, proj4_from_rv2, reference_statistics,
    rv2_closed_form, rv2_numerical, LowOrderProjections, ReferenceStatistics, Rv2Values,
};
pub use spectral::{
    compute_rv1, ContractedStatistics, PairBuckets, SpectralStatistics, XContracted, XFamily,
};

#[derive(Debug, Error)]
pub enum ChaosError {
    #[error("ℓ = {0} is outside 1..=3")]
    InvalidEll(usize),
    #[error("coefficient sets do not match the frequency set")]
    Mismatch,
    #[error("{what} should be real but has imaginary part {imag:e}")]
    NotReal { what: String, imag: f64 },
    #[error(transparent)]
    Gramian(#[from] GramianError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// The α, β and Gramian–Hermite constants in one immutable bundle.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChaosConstants;

impl ChaosConstants {
    pub fn alpha(&self, ell: usize, k: usize) -> f64 {
        alpha(ell, k)
    }

    pub fn beta(&self, j: usize) -> f64 {
        beta(j)
    }

    pub fn beta_eps(&self, j: usize, u: f64, eps: f64) -> f64 {
        beta_eps(j, u, eps)
    }

    pub fn gramian_table(&self, ell: usize, k: usize) -> Vec<GramianEntry> {
        gramian_table(ell, k)
    }
}
