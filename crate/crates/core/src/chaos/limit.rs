//! The weighted centred chi-square law of the normalized fourth chaos.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};

use super::projection::variance_constant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitLawSpec {
    pub ell: usize,
    /// (weight, degrees of freedom) of each centred chi-square.
    pub chi_weights: Vec<(f64, u64)>,
    pub variance: f64,
}

impl LimitLawSpec {
    pub fn new(ell: usize) -> Self {
        assert!((1..=3).contains(&ell), "ℓ must be 1, 2 or 3");
        let l = ell as u64;
        let pairs = l * (l - 1) / 2;
        LimitLawSpec {
            ell,
            chi_weights: vec![
                (-1.0 / 50.0, 5 * l),
                (-1.0 / 25.0, 5 * pairs),
                (1.0 / 25.0, 5 * pairs),
                (1.0 / 50.0, 5 * pairs),
                (-1.0 / 6.0, 3 * pairs),
            ],
            variance: variance_constant(ell),
        }
    }

    /// Σ weight² · 2 · degrees.
    pub fn weighted_variance(&self) -> f64 {
        self.chi_weights
            .iter()
            .map(|(w, k)| w * w * 2.0 * *k as f64)
            .sum()
    }
}

/// One draw of Σ wᵢ (χ²(kᵢ) − kᵢ); a chi-square with no degrees of freedom
/// is the constant 0.
pub fn sample_limit_law<R: Rng + ?Sized>(law: &LimitLawSpec, rng: &mut R) -> f64 {
    law.chi_weights
        .iter()
        .filter(|(_, k)| *k > 0)
        .map(|&(w, k)| {
            let chi = ChiSquared::new(k as f64).expect("positive degrees of freedom");
            w * (chi.sample(rng) - k as f64)
        })
        .sum()
}

pub fn sample_limit_law_normalized<R: Rng + ?Sized>(law: &LimitLawSpec, rng: &mut R) -> f64 {
    sample_limit_law(law, rng) / law.variance.sqrt()
}
