//! Probabilists' Hermite polynomials, the expansion coefficients of the
//! Dirac mass at a level u, and their ε-regularized versions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// H_j(x) by H_{k+1} = x H_k − k H_{k−1}.
pub fn hermite(j: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if j == 0 {
        return prev;
    }
    for k in 1..j {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Standard Gaussian density.
pub fn gaussian_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// β_j = H_j(0) γ(0): zero for odd j.
pub fn beta(j: usize) -> f64 {
    hermite(j, 0.0) * gaussian_density(0.0)
}

/// β_j^{(u)} = H_j(u) γ(u).
pub fn beta_at_level(j: usize, u: f64) -> f64 {
    hermite(j, u) * gaussian_density(u)
}

/// Coefficients of (2ε)^{-1} 1{|x − u| ≤ ε} in the Hermite basis.
pub fn beta_eps(j: usize, u: f64, eps: f64) -> f64 {
    assert!(eps > 0.0, "ε must be positive");
    if j == 0 {
        let normal = Normal::standard();
        return (normal.cdf(u + eps) - normal.cdf(u - eps)) / (2.0 * eps);
    }
    let edge = |x: f64| hermite(j - 1, x) * gaussian_density(x);
    -(edge(u + eps) - edge(u - eps)) / (2.0 * eps)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HermiteBeta {
    pub h: Option<f64>,
    pub beta: f64,
    pub beta_eps: Option<f64>,
}

/// H_j(x) when `x` is given, β_j, and β_j^{(u)}(ε) when both `u` and `eps` are given.
pub fn hermite_and_beta(j: usize, x: Option<f64>, u: Option<f64>, eps: Option<f64>) -> HermiteBeta {
    HermiteBeta {
        h: x.map(|x| hermite(j, x)),
        beta: beta(j),
        beta_eps: match (u, eps) {
            (Some(u), Some(e)) => Some(beta_eps(j, u, e)),
            (None, Some(e)) => Some(beta_eps(j, 0.0, e)),
            _ => None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_polynomials() {
        for x in [-1.7, 0.0, 0.3, 2.2] {
            assert!((hermite(2, x) - (x * x - 1.0)).abs() < 1e-14);
            assert!((hermite(3, x) - (x.powi(3) - 3.0 * x)).abs() < 1e-13);
            assert!((hermite(4, x) - (x.powi(4) - 6.0 * x * x + 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn dirac_coefficients_at_zero() {
        let g0 = 1.0 / (2.0 * PI).sqrt();
        assert!((beta(0) - g0).abs() < 1e-16);
        assert!((beta(2) + g0).abs() < 1e-16);
        assert!((beta(4) - 3.0 * g0).abs() < 1e-15);
        assert_eq!(beta(1), 0.0);
        assert_eq!(beta(3), 0.0);
        assert_eq!(hermite(4, 0.0), 3.0);
    }

    #[test]
    fn regularized_coefficients_converge() {
        let g0 = 1.0 / (2.0 * PI).sqrt();
        assert!((beta_eps(2, 0.0, 0.01) + g0).abs() < 1e-3);
        for j in 0..6 {
            for u in [-0.8, 0.0, 1.1] {
                assert!((beta_eps(j, u, 1e-4) - beta_at_level(j, u)).abs() < 1e-6);
            }
        }
    }
}
