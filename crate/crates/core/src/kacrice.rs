//! Gaussian conditioning behind the Kac–Rice two-point function: the law of
//! the gradients at z and 0 given the field values there, the Cauchy–Schwarz
//! bound q^{(ℓ)} and its expansion near the diagonal, chi moments, and the
//! Gram–Schmidt law of Gramian determinants.

use nalgebra::{DMatrix, Matrix2, Matrix6, SMatrix, SymmetricEigen, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::chaos::gramian::{alpha, falling_factorial, phi_star};
use crate::field::{covariance_profile, evaluate_point, make_coefficients, CovarianceProfile};
use crate::lattice::FrequencySet;

/// Lags with 1 − r² at or below this are treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;
pub const DEFAULT_C0: f64 = 0.5;
pub const RADIUS_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum KacRiceError {
    #[error("1 − r² = {0:e} at this lag; the two-point law is degenerate")]
    DegenerateCovariance(f64),
    #[error("1 − r² ≤ 0 at |z| = {norm:e} inside radius c₀/√E with c₀ = {c0}")]
    RadiusRejected { c0: f64, norm: f64 },
    #[error("ℓ = {0} is outside 1..=3")]
    InvalidEll(usize),
    #[error("need at least two lags for a fit")]
    TooFewLags,
}

pub type Result<T> = std::result::Result<T, KacRiceError>;

/// Law of (∇T(z), ∇T(0)) given T(z) = T(0) = u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalGaussian {
    pub n: u64,
    pub z: [f64; 3],
    pub u: f64,
    pub mean: [f64; 6],
    pub covariance: [[f64; 6]; 6],
}

impl ConditionalGaussian {
    pub fn omega(&self) -> Matrix6<f64> {
        Matrix6::from_fn(|i, j| self.covariance[i][j])
    }

    pub fn omega1(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.covariance[i][j]))
    }

    pub fn omega2(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.covariance[i][3 + j]))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.omega()).eigenvalues.min()
    }

    /// A factor L with L Lᵀ = Ω, built from the eigendecomposition so that
    /// rank-deficient Ω is handled.
    fn factor(&self) -> Matrix6<f64> {
        let eig = SymmetricEigen::new(self.omega());
        let mut l = eig.eigenvectors;
        for (c, lam) in eig.eigenvalues.iter().enumerate() {
            let s = lam.max(0.0).sqrt();
            for r in 0..6 {
                l[(r, c)] *= s;
            }
        }
        l
    }
}

fn check_profile(p: &CovarianceProfile) -> Result<f64> {
    let one_minus_r2 = p.one_minus_value * (1.0 + p.value);
    if one_minus_r2 <= DEGENERACY_TOL {
        return Err(KacRiceError::DegenerateCovariance(one_minus_r2));
    }
    Ok(one_minus_r2)
}

/// μ and Ω by the closed forms
/// μ = u/(1+r) (∇r, −∇r), Ω₁ = (E/3)I − ∇r∇rᵀ/(1−r²),
/// Ω₂ = −Hess r − r ∇r∇rᵀ/(1−r²).
pub fn conditional_jacobian_law(
    freq: &FrequencySet,
    z: [f64; 3],
    u: f64,
) -> Result<ConditionalGaussian> {
    let p = covariance_profile(freq, z);
    let d = check_profile(&p)?;
    let e = freq.energy() / 3.0;
    let g = p.gradient;
    let mut mean = [0.0; 6];
    let mut cov = [[0.0; 6]; 6];
    for a in 0..3 {
        mean[a] = u / (1.0 + p.value) * g[a];
        mean[3 + a] = -mean[a];
        for b in 0..3 {
            let o1 = if a == b { e } else { 0.0 } - g[a] * g[b] / d;
            let o2 = -p.hessian[a][b] - p.value * g[a] * g[b] / d;
            cov[a][b] = o1;
            cov[3 + a][3 + b] = o1;
            cov[a][3 + b] = o2;
            cov[3 + b][a] = o2;
        }
    }
    let law = ConditionalGaussian {
        n: freq.n,
        z,
        u,
        mean,
        covariance: cov,
    };
    let floor = -1e-9 * (1.0 + e);
    assert!(
        law.min_eigenvalue() > floor,
        "conditional covariance is not positive semi-definite"
    );
    Ok(law)
}

/// Covariance of (∇T(z), ∇T(0), T(z), T(0)) assembled entry by entry.
pub fn joint_covariance(p: &CovarianceProfile, energy: f64) -> SMatrix<f64, 8, 8> {
    let e = energy / 3.0;
    let mut m = SMatrix::<f64, 8, 8>::zeros();
    for a in 0..3 {
        m[(a, a)] = e;
        m[(3 + a, 3 + a)] = e;
        for b in 0..3 {
            m[(a, 3 + b)] = -p.hessian[a][b];
            m[(3 + b, a)] = -p.hessian[a][b];
        }
        m[(a, 7)] = p.gradient[a];
        m[(7, a)] = p.gradient[a];
        m[(3 + a, 6)] = -p.gradient[a];
        m[(6, 3 + a)] = -p.gradient[a];
    }
    m[(6, 6)] = 1.0;
    m[(7, 7)] = 1.0;
    m[(6, 7)] = p.value;
    m[(7, 6)] = p.value;
    m
}

/// Ω = A − B C⁻¹ Bᵀ and μ = B C⁻¹ (u, u) straight from the joint covariance.
pub fn brute_force_conditional(
    freq: &FrequencySet,
    z: [f64; 3],
    u: f64,
) -> Result<(Vector6<f64>, Matrix6<f64>)> {
    let p = covariance_profile(freq, z);
    check_profile(&p)?;
    let m = joint_covariance(&p, freq.energy());
    let a: Matrix6<f64> = m.fixed_view::<6, 6>(0, 0).into_owned();
    let b: SMatrix<f64, 6, 2> = m.fixed_view::<6, 2>(0, 6).into_owned();
    let c: Matrix2<f64> = m.fixed_view::<2, 2>(6, 6).into_owned();
    let c_inv = c
        .try_inverse()
        .ok_or(KacRiceError::DegenerateCovariance(0.0))?;
    let omega = a - b * c_inv * b.transpose();
    let mean = b * c_inv * nalgebra::Vector2::new(u, u);
    Ok((mean, omega))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPointBound {
    pub q_value: f64,
    pub leading: f64,
    pub residual_scale: f64,
}

/// The conditional second moment E[Φ*(X(z,u))²] in closed form.
pub fn conditional_second_moment(
    freq: &FrequencySet,
    z: [f64; 3],
    u_norm: f64,
    ell: usize,
) -> Result<f64> {
    let p = covariance_profile(freq, z);
    let d = check_profile(&p)?;
    let e = freq.energy() / 3.0;
    let g2: f64 = p.gradient.iter().map(|x| x * x).sum();
    let l = ell as f64;
    Ok(falling_factorial(3, ell)
        * e.powi(ell as i32 - 1)
        * (e - l / 3.0 * g2 / d + u_norm * u_norm / 3.0 * g2 / (1.0 + p.value).powi(2)))
}

pub fn two_point_upper_bound(
    freq: &FrequencySet,
    z: [f64; 3],
    u_norm: f64,
    ell: usize,
) -> Result<TwoPointBound> {
    if !(1..=3).contains(&ell) {
        return Err(KacRiceError::InvalidEll(ell));
    }
    let p = covariance_profile(freq, z);
    let d = check_profile(&p)?;
    let bracket = conditional_second_moment(freq, z, u_norm, ell)?;
    let q_value = d.powf(-(ell as f64) / 2.0) * bracket;
    assert!(
        q_value >= -1e-9 * bracket.abs().max(1.0),
        "negative two-point bound"
    );
    let e = freq.energy() / 3.0;
    let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    let l = ell as f64;
    Ok(TwoPointBound {
        q_value,
        leading: falling_factorial(3, ell) * (1.0 - l / 3.0) * e.powf(l / 2.0) * norm.powf(-l),
        residual_scale: freq.energy().powf(l / 2.0 + 1.0) * norm.powf(2.0 - l),
    })
}

/// Least-squares line through (log x, log y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub expected_slope: f64,
    pub passed: bool,
}

/// Slope tolerance for the log–log fits.
pub const SLOPE_TOL: f64 = 0.3;

fn fit_loglog(xs: &[f64], ys: &[f64], expected: f64) -> Result<LogLogFit> {
    if xs.len() < 2 {
        return Err(KacRiceError::TooFewLags);
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.abs().ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(LogLogFit {
        slope,
        intercept: my - slope * mx,
        expected_slope: expected,
        passed: (slope - expected).abs() <= SLOPE_TOL,
    })
}

fn along(direction: [f64; 3], t: f64) -> [f64; 3] {
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    direction.map(|d| d / norm * t)
}

/// Fits |q − leading| against ‖z‖ along `direction` at the lag norms
/// `lags` (expected slope 2 − ℓ); for ℓ = 3 the leading term vanishes and q
/// itself is fitted (expected slope −1).
pub fn taylor_residual_check(
    freq: &FrequencySet,
    ell: usize,
    u_norm: f64,
    direction: [f64; 3],
    lags: &[f64],
) -> Result<LogLogFit> {
    let mut ys = Vec::with_capacity(lags.len());
    for &t in lags {
        let b = two_point_upper_bound(freq, along(direction, t), u_norm, ell)?;
        ys.push(b.q_value - b.leading);
    }
    fit_loglog(lags, &ys, 2.0 - ell as f64)
}

/// Fits |r(z) − 1 + (E/6)‖z‖²| against ‖z‖ (expected slope 4).
pub fn covariance_expansion_check(
    freq: &FrequencySet,
    direction: [f64; 3],
    lags: &[f64],
) -> Result<LogLogFit> {
    let e = freq.energy();
    let ys: Vec<f64> = lags
        .iter()
        .map(|&t| {
            let p = covariance_profile(freq, along(direction, t));
            e / 6.0 * t * t - p.one_minus_value
        })
        .collect();
    fit_loglog(lags, &ys, 4.0)
}

/// c₀/√E, after checking 1 − r² > 0 at `samples` random lags inside the ball.
pub fn nondegeneracy_radius(
    freq: &FrequencySet,
    c0: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let radius = c0 / freq.energy().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let dir: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let t = radius * rng.random::<f64>().cbrt();
        if t == 0.0 {
            continue;
        }
        let p = covariance_profile(freq, along(dir, t));
        if p.one_minus_value * (1.0 + p.value) <= 0.0 {
            return Err(KacRiceError::RadiusRejected { c0, norm: t });
        }
    }
    Ok(radius)
}

/// E‖X‖^m for X standard Gaussian in R^k.
pub fn chi_moment(k: usize, m: usize) -> f64 {
    let (k, m) = (k as f64, m as f64);
    (0.5 * m * 2f64.ln() + ln_gamma((k + m) / 2.0) - ln_gamma(k / 2.0)).exp()
}

/// Two-sample Kolmogorov–Smirnov statistic sup |F₁ − F₂|.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GramianCheck {
    pub mc_mean: f64,
    pub standard_error: f64,
    pub alpha_prediction: f64,
    pub ks_statistic: f64,
}

/// Φ* of Gaussian ℓ×k matrices against α(ℓ,k) and against a product of
/// independent χ_k, χ_{k−1}, …, χ_{k−ℓ+1} variables.
pub fn gramian_mean_check(ell: usize, k: usize, samples: usize, seed: u64) -> GramianCheck {
    assert!(ell >= 1 && ell <= k, "need 1 ≤ ℓ ≤ k");
    const BLOCK: usize = 1 << 14;
    let blocks = samples.div_ceil(BLOCK);
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BLOCK.min(samples - b * BLOCK);
            let chis: Vec<ChiSquared<f64>> = (0..ell)
                .map(|s| ChiSquared::new((k - s) as f64).expect("positive degrees"))
                .collect();
            let mut phis = Vec::with_capacity(count);
            let mut prods = Vec::with_capacity(count);
            let mut x = vec![0.0; ell * k];
            for _ in 0..count {
                for v in x.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let rows: Vec<&[f64]> = x.chunks(k).collect();
                phis.push(phi_star(&rows));
                prods.push(chis.iter().map(|c| c.sample(&mut rng).sqrt()).product());
            }
            (phis, prods)
        })
        .collect();
    let phis: Vec<f64> = parts.iter().flat_map(|p| p.0.iter().copied()).collect();
    let prods: Vec<f64> = parts.iter().flat_map(|p| p.1.iter().copied()).collect();
    let n = phis.len() as f64;
    let mean = phis.iter().sum::<f64>() / n;
    let var = phis.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    GramianCheck {
        mc_mean: mean,
        standard_error: (var / n).sqrt(),
        alpha_prediction: alpha(ell, k),
        ks_statistic: ks_two_sample(&phis, &prods),
    }
}

/// Mean and standard error of a sample.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Samples (∇T(z), ∇T(0), T(z), T(0)) from independent random waves.
pub fn sample_joint_vectors(
    freq: &FrequencySet,
    z: [f64; 3],
    samples: usize,
    seed: u64,
) -> Vec<[f64; 8]> {
    let scale = (freq.energy() / 3.0).sqrt();
    (0..samples)
        .into_par_iter()
        .map(|rep| {
            let w = make_coefficients(freq, seed, rep as u64, None)
                .expect("drawn coefficients are symmetric");
            let (vz, gz) = evaluate_point(freq, &w, z);
            let (v0, g0) = evaluate_point(freq, &w, [0.0; 3]);
            [
                gz[0] * scale,
                gz[1] * scale,
                gz[2] * scale,
                g0[0] * scale,
                g0[1] * scale,
                g0[2] * scale,
                vz,
                v0,
            ]
        })
        .collect()
}

/// Conditional covariance of the gradients given the two values, estimated
/// by least-squares residualization of simulated wave samples, with entrywise
/// standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionOracle {
    pub omega_hat: Matrix6<f64>,
    pub standard_error: Matrix6<f64>,
}

pub fn regression_oracle(
    freq: &FrequencySet,
    z: [f64; 3],
    samples: usize,
    seed: u64,
) -> RegressionOracle {
    let data = sample_joint_vectors(freq, z, samples, seed);
    let n = data.len();
    let x = DMatrix::from_fn(n, 2, |r, c| data[r][6 + c]);
    let y = DMatrix::from_fn(n, 6, |r, c| data[r][c]);
    let xtx = x.transpose() * &x;
    let beta = xtx.try_inverse().expect("level design is regular") * x.transpose() * &y;
    let resid = &y - &x * beta;
    let dof = (n - 2) as f64;
    let mut omega_hat = Matrix6::zeros();
    let mut se = Matrix6::zeros();
    for a in 0..6 {
        for b in 0..6 {
            let prods: Vec<f64> = (0..n).map(|r| resid[(r, a)] * resid[(r, b)]).collect();
            let sum: f64 = prods.iter().sum();
            omega_hat[(a, b)] = sum / dof;
            let (_, s) = mean_se(&prods);
            se[(a, b)] = s;
        }
    }
    RegressionOracle {
        omega_hat,
        standard_error: se,
    }
}

/// Draws ℓ independent conditional gradient pairs (one per wave, each with
/// its own level) as ℓ×3 matrices at z and at 0.
fn conditional_draw<R: Rng>(
    laws: &[(Vector6<f64>, Matrix6<f64>)],
    rng: &mut R,
) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let mut at_z = Vec::with_capacity(laws.len());
    let mut at_0 = Vec::with_capacity(laws.len());
    for (mean, factor) in laws {
        let g = Vector6::from_fn(|_, _| StandardNormal.sample(rng));
        let v = mean + factor * g;
        at_z.push([v[0], v[1], v[2]]);
        at_0.push([v[3], v[4], v[5]]);
    }
    (at_z, at_0)
}

fn laws_for(
    freq: &FrequencySet,
    z: [f64; 3],
    u: &[f64],
) -> Result<Vec<(Vector6<f64>, Matrix6<f64>)>> {
    u.iter()
        .map(|&ui| {
            let law = conditional_jacobian_law(freq, z, ui)?;
            Ok((Vector6::from_column_slice(&law.mean), law.factor()))
        })
        .collect()
}

fn phi_rows(rows: &[[f64; 3]]) -> f64 {
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    phi_star(&refs)
}

/// Monte Carlo E[Φ*(X(z,u))²] from the conditional law, with its standard error.
pub fn second_moment_monte_carlo(
    freq: &FrequencySet,
    z: [f64; 3],
    u: &[f64],
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let laws = laws_for(freq, z, u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..samples)
        .map(|_| phi_rows(&conditional_draw(&laws, &mut rng).0).powi(2))
        .collect();
    Ok(mean_se(&draws))
}

/// Monte Carlo K^{(ℓ)}(z,0;u) = E[Φ*(z)Φ*(0) | levels] · p(u,u), with its
/// standard error.
pub fn two_point_monte_carlo(
    freq: &FrequencySet,
    z: [f64; 3],
    u: &[f64],
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let laws = laws_for(freq, z, u)?;
    let p = covariance_profile(freq, z);
    let d = check_profile(&p)?;
    let density: f64 = u
        .iter()
        .map(|ui| (-ui * ui / (1.0 + p.value)).exp() / (2.0 * std::f64::consts::PI * d.sqrt()))
        .product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..samples)
        .map(|_| {
            let (a, b) = conditional_draw(&laws, &mut rng);
            phi_rows(&a) * phi_rows(&b) * density
        })
        .collect();
    Ok(mean_se(&draws))
}
