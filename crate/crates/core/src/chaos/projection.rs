//! The fourth chaotic component of the nodal volume, its building blocks,
//! and the reference constants it is measured against.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::field::{parseval_functionals, FieldError, FieldGrid, WaveCoefficients};
use crate::lattice::{enumerate_frequencies, fourth_moment_limit, lattice_moments, FrequencySet};

use super::gramian::alpha;
use super::hermite::{gaussian_density, hermite};
use super::spectral::{w_family, ContractedStatistics, SpectralStatistics};
use super::ChaosError;

/// b₁, b₂, b₂′, b₃, b₄, b₅ for one pair i₁ < i₂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRv2 {
    pub i1: usize,
    pub i2: usize,
    pub b1: f64,
    pub b2: f64,
    pub b2p: f64,
    pub b3: f64,
    pub b4: f64,
    pub b5: f64,
}

/// The grid integrals a₁…a₄ of each wave and b₁…b₅ of each pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rv2Values {
    pub n: u64,
    pub big_n: usize,
    pub a: Vec<[f64; 4]>,
    pub b: Vec<PairRv2>,
}

fn sum_off_diag(f: impl Fn(usize, usize) -> f64) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        for j in 0..3 {
            if k != j {
                s += f(k, j);
            }
        }
    }
    s
}

fn sum_upper(f: impl Fn(usize, usize) -> f64) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        for j in k + 1..3 {
            s += f(k, j);
        }
    }
    s
}

/// a and b values as exact combinations of the spectral statistics.
pub fn rv2_closed_form(stats: &SpectralStatistics) -> Rv2Values {
    let count = stats.big_n as f64;
    let a = stats
        .fields
        .iter()
        .map(|f| {
            let x = &f.x;
            let tr_kk: f64 = x.kk.iter().sum();
            let a1 = 3.0 / count * (f.w * f.w - f.r + x.x / 3.0);
            let a2 = 3.0 / count * (f.w * f.w - f.r - tr_kk);
            let a3 = 27.0 / count
                * (0..3)
                    .map(|k| f.w_jk[k][k].powi(2) - f.r_jk[k][k] + x.kkjj[k][k] / 3.0)
                    .sum::<f64>();
            let a4 = 9.0 / count
                * sum_upper(|k, j| {
                    f.w_jk[k][k] * f.w_jk[j][j] + 2.0 * f.w_jk[k][j].powi(2) - 3.0 * f.r_jk[k][j]
                        + x.kkjj[k][j]
                });
            [a1, a2, a3, a4]
        })
        .collect();
    let b = stats
        .pairs
        .iter()
        .map(|p| {
            let (f1, f2) = (&stats.fields[p.i1], &stats.fields[p.i2]);
            let x = &p.x;
            let m_k2: f64 = p.m_j.iter().map(|v| v * v).sum();
            let base = f1.w * f2.w + 2.0 * m_k2 - 2.0 * p.r + p.s;
            // the gradient sits on the second wave in b₂ and on the first in b₂′
            let b2 = 3.0 / count * (base - x.kk_rev.iter().sum::<f64>());
            let b2p = 3.0 / count * (base - x.kk.iter().sum::<f64>());
            let b1 = (f1.w * f2.w + 2.0 * p.m * p.m - 2.0 * p.r - p.s + x.x) / count;
            let mixed = |k: usize, j: usize| -2.0 * p.r_jk[k][j] - p.s_jk[k][j];
            let b3 = 9.0 / count
                * sum_off_diag(|k, j| {
                    f1.w_jk[k][k] * f2.w_jk[j][j]
                        + 2.0 * p.m_jk[k][j].powi(2)
                        + mixed(k, j)
                        + x.kkjj[k][j]
                });
            let b4 = 9.0 / count
                * (0..3)
                    .map(|k| {
                        f1.w_jk[k][k] * f2.w_jk[k][k]
                            + 2.0 * p.m_jk[k][k].powi(2)
                            + mixed(k, k)
                            + x.kkjj[k][k]
                    })
                    .sum::<f64>();
            let b5 = 9.0 / count
                * sum_upper(|k, j| {
                    f1.w_jk[k][j] * f2.w_jk[k][j]
                        + p.m_jk[k][k] * p.m_jk[j][j]
                        + p.m_jk[k][j].powi(2)
                        + mixed(k, j)
                        + x.kjkj[k][j]
                });
            PairRv2 {
                i1: p.i1,
                i2: p.i2,
                b1,
                b2,
                b2p,
                b3,
                b4,
                b5,
            }
        })
        .collect();
    Rv2Values {
        n: stats.n,
        big_n: stats.big_n,
        a,
        b,
    }
}

/// The same integrals as grid averages, exact once the resolution exceeds
/// 4⌊√n⌋.
pub fn rv2_numerical(grids: &[FieldGrid], big_n: usize) -> Result<Rv2Values, ChaosError> {
    let first = grids.first().ok_or(ChaosError::InvalidEll(0))?;
    if grids.len() > 3 {
        return Err(ChaosError::InvalidEll(grids.len()));
    }
    let (n, m) = (first.n, first.resolution);
    let bound = 4 * (n as f64).sqrt().floor() as usize;
    if m <= bound {
        return Err(FieldError::ResolutionTooLow { m, bound }.into());
    }
    if grids.iter().any(|g| g.n != n || g.resolution != m) {
        return Err(ChaosError::Mismatch);
    }
    let chans: Vec<[&[f64]; 4]> = grids
        .iter()
        .map(|g| Ok([g.channel(0)?, g.channel(1)?, g.channel(2)?, g.channel(3)?]))
        .collect::<Result<_, FieldError>>()?;
    let points = m * m * m;
    let mean = |f: &dyn Fn(usize) -> f64| (0..points).map(f).sum::<f64>() / points as f64;
    let h2 = |x: f64| x * x - 1.0;

    let a = chans
        .iter()
        .map(|c| {
            let a1 = mean(&|p| hermite(4, c[0][p]));
            let a2 = mean(&|p| h2(c[0][p]) * (1..4).map(|k| h2(c[k][p])).sum::<f64>());
            let a3 = mean(&|p| (1..4).map(|k| hermite(4, c[k][p])).sum::<f64>());
            let a4 = mean(&|p| sum_upper(|k, j| h2(c[k + 1][p]) * h2(c[j + 1][p])));
            [a1, a2, a3, a4]
        })
        .collect();
    let mut b = Vec::new();
    for i1 in 0..chans.len() {
        for i2 in i1 + 1..chans.len() {
            let (c, d) = (&chans[i1], &chans[i2]);
            b.push(PairRv2 {
                i1,
                i2,
                b1: mean(&|p| h2(c[0][p]) * h2(d[0][p])),
                b2: mean(&|p| h2(c[0][p]) * (1..4).map(|k| h2(d[k][p])).sum::<f64>()),
                b2p: mean(&|p| h2(d[0][p]) * (1..4).map(|k| h2(c[k][p])).sum::<f64>()),
                b3: mean(&|p| sum_off_diag(|k, j| h2(c[k + 1][p]) * h2(d[j + 1][p]))),
                b4: mean(&|p| (1..4).map(|k| h2(c[k][p]) * h2(d[k][p])).sum::<f64>()),
                b5: mean(&|p| {
                    sum_upper(|k, j| c[k + 1][p] * c[j + 1][p] * d[k + 1][p] * d[j + 1][p])
                }),
            });
        }
    }
    Ok(Rv2Values { n, big_n, a, b })
}

fn energy(n: u64) -> f64 {
    4.0 * PI * PI * n as f64
}

/// 2 α(ℓ,3) / (2π)^{ℓ/2}.
fn prefactor(ell: usize) -> f64 {
    2.0 * alpha(ell, 3) / (2.0 * PI).powf(ell as f64 / 2.0)
}

/// proj₄ assembled from the a and b integrals with the Gramian–Hermite
/// coefficients.
pub fn proj4_from_rv2(rv2: &Rv2Values) -> f64 {
    let ell = rv2.a.len();
    let a: f64 = rv2
        .a
        .iter()
        .map(|a| a[0] / 16.0 - a[1] / 24.0 - a[2] / 240.0 - a[3] / 120.0)
        .sum();
    let b: f64 = rv2
        .b
        .iter()
        .map(|b| b.b1 / 8.0 - (b.b2 + b.b2p) / 24.0 + b.b3 / 40.0 - b.b4 / 120.0 - b.b5 / 15.0)
        .sum();
    (energy(rv2.n) / 3.0).powf(ell as f64 / 2.0) * prefactor(ell) * (a + b)
}

/// μ^{(i)}(n), including its X terms.
pub fn mu(field: &super::spectral::ContractedField) -> f64 {
    field.r / 20.0 + field.x.x / 16.0 + field.x.tr_kk / 8.0 - 3.0 / 80.0 * field.x.tr_kkjj
}

/// η^{(i₁,i₂)}(n), including its X terms. The b₅ integral carries the
/// crossed weight λ_kλ′_jλ″_kλ‴_j, so both index contractions of the
/// fourth-order X sums appear.
pub fn eta(pair: &super::spectral::ContractedPair) -> f64 {
    let x = &pair.x;
    0.4 * pair.r - 0.3 * pair.s + x.x / 8.0 + x.tr_kk / 4.0 + 9.0 / 40.0 * x.tr_kkjj
        - 0.3 * x.tr_kjkj
}

/// (E_n/3)^{ℓ/2} (Σ A^{(i₁)} + Σ B^{(i₁,i₂)}) with A and B in their
/// quadratic-form representation.
pub fn proj4_contracted(stats: &ContractedStatistics) -> f64 {
    let count = stats.big_n as f64;
    let mut total = 0.0;
    for f in &stats.fields {
        let w = &f.w_jk;
        total += -sum_upper(|k, j| (w[k][k] - w[j][j]).powi(2)) / 40.0
            - 0.15 * sum_upper(|k, j| w[k][j].powi(2))
            + mu(f);
    }
    for p in &stats.pairs {
        let (w1, w2) = (&stats.fields[p.i1].w_jk, &stats.fields[p.i2].w_jk);
        let m = &p.m_jk;
        total += -0.1 * sum_upper(|k, j| (w1[k][k] - w1[j][j]) * (w2[k][k] - w2[j][j]))
            - 0.6 * sum_upper(|k, j| w1[k][j] * w2[k][j])
            + 0.1 * (0..3).map(|k| m[k][k].powi(2)).sum::<f64>()
            - 0.05 * sum_off_diag(|k, j| m[k][k] * m[j][j])
            - 0.5 * p.m_j.iter().map(|v| v * v).sum::<f64>()
            + 0.3 * sum_upper(|k, j| m[k][j].powi(2))
            + eta(p);
    }
    (energy(stats.n) / 3.0).powf(stats.ell as f64 / 2.0) * prefactor(stats.ell) / count * total
}

pub fn proj4(stats: &SpectralStatistics) -> f64 {
    proj4_contracted(&stats.contract())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowOrderProjections {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
}

/// Chaos components of order 0, 1 and 2 of the normalized nodal functional
/// at levels u.
pub fn low_order_projections(
    sets: &[WaveCoefficients],
    freq: &FrequencySet,
    levels: &[f64],
) -> Result<LowOrderProjections, ChaosError> {
    let ell = sets.len();
    if !(1..=3).contains(&ell) {
        return Err(ChaosError::InvalidEll(ell));
    }
    if levels.len() != ell {
        return Err(ChaosError::Mismatch);
    }
    let a = alpha(ell, 3);
    let gammas: f64 = levels.iter().map(|&u| gaussian_density(u)).product();
    let p0 = a * gammas;
    let parseval: Vec<_> = sets.iter().map(|s| parseval_functionals(freq, s)).collect();
    let p1 = p0
        * parseval
            .iter()
            .zip(levels)
            .map(|(p, u)| p.mean * u)
            .sum::<f64>();
    let p2 = a / 2.0
        * gammas
        * parseval
            .iter()
            .zip(sets)
            .zip(levels)
            .map(|((p, s), u)| {
                let (w, _) = w_family(freq, s);
                u * u * w / (freq.cardinality() as f64).sqrt() + p.energy_defect
            })
            .sum::<f64>();
    Ok(LowOrderProjections { p0, p1, p2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStatistics {
    pub n: u64,
    pub big_n: usize,
    pub ell: usize,
    pub expected_volume: f64,
    pub variance_asymptote: f64,
    pub c_n: f64,
    /// Limit covariance of (W₁₁, W₁₂, W₁₃, W₂₂, W₂₃, W₃₃).
    pub sigma_w: [[f64; 6]; 6],
    /// Limit covariance of (M₁, M₂, M₃, M₁₁, M₁₂, M₁₃, M₂₂, M₂₃, M₃₃).
    pub sigma_m: [[f64; 9]; 9],
    /// The same covariances at this n, from the lattice fourth moments.
    pub sigma_w_exact: [[f64; 6]; 6],
    pub sigma_m_exact: [[f64; 9]; 9],
}

/// Index pairs of the upper triangle in the order 11, 12, 13, 22, 23, 33.
pub const UPPER_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// ℓ/250 + (ℓ(ℓ−1)/2)·76/375.
pub fn variance_constant(ell: usize) -> f64 {
    let pairs = (ell * (ell - 1) / 2) as f64;
    ell as f64 / 250.0 + pairs * 76.0 / 375.0
}

pub fn reference_statistics(n: u64, ell: usize) -> Result<ReferenceStatistics, ChaosError> {
    if !(1..=3).contains(&ell) {
        return Err(ChaosError::InvalidEll(ell));
    }
    let freq = enumerate_frequencies(n)?;
    Ok(reference_statistics_for(&freq, ell))
}

pub fn reference_statistics_for(freq: &FrequencySet, ell: usize) -> ReferenceStatistics {
    let e = freq.energy();
    let count = freq.cardinality() as f64;
    let scale = (e / 3.0).powf(ell as f64 / 2.0);
    let expected_volume = scale * alpha(ell, 3) / (2.0 * PI).powf(ell as f64 / 2.0);
    let c_n = scale * prefactor(ell) / count;
    let moments = lattice_moments(freq);
    let fourth = |a: (usize, usize), b: (usize, usize), exact: bool| {
        if exact {
            moments.fourth_moments[a.0][a.1][b.0][b.1]
        } else {
            fourth_moment_limit(a.0, a.1, b.0, b.1)
        }
    };
    let sigma_w_of = |exact: bool| {
        let mut s = [[0.0; 6]; 6];
        for (r, &p) in UPPER_PAIRS.iter().enumerate() {
            for (c, &q) in UPPER_PAIRS.iter().enumerate() {
                s[r][c] = 2.0 * fourth(p, q, exact);
            }
        }
        s
    };
    let sigma_m_of = |exact: bool| {
        let mut s = [[0.0; 9]; 9];
        for j in 0..3 {
            s[j][j] = if exact {
                moments.second_moment[j][j]
            } else {
                1.0 / 3.0
            };
            for k in 0..3 {
                if exact {
                    s[j][k] = moments.second_moment[j][k];
                }
            }
        }
        for (r, &p) in UPPER_PAIRS.iter().enumerate() {
            for (c, &q) in UPPER_PAIRS.iter().enumerate() {
                s[3 + r][3 + c] = fourth(p, q, exact);
            }
        }
        s
    };
    ReferenceStatistics {
        n: freq.n,
        big_n: freq.cardinality(),
        ell,
        expected_volume,
        variance_asymptote: c_n * c_n * variance_constant(ell),
        c_n,
        sigma_w: sigma_w_of(false),
        sigma_m: sigma_m_of(false),
        sigma_w_exact: sigma_w_of(true),
        sigma_m_exact: sigma_m_of(true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::spectral::compute_rv1;
    use crate::field::{exact_resolution, make_coefficients, make_family, synthesize_grid};
    use num_complex::Complex64;

    fn grids(freq: &FrequencySet, sets: &[WaveCoefficients]) -> Vec<FieldGrid> {
        let m = exact_resolution(freq.n, 4);
        sets.iter()
            .map(|s| synthesize_grid(freq, s, m).unwrap())
            .collect()
    }

    #[test]
    fn crossed_weight_in_b5() {
        // with the straight weight λ_kλ′_kλ″_jλ‴_j in place of the crossed one
        // the identity for b₅ fails by the X-family difference
        let freq = enumerate_frequencies(26).unwrap();
        let sets = make_family(&freq, 4, 0, 2);
        let stats = compute_rv1(&sets, &freq).unwrap();
        let numeric = rv2_numerical(&grids(&freq, &sets), freq.cardinality()).unwrap();
        let closed = rv2_closed_form(&stats);
        let p = &stats.pairs[0];
        let shift: f64 =
            9.0 / freq.cardinality() as f64 * sum_upper(|k, j| p.x.kkjj[k][j] - p.x.kjkj[k][j]);
        assert!((closed.b[0].b5 - numeric.b[0].b5).abs() < 1e-9 * numeric.b[0].b5.abs().max(1e-3));
        assert!(shift.abs() > 1e-3, "X-family difference {shift}");
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for n in [5, 17, 26] {
            let freq = enumerate_frequencies(n).unwrap();
            let sets = make_family(&freq, 21, 0, 3);
            let stats = compute_rv1(&sets, &freq).unwrap();
            let closed = rv2_closed_form(&stats);
            let numeric = rv2_numerical(&grids(&freq, &sets), freq.cardinality()).unwrap();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-3);
            for (x, y) in closed.a.iter().zip(&numeric.a) {
                for q in 0..4 {
                    assert!(close(x[q], y[q]), "a{} {} {}", q + 1, x[q], y[q]);
                }
            }
            for (x, y) in closed.b.iter().zip(&numeric.b) {
                assert!(close(x.b1, y.b1), "b1 {} {}", x.b1, y.b1);
                assert!(close(x.b2, y.b2), "b2 {} {}", x.b2, y.b2);
                assert!(close(x.b2p, y.b2p), "b2' {} {}", x.b2p, y.b2p);
                assert!(close(x.b3, y.b3), "b3 {} {}", x.b3, y.b3);
                assert!(close(x.b4, y.b4), "b4 {} {}", x.b4, y.b4);
                assert!(close(x.b5, y.b5), "b5 {} {}", x.b5, y.b5);
            }
        }
    }

    #[test]
    fn quadratic_form_matches_integrals() {
        for n in [3, 6, 9] {
            let freq = enumerate_frequencies(n).unwrap();
            for ell in 1..=3 {
                let sets = make_family(&freq, 8, ell as u64, ell);
                let stats = compute_rv1(&sets, &freq).unwrap();
                let direct = proj4_from_rv2(&rv2_closed_form(&stats));
                let quad = proj4(&stats);
                assert!(
                    (direct - quad).abs() < 1e-10 * direct.abs().max(1.0),
                    "n={n} ℓ={ell}: {direct} {quad}"
                );
            }
        }
    }

    #[test]
    fn constant_coefficients_closed_form() {
        let freq = enumerate_frequencies(1).unwrap();
        let ones = vec![Complex64::new(1.0, 0.0); 6];
        let w = make_coefficients(&freq, 0, 0, Some(&ones)).unwrap();
        let rv2 = rv2_closed_form(&compute_rv1(&[w], &freq).unwrap());
        assert!((rv2.a[0][0] - 3.0 / 6.0 * (0.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn low_order_at_zero_level() {
        let freq = enumerate_frequencies(9).unwrap();
        let sets = make_family(&freq, 1, 0, 2);
        let p = low_order_projections(&sets, &freq, &[0.0, 0.0]).unwrap();
        assert!((p.p0 - 2.0 / (2.0 * PI)).abs() < 1e-15);
        assert_eq!(p.p1, 0.0);
        assert!(p.p2.abs() < 1e-12);
    }

    #[test]
    fn reference_values() {
        let r = reference_statistics(9, 2).unwrap();
        assert!((r.expected_volume - energy(9) / (3.0 * PI)).abs() < 1e-9);
        let r1 = reference_statistics(9, 1).unwrap();
        let nn = r1.big_n as f64;
        let target = energy(9) / (nn * nn) * 8.0 / (375.0 * PI * PI);
        assert!((r1.variance_asymptote - target).abs() < 1e-12 * target);
        assert_eq!(r1.sigma_m[0][0], 1.0 / 3.0);
        assert!((r1.sigma_m_exact[1][1] - 1.0 / 3.0).abs() < 1e-15);
    }
}
