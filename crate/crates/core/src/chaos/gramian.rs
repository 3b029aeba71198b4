//! Gramian determinants Φ*(X) = √det(XXᵀ) of ℓ×k standard Gaussian
//! matrices and their exact projections onto Hermite products of degree ≤ 4.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use super::hermite::hermite;

#[derive(Debug, Error, PartialEq)]
pub enum GramianError {
    #[error("total Hermite degree {0} is not supported (only 0, 2, 4 and odd totals)")]
    UnsupportedDegree(u32),
    #[error("pattern shape does not match an {ell}×{k} matrix with ℓ ≤ k")]
    Shape { ell: usize, k: usize },
}

/// Volume of the unit ball in R^k.
pub fn unit_ball_volume(k: usize) -> f64 {
    std::f64::consts::PI.powf(k as f64 / 2.0) / gamma(1.0 + k as f64 / 2.0)
}

/// (k)_ℓ = k(k−1)⋯(k−ℓ+1).
pub fn falling_factorial(k: usize, ell: usize) -> f64 {
    (0..ell).map(|i| (k - i) as f64).product()
}

/// α(ℓ,k) = (k)_ℓ κ_k / ((2π)^{ℓ/2} κ_{k−ℓ}), the mean of Φ*_{ℓ,k}.
pub fn alpha(ell: usize, k: usize) -> f64 {
    assert!(ell <= k, "ℓ must not exceed k");
    falling_factorial(k, ell) * unit_ball_volume(k)
        / ((2.0 * std::f64::consts::PI).powf(ell as f64 / 2.0) * unit_ball_volume(k - ell))
}

/// √det(XXᵀ) for the ℓ×k matrix with rows `rows`, as the product of the
/// Gram–Schmidt residual norms.
pub fn phi_star(rows: &[&[f64]]) -> f64 {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    let mut volume = 1.0;
    for row in rows {
        let mut v = row.to_vec();
        for b in &basis {
            let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        volume *= norm;
        if norm == 0.0 {
            return 0.0;
        }
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    volume
}

/// |det| of a square matrix by partial-pivot elimination.
pub fn abs_det(rows: &[&[f64]]) -> f64 {
    let n = rows.len();
    let mut a: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        a.swap(c, p);
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for cc in c..n {
                a[r][cc] -= f * a[c][cc];
            }
        }
    }
    det.abs()
}

fn entries(
    ell: usize,
    k: usize,
    pattern: &[Vec<u32>],
) -> Result<Vec<(usize, usize, u32)>, GramianError> {
    if ell > k || ell == 0 || pattern.len() != ell || pattern.iter().any(|r| r.len() != k) {
        return Err(GramianError::Shape { ell, k });
    }
    let mut out = Vec::new();
    for (i, row) in pattern.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > 0 {
                out.push((i, j, p));
            }
        }
    }
    Ok(out)
}

/// E[Φ*_{ℓ,k}(X) Π H_{p_ij}(X_ij)] for a degree pattern of total 0, 2 or 4.
/// Odd totals vanish by the symmetry X ↦ −X.
pub fn gramian_hermite_expectation(
    ell: usize,
    k: usize,
    pattern: &[Vec<u32>],
) -> Result<f64, GramianError> {
    let e = entries(ell, k, pattern)?;
    let total: u32 = e.iter().map(|t| t.2).sum();
    let a = alpha(ell, k);
    let kf = k as f64;
    if total % 2 == 1 {
        return Ok(0.0);
    }
    match total {
        0 => Ok(a),
        2 => Ok(if e.len() == 1 { a / kf } else { 0.0 }),
        4 => {
            let mut degrees: Vec<u32> = e.iter().map(|t| t.2).collect();
            degrees.sort_unstable();
            Ok(match degrees.as_slice() {
                [4] => -3.0 * a / (kf * (kf + 2.0)),
                [2, 2] => {
                    let (i1, j1, _) = e[0];
                    let (i2, j2, _) = e[1];
                    if i1 == i2 || j1 == j2 {
                        -a / (kf * (kf + 2.0))
                    } else {
                        (kf + 3.0) * a / (kf * (kf - 1.0) * (kf + 2.0))
                    }
                }
                [1, 1, 1, 1] => {
                    let mut rows: Vec<usize> = e.iter().map(|t| t.0).collect();
                    let mut cols: Vec<usize> = e.iter().map(|t| t.1).collect();
                    rows.sort_unstable();
                    rows.dedup();
                    cols.sort_unstable();
                    cols.dedup();
                    if rows.len() == 2 && cols.len() == 2 {
                        -(kf + 1.0) * a / (kf * (kf - 1.0) * (kf + 2.0))
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            })
        }
        t => Err(GramianError::UnsupportedDegree(t)),
    }
}

/// The expectation divided by Π p_ij!, i.e. the coefficient of the
/// Hermite product in the chaos expansion of Φ*.
pub fn gramian_hermite_coefficient(
    ell: usize,
    k: usize,
    pattern: &[Vec<u32>],
) -> Result<f64, GramianError> {
    let e = entries(ell, k, pattern)?;
    let norm: f64 = e
        .iter()
        .map(|t| (1..=t.2).map(f64::from).product::<f64>())
        .product();
    Ok(gramian_hermite_expectation(ell, k, pattern)? / norm)
}

/// E[Φ*_{ℓ,k}(X) X_{i1 j1}^2 X_{i2 j2}^2] (or E[Φ* X⁴] when both entries coincide).
pub fn gramian_monomial_expectation(
    ell: usize,
    k: usize,
    e1: (usize, usize),
    e2: (usize, usize),
) -> f64 {
    let a = alpha(ell, k);
    let kf = k as f64;
    if e1 == e2 {
        3.0 * a * (kf + 1.0) * (kf + 3.0) / (kf * (kf + 2.0))
    } else if e1.0 == e2.0 || e1.1 == e2.1 {
        a * (kf + 1.0) * (kf + 3.0) / (kf * (kf + 2.0))
    } else {
        a * (kf + 1.0) * ((kf + 1.0) * (kf + 2.0) - (kf + 3.0)) / (kf * (kf - 1.0) * (kf + 2.0))
    }
}

/// One labelled entry of the coefficient table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GramianEntry {
    pub label: String,
    pub ell: usize,
    pub k: usize,
    pub pattern: Vec<Vec<u32>>,
    pub expectation: f64,
    pub coefficient: f64,
}

fn pattern_from(ell: usize, k: usize, cells: &[(usize, usize, u32)]) -> Vec<Vec<u32>> {
    let mut p = vec![vec![0; k]; ell];
    for &(i, j, d) in cells {
        p[i][j] = d;
    }
    p
}

/// Representative patterns of every support class of degree ≤ 4 that fits
/// an ℓ×k matrix, together with representatives of the vanishing classes.
pub fn gramian_table(ell: usize, k: usize) -> Vec<GramianEntry> {
    let mut specs: Vec<(&str, Vec<(usize, usize, u32)>)> = vec![
        ("zero", vec![]),
        ("H2", vec![(0, 0, 2)]),
        ("H1.H1 same row", vec![(0, 0, 1), (0, 1, 1)]),
        ("H4", vec![(0, 0, 4)]),
        ("H3.H1", vec![(0, 0, 3), (0, 1, 1)]),
        ("H2.H1.H1", vec![(0, 0, 2), (0, 1, 1), (0, 2, 1)]),
        ("H2.H2 same row", vec![(0, 0, 2), (0, 1, 2)]),
        ("H1", vec![(0, 0, 1)]),
        ("H3", vec![(0, 0, 3)]),
    ];
    if k < 3 {
        specs.retain(|s| s.1.iter().all(|c| c.1 < k));
    }
    if ell >= 2 {
        specs.push(("H2.H2 same column", vec![(0, 0, 2), (1, 0, 2)]));
        specs.push((
            "H2.H2 distinct rows and columns",
            vec![(0, 0, 2), (1, 1, 2)],
        ));
        specs.push((
            "H1^4 square",
            vec![(0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1)],
        ));
        if k >= 3 {
            specs.push((
                "H1^4 two rows, three columns",
                vec![(0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 2, 1)],
            ));
        }
    }
    if ell >= 3 {
        specs.push((
            "H1^4 three rows",
            vec![(0, 0, 1), (0, 1, 1), (1, 0, 1), (2, 1, 1)],
        ));
    }
    specs
        .into_iter()
        .filter_map(|(label, cells)| {
            let pattern = pattern_from(ell, k, &cells);
            let total: u32 = cells.iter().map(|c| c.2).sum();
            if pattern.iter().flatten().sum::<u32>() != total {
                return None;
            }
            Some(GramianEntry {
                label: label.to_string(),
                ell,
                k,
                expectation: gramian_hermite_expectation(ell, k, &pattern).ok()?,
                coefficient: gramian_hermite_coefficient(ell, k, &pattern).ok()?,
                pattern,
            })
        })
        .collect()
}

/// Monte Carlo mean and standard error of Φ* Π H_p for each pattern.
pub fn gramian_monte_carlo(
    ell: usize,
    k: usize,
    patterns: &[Vec<Vec<u32>>],
    samples: usize,
    seed: u64,
) -> Vec<(f64, f64)> {
    const BLOCK: usize = 1 << 16;
    let blocks = samples.div_ceil(BLOCK);
    let partial: Vec<Vec<(f64, f64)>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BLOCK.min(samples - b * BLOCK);
            let mut acc = vec![(0.0, 0.0); patterns.len()];
            let mut x = vec![0.0; ell * k];
            let mut h = vec![[0.0; 5]; ell * k];
            for _ in 0..count {
                for (v, hv) in x.iter_mut().zip(h.iter_mut()) {
                    *v = StandardNormal.sample(&mut rng);
                    for (d, slot) in hv.iter_mut().enumerate() {
                        *slot = hermite(d, *v);
                    }
                }
                let rows: Vec<&[f64]> = x.chunks(k).collect();
                let phi = phi_star(&rows);
                for (p, a) in patterns.iter().zip(acc.iter_mut()) {
                    let mut prod = phi;
                    for (i, row) in p.iter().enumerate() {
                        for (j, &d) in row.iter().enumerate() {
                            if d > 0 {
                                prod *= h[i * k + j][d as usize];
                            }
                        }
                    }
                    a.0 += prod;
                    a.1 += prod * prod;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![(0.0, 0.0); patterns.len()];
    for block in partial {
        for (t, b) in total.iter_mut().zip(block) {
            t.0 += b.0;
            t.1 += b.1;
        }
    }
    let nf = samples as f64;
    total
        .into_iter()
        .map(|(s, s2)| {
            let mean = s / nf;
            let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
            (mean, (var / nf).sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn alpha_values() {
        let c = 4.0 / (2.0 * PI).sqrt();
        assert!((alpha(1, 3) - c).abs() < 1e-14);
        assert!((alpha(3, 3) - c).abs() < 1e-14);
        assert!((alpha(2, 3) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn normalized_coefficients_at_k3() {
        for ell in 1..=3 {
            let a = alpha(ell, 3);
            let mut p = vec![vec![0; 3]; ell];
            p[0][0] = 4;
            assert!((gramian_hermite_coefficient(ell, 3, &p).unwrap() + a / 120.0).abs() < 1e-15);
            p[0][0] = 2;
            assert!((gramian_hermite_coefficient(ell, 3, &p).unwrap() - a / 6.0).abs() < 1e-15);
            p[0][1] = 2;
            assert!((gramian_hermite_coefficient(ell, 3, &p).unwrap() + a / 60.0).abs() < 1e-15);
        }
        let a = alpha(2, 3);
        let p = vec![vec![2, 0, 0], vec![0, 2, 0]];
        assert!((gramian_hermite_coefficient(2, 3, &p).unwrap() - a / 20.0).abs() < 1e-15);
        let p = vec![vec![2, 0, 0], vec![2, 0, 0]];
        assert!((gramian_hermite_coefficient(2, 3, &p).unwrap() + a / 60.0).abs() < 1e-15);
        let p = vec![vec![1, 1, 0], vec![1, 1, 0]];
        assert!((gramian_hermite_coefficient(2, 3, &p).unwrap() + 2.0 * a / 15.0).abs() < 1e-15);
        let p = vec![vec![2, 0, 0], vec![2, 0, 0]];
        assert!((gramian_hermite_expectation(2, 3, &p).unwrap() + 2.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn odd_and_unsupported() {
        assert_eq!(gramian_hermite_expectation(1, 3, &[vec![3, 0, 0]]), Ok(0.0));
        assert_eq!(gramian_hermite_expectation(1, 3, &[vec![2, 1, 0]]), Ok(0.0));
        assert_eq!(
            gramian_hermite_expectation(1, 3, &[vec![6, 0, 0]]),
            Err(GramianError::UnsupportedDegree(6))
        );
        assert!(gramian_hermite_expectation(2, 3, &[vec![0, 0, 0]]).is_err());
    }

    #[test]
    fn square_case_paths_agree() {
        let m = [[0.3, -1.2, 0.7], [1.1, 0.4, -0.5], [-0.9, 2.0, 0.1]];
        let rows: Vec<&[f64]> = m.iter().map(|r| r.as_slice()).collect();
        assert!((phi_star(&rows) - abs_det(&rows)).abs() < 1e-12);
    }

    #[test]
    fn table_contains_every_class() {
        let t = gramian_table(3, 3);
        assert!(t.iter().any(|e| e.label == "H1^4 square"));
        assert!(t.iter().all(|e| e.pattern.len() == 3));
        assert_eq!(gramian_table(1, 3).len(), 9);
    }
}
