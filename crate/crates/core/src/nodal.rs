//! Nodal volumes from sampled grids: surface area of one wave's zero set,
//! length of the intersection curve of two, the number of common zeros of
//! three, and the ε-co-area approximation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaos::gramian::phi_star;
use crate::field::{
    default_resolution, evaluate_point, synthesize_values, FieldError, FieldGrid, WaveCoefficients,
};
use crate::lattice::FrequencySet;
use crate::nodal_tables::TRI_TABLE;

/// Corner values at or below this magnitude are treated as exact zeros.
pub const ZERO_CORNER: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;
pub const NEWTON_TOL: f64 = 1e-10;
/// Minimum number of grid nodes inside the ε-band for a co-area estimate.
pub const MIN_BAND_NODES: usize = 100;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

#[derive(Debug, Error)]
pub enum NodalError {
    #[error("both grids come from the same coefficients; their intersection is not a curve")]
    IdenticalFields,
    #[error("only {passing} grid nodes fall inside the ε-band (need {MIN_BAND_NODES})")]
    EpsilonTooSmall { passing: usize },
    #[error("grids differ in n or resolution")]
    Mismatch,
    #[error("expected 1 to 3 fields, got {0}")]
    InvalidEll(usize),
    #[error(transparent)]
    Field(#[from] FieldError),
}

pub type Result<T> = std::result::Result<T, NodalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Cells,
    Coarea,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodalDiagnostics {
    /// Corners whose value was numerically zero and nudged to +1e−12.
    pub nudged_corners: u64,
    /// Cubes where both fields change sign but their linear fits are
    /// parallel, so no intersection line is defined; such cubes are skipped.
    pub ambiguous_cells: u64,
    /// Cells where Newton stalled or used up its iterations without a root.
    pub newton_failures: u64,
}

impl NodalDiagnostics {
    fn merge(self, o: Self) -> Self {
        NodalDiagnostics {
            nudged_corners: self.nudged_corners + o.nudged_corners,
            ambiguous_cells: self.ambiguous_cells + o.ambiguous_cells,
            newton_failures: self.newton_failures + o.newton_failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalEstimate {
    pub value: f64,
    pub ell: usize,
    pub estimator: Estimator,
    pub resolution: usize,
    pub epsilon: Option<f64>,
    pub diagnostics: NodalDiagnostics,
}

fn nudge(v: f64) -> (f64, bool) {
    if v.abs() <= ZERO_CORNER {
        (ZERO_CORNER, true)
    } else {
        (v, false)
    }
}

fn grid_index(m: usize, i: usize, j: usize, k: usize) -> usize {
    ((i % m) * m + j % m) * m + k % m
}

fn cube_corners(
    values: &[f64],
    m: usize,
    i: usize,
    j: usize,
    k: usize,
    nudged: &mut u64,
) -> [f64; 8] {
    let mut out = [0.0; 8];
    for (c, off) in CORNERS.iter().enumerate() {
        let (v, hit) = nudge(values[grid_index(m, i + off[0], j + off[1], k + off[2])]);
        out[c] = v;
        *nudged += hit as u64;
    }
    out
}

/// Vertex on the edge between two corners of opposite sign, in cube units.
fn edge_vertex(corners: &[f64; 8], edge: usize) -> [f64; 3] {
    let [a, b] = EDGES[edge];
    let t = corners[a] / (corners[a] - corners[b]);
    let (pa, pb) = (CORNERS[a], CORNERS[b]);
    [0, 1, 2].map(|d| pa[d] as f64 + t * (pb[d] as f64 - pa[d] as f64))
}

/// Triangles of one cube in cube units. Complementary sign patterns share
/// the same triangulation so that T and −T give identical surfaces.
fn cube_triangles(corners: &[f64; 8]) -> Vec<[[f64; 3]; 3]> {
    let mut case = 0usize;
    for (c, v) in corners.iter().enumerate() {
        if *v < 0.0 {
            case |= 1 << c;
        }
    }
    let row = &TRI_TABLE[case.min(255 - case)];
    row.chunks(3)
        .take_while(|t| t[0] >= 0)
        .map(|t| [0, 1, 2].map(|q| edge_vertex(corners, t[q] as usize)))
        .collect()
}

fn triangle_area(t: &[[f64; 3]; 3]) -> f64 {
    let u = [0, 1, 2].map(|d| t[1][d] - t[0][d]);
    let v = [0, 1, 2].map(|d| t[2][d] - t[0][d]);
    let c = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

/// Area of {T = 0} on the unit torus by marching cubes on the periodic grid.
pub fn estimate_hypersurface_area(grid: &FieldGrid) -> NodalEstimate {
    let m = grid.resolution;
    let cell_area = 1.0 / (m * m) as f64;
    let slabs: Vec<(f64, u64)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut area = 0.0;
            let mut nudged = 0;
            for j in 0..m {
                for k in 0..m {
                    let corners = cube_corners(&grid.values, m, i, j, k, &mut nudged);
                    for t in cube_triangles(&corners) {
                        area += triangle_area(&t);
                    }
                }
            }
            (area * cell_area, nudged)
        })
        .collect();
    // fixed-order reduction keeps repeated runs bit-identical
    let (value, nudged) = slabs.iter().fold((0.0, 0), |(a, c), (x, y)| (a + x, c + y));
    NodalEstimate {
        value,
        ell: 1,
        estimator: Estimator::Cells,
        resolution: m,
        epsilon: None,
        diagnostics: NodalDiagnostics {
            nudged_corners: nudged,
            ..Default::default()
        },
    }
}

/// Writes the ℓ = 1 triangle soup, one "v x y z" line per vertex and one
/// "f i j k" line (1-based) per triangle, in torus coordinates.
pub fn write_mesh(path: &Path, grid: &FieldGrid) -> std::io::Result<usize> {
    let m = grid.resolution;
    let mut out = BufWriter::new(File::create(path)?);
    let mut nudged = 0;
    let mut count = 0;
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let corners = cube_corners(&grid.values, m, i, j, k, &mut nudged);
                for t in cube_triangles(&corners) {
                    for v in &t {
                        let p = [(i as f64 + v[0]), (j as f64 + v[1]), (k as f64 + v[2])]
                            .map(|c| c / m as f64);
                        writeln!(out, "v {} {} {}", p[0], p[1], p[2])?;
                    }
                    writeln!(
                        out,
                        "f {} {} {}",
                        3 * count + 1,
                        3 * count + 2,
                        3 * count + 3
                    )?;
                    count += 1;
                }
            }
        }
    }
    out.flush()?;
    Ok(count)
}

/// Least-squares linear fit c + g·(x − ½) of the eight corner values, in
/// cube units.
fn linear_fit(h: &[f64; 8]) -> (f64, [f64; 3]) {
    let c = h.iter().sum::<f64>() / 8.0;
    let g = [0, 1, 2].map(|d| {
        CORNERS
            .iter()
            .zip(h)
            .map(|(p, v)| if p[d] == 1 { *v } else { -*v })
            .sum::<f64>()
            / 4.0
    });
    (c, g)
}

fn changes_sign(h: &[f64; 8]) -> bool {
    let neg = h.iter().filter(|v| **v < 0.0).count();
    neg > 0 && neg < 8
}

enum CubeSegment {
    Length(f64),
    Parallel,
}

/// Length, in cube units, of the line where the linear fits of both fields
/// vanish, between its two crossings of the cube faces.
fn cube_segment(f: &[f64; 8], g: &[f64; 8]) -> CubeSegment {
    let (fc, fg) = linear_fit(f);
    let (gc, gg) = linear_fit(g);
    let d = [
        fg[1] * gg[2] - fg[2] * gg[1],
        fg[2] * gg[0] - fg[0] * gg[2],
        fg[0] * gg[1] - fg[1] * gg[0],
    ];
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let (ff, fgg, gg2) = (dot(&fg, &fg), dot(&fg, &gg), dot(&gg, &gg));
    let det = ff * gg2 - fgg * fgg;
    if det <= 1e-24 * ff * gg2 {
        return CubeSegment::Parallel;
    }
    // minimum-norm offset from the centre solving fc + fg·p = gc + gg·p = 0
    let a = (-fc * gg2 + gc * fgg) / det;
    let b = (-gc * ff + fc * fgg) / det;
    let p = [0, 1, 2].map(|k| 0.5 + a * fg[k] + b * gg[k]);
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if d[k] == 0.0 {
            if !(0.0..=1.0).contains(&p[k]) {
                return CubeSegment::Length(0.0);
            }
            continue;
        }
        let (ta, tb) = ((0.0 - p[k]) / d[k], (1.0 - p[k]) / d[k]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    CubeSegment::Length(if t1 > t0 {
        (t1 - t0) * dot(&d, &d).sqrt()
    } else {
        0.0
    })
}

/// Length of {T₁ = T₂ = 0} on the unit torus from two value grids.
pub fn estimate_intersection_length(a: &FieldGrid, b: &FieldGrid) -> Result<NodalEstimate> {
    if a.n != b.n || a.resolution != b.resolution {
        return Err(NodalError::Mismatch);
    }
    if a.source == b.source {
        return Err(NodalError::IdenticalFields);
    }
    let m = a.resolution;
    let slabs: Vec<(f64, NodalDiagnostics)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut length = 0.0;
            let mut diag = NodalDiagnostics::default();
            for j in 0..m {
                for k in 0..m {
                    let f = cube_corners(&a.values, m, i, j, k, &mut diag.nudged_corners);
                    let g = cube_corners(&b.values, m, i, j, k, &mut diag.nudged_corners);
                    if !changes_sign(&f) || !changes_sign(&g) {
                        continue;
                    }
                    match cube_segment(&f, &g) {
                        CubeSegment::Length(len) => length += len,
                        CubeSegment::Parallel => diag.ambiguous_cells += 1,
                    }
                }
            }
            (length / m as f64, diag)
        })
        .collect();
    let (value, diagnostics) = slabs
        .iter()
        .fold((0.0, NodalDiagnostics::default()), |(l, d), (x, e)| {
            (l + x, d.merge(*e))
        });
    Ok(NodalEstimate {
        value,
        ell: 2,
        estimator: Estimator::Cells,
        resolution: m,
        epsilon: None,
        diagnostics,
    })
}

fn torus_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [0, 1, 2].map(|q| {
        let t = (a[q] - b[q]).rem_euclid(1.0);
        t.min(1.0 - t)
    });
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

enum Newton {
    Root([f64; 3]),
    Escaped,
    Budget,
}

/// Damped Newton on (T₁, T₂, T₃)(x) = 0 from `start`, with step halving
/// whenever the residual does not decrease.
fn newton(
    freq: &FrequencySet,
    sets: &[WaveCoefficients],
    start: [f64; 3],
    lo: [f64; 3],
    hi: [f64; 3],
) -> Newton {
    let scale = (freq.energy() / 3.0).sqrt();
    let eval = |x: &[f64; 3]| {
        let mut f = Vector3::zeros();
        let mut jac = Matrix3::zeros();
        for (r, s) in sets.iter().enumerate() {
            let (v, g) = evaluate_point(freq, s, *x);
            f[r] = v;
            for c in 0..3 {
                jac[(r, c)] = scale * g[c];
            }
        }
        (f, jac)
    };
    let mut x = start;
    let (mut f, mut jac) = eval(&x);
    for _ in 0..NEWTON_MAX_ITER {
        if f.norm() < NEWTON_TOL {
            let inside = (0..3).all(|d| x[d] >= lo[d] && x[d] <= hi[d]);
            return if inside {
                Newton::Root(x)
            } else {
                Newton::Escaped
            };
        }
        let Some(step) = jac.lu().solve(&f) else {
            return Newton::Escaped;
        };
        let mut damping = 1.0;
        loop {
            let trial = [0, 1, 2].map(|d| x[d] - damping * step[d]);
            let (ft, jt) = eval(&trial);
            if ft.norm() >= f.norm() && damping < 1e-3 {
                // no descent along the Newton direction: a local minimum of
                // the residual that is not a root
                return Newton::Budget;
            }
            if ft.norm() < f.norm() {
                x = trial;
                f = ft;
                jac = jt;
                break;
            }
            damping /= 2.0;
        }
        // an iterate more than one box width outside the box is heading
        // for a root that belongs to another cell
        if (0..3).any(|d| x[d] < 2.0 * lo[d] - hi[d] || x[d] > 2.0 * hi[d] - lo[d]) {
            return Newton::Escaped;
        }
    }
    if f.norm() < NEWTON_TOL && (0..3).all(|d| x[d] >= lo[d] && x[d] <= hi[d]) {
        Newton::Root(x)
    } else {
        Newton::Budget
    }
}

/// Number of common zeros of three waves on the torus.
pub fn count_triple_zeros(
    freq: &FrequencySet,
    sets: &[WaveCoefficients],
    resolution: Option<usize>,
) -> Result<NodalEstimate> {
    if sets.len() != 3 {
        return Err(NodalError::InvalidEll(sets.len()));
    }
    let m = resolution.unwrap_or_else(|| default_resolution(freq.n));
    let grids: Vec<FieldGrid> = sets
        .iter()
        .map(|s| synthesize_values(freq, s, m))
        .collect::<std::result::Result<_, _>>()?;
    let h = 1.0 / m as f64;
    let per_slab: Vec<(Vec<[f64; 3]>, NodalDiagnostics)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut roots = Vec::new();
            let mut diag = NodalDiagnostics::default();
            for j in 0..m {
                for k in 0..m {
                    let mut all_change = true;
                    for g in &grids {
                        let c = cube_corners(&g.values, m, i, j, k, &mut diag.nudged_corners);
                        let neg = c.iter().filter(|v| **v < 0.0).count();
                        if neg == 0 || neg == 8 {
                            all_change = false;
                            break;
                        }
                    }
                    if !all_change {
                        continue;
                    }
                    let base = [i, j, k].map(|q| q as f64 * h);
                    let centre = base.map(|b| b + 0.5 * h);
                    let lo = base.map(|b| b - 0.25 * h);
                    let hi = base.map(|b| b + 1.25 * h);
                    match newton(freq, sets, centre, lo, hi) {
                        Newton::Root(x) => roots.push(x.map(|c| c.rem_euclid(1.0))),
                        Newton::Escaped => {}
                        Newton::Budget => diag.newton_failures += 1,
                    }
                }
            }
            (roots, diag)
        })
        .collect();

    let radius = 0.25 * h;
    let mut kept: Vec<[f64; 3]> = Vec::new();
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut diagnostics = NodalDiagnostics::default();
    for (roots, diag) in &per_slab {
        diagnostics = diagnostics.merge(*diag);
        for x in roots {
            let cell = x.map(|c| (c * m as f64).floor() as i64);
            let mut duplicate = false;
            'search: for di in -1..=1 {
                for dj in -1..=1 {
                    for dk in -1..=1 {
                        let key = [
                            (cell[0] + di).rem_euclid(m as i64),
                            (cell[1] + dj).rem_euclid(m as i64),
                            (cell[2] + dk).rem_euclid(m as i64),
                        ];
                        if let Some(list) = buckets.get(&key) {
                            if list.iter().any(|&r| torus_dist(&kept[r], x) < radius) {
                                duplicate = true;
                                break 'search;
                            }
                        }
                    }
                }
            }
            if !duplicate {
                let key = cell.map(|c| c.rem_euclid(m as i64));
                buckets.entry(key).or_default().push(kept.len());
                kept.push(*x);
            }
        }
    }
    Ok(NodalEstimate {
        value: kept.len() as f64,
        ell: 3,
        estimator: Estimator::Cells,
        resolution: m,
        epsilon: None,
        diagnostics,
    })
}

/// Grid quadrature of (E/3)^{ℓ/2} (2ε)^{−ℓ} Π 1{|Tᵢ| ≤ ε} Φ*(∇̃T).
///
/// Each cell whose corner values can reach the ε-band is sampled at s³
/// midpoints of trilinearly interpolated values and gradients, with
/// s = `COAREA_SUBSAMPLES`; plain node sampling is biased by the position of
/// the zero set relative to the lattice of nodes when the band is only a few
/// cells wide.
pub fn coarea_epsilon_estimate(grids: &[FieldGrid], epsilon: f64) -> Result<NodalEstimate> {
    coarea_epsilon_estimate_with(grids, epsilon, COAREA_SUBSAMPLES)
}

pub const COAREA_SUBSAMPLES: usize = 4;

pub fn coarea_epsilon_estimate_with(
    grids: &[FieldGrid],
    epsilon: f64,
    subsamples: usize,
) -> Result<NodalEstimate> {
    let ell = grids.len();
    if !(1..=3).contains(&ell) {
        return Err(NodalError::InvalidEll(ell));
    }
    let (n, m) = (grids[0].n, grids[0].resolution);
    if grids.iter().any(|g| g.n != n || g.resolution != m) {
        return Err(NodalError::Mismatch);
    }
    let chans: Vec<[&[f64]; 4]> = grids
        .iter()
        .map(|g| Ok([g.channel(0)?, g.channel(1)?, g.channel(2)?, g.channel(3)?]))
        .collect::<std::result::Result<_, FieldError>>()?;
    let s = subsamples.max(1);
    let offsets: Vec<f64> = (0..s).map(|q| (q as f64 + 0.5) / s as f64).collect();
    let slabs: Vec<(f64, usize)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut total = 0.0;
            let mut passing = 0usize;
            let mut corner = vec![[[0.0; 8]; 4]; ell];
            for j in 0..m {
                for k in 0..m {
                    let mut reachable = true;
                    for (f, ch) in chans.iter().enumerate() {
                        for (c, off) in CORNERS.iter().enumerate() {
                            let p = grid_index(m, i + off[0], j + off[1], k + off[2]);
                            for q in 0..4 {
                                corner[f][q][c] = ch[q][p];
                            }
                        }
                        let lo = corner[f][0].iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = corner[f][0]
                            .iter()
                            .cloned()
                            .fold(f64::NEG_INFINITY, f64::max);
                        if lo > epsilon || hi < -epsilon {
                            reachable = false;
                            break;
                        }
                    }
                    if !reachable {
                        continue;
                    }
                    for &x in &offsets {
                        for &y in &offsets {
                            for &z in &offsets {
                                let w = CORNERS.map(|c| {
                                    let f = |t: f64, b: usize| if b == 1 { t } else { 1.0 - t };
                                    f(x, c[0]) * f(y, c[1]) * f(z, c[2])
                                });
                                let interp =
                                    |v: &[f64; 8]| (0..8).map(|c| w[c] * v[c]).sum::<f64>();
                                if corner.iter().any(|cf| interp(&cf[0]).abs() > epsilon) {
                                    continue;
                                }
                                passing += 1;
                                let rows: Vec<[f64; 3]> = corner
                                    .iter()
                                    .map(|cf| [interp(&cf[1]), interp(&cf[2]), interp(&cf[3])])
                                    .collect();
                                let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
                                total += phi_star(&refs);
                            }
                        }
                    }
                }
            }
            (total, passing)
        })
        .collect();
    let (total, passing) = slabs.iter().fold((0.0, 0), |(a, c), (t, p)| (a + t, c + p));
    if passing < MIN_BAND_NODES {
        return Err(NodalError::EpsilonTooSmall { passing });
    }
    let energy = 4.0 * std::f64::consts::PI.powi(2) * n as f64;
    let samples = (m * s) as f64;
    let value = (energy / 3.0).powf(ell as f64 / 2.0) * (2.0 * epsilon).powi(-(ell as i32)) * total
        / (samples * samples * samples);
    Ok(NodalEstimate {
        value,
        ell,
        estimator: Estimator::Coarea,
        resolution: m,
        epsilon: Some(epsilon),
        diagnostics: NodalDiagnostics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_coefficients, synthesize_grid};
    use crate::lattice::enumerate_frequencies;
    use num_complex::Complex64;

    /// cos(2π x_axis) as a wave on Λ₁.
    fn axis_cosine(freq: &FrequencySet, axis: usize) -> WaveCoefficients {
        let amp = (freq.cardinality() as f64).sqrt() / 2.0;
        let a: Vec<Complex64> = freq
            .points
            .iter()
            .map(|p| {
                let on_axis = p[axis].abs() == 1;
                Complex64::new(if on_axis { amp } else { 0.0 }, 0.0)
            })
            .collect();
        make_coefficients(freq, axis as u64, 0, Some(&a)).unwrap()
    }

    #[test]
    fn planes_and_lines() {
        let f = enumerate_frequencies(1).unwrap();
        let g1 = synthesize_values(&f, &axis_cosine(&f, 0), 64).unwrap();
        let g2 = synthesize_values(&f, &axis_cosine(&f, 1), 64).unwrap();
        let area = estimate_hypersurface_area(&g1);
        assert!((area.value - 2.0).abs() < 0.02, "{}", area.value);
        let len = estimate_intersection_length(&g1, &g2).unwrap();
        assert!((len.value - 4.0).abs() < 0.05, "{}", len.value);
        assert!(matches!(
            estimate_intersection_length(&g1, &g1),
            Err(NodalError::IdenticalFields)
        ));
    }

    #[test]
    fn eight_corner_points() {
        let f = enumerate_frequencies(1).unwrap();
        let sets: Vec<_> = (0..3).map(|d| axis_cosine(&f, d)).collect();
        let count = count_triple_zeros(&f, &sets, None).unwrap();
        assert_eq!(count.value, 8.0);
    }

    #[test]
    fn coarea_plane_pair() {
        let f = enumerate_frequencies(1).unwrap();
        let g = synthesize_grid(&f, &axis_cosine(&f, 0), 128).unwrap();
        let est = coarea_epsilon_estimate(&[g], 0.05).unwrap();
        assert!((est.value - 2.0).abs() < 0.05, "{}", est.value);
    }

    #[test]
    fn complementary_cases_share_triangles() {
        let mut corners = [0.3, -0.2, 0.7, -0.1, -0.4, 0.5, -0.6, 0.2];
        let area: f64 = cube_triangles(&corners).iter().map(triangle_area).sum();
        corners.iter_mut().for_each(|v| *v = -*v);
        let flipped: f64 = cube_triangles(&corners).iter().map(triangle_area).sum();
        assert_eq!(area, flipped);
    }
}
