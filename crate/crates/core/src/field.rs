//! Arithmetic random waves: Gaussian coefficients, pointwise evaluation,
//! FFT synthesis on periodic grids, and the covariance function r_n.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::fs;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{is_canonical, FrequencySet};

/// Symmetry tolerance for injected coefficients.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Largest imaginary part tolerated when a real field is synthesized.
pub const IMAG_TOL: f64 = 1e-9;
/// Grid cells per nodal wavelength used for the default resolution.
pub const CELLS_PER_WAVELENGTH: f64 = 16.0;

const GRID_MAGIC: &[u8; 4] = b"ARWG";
const GRID_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("override violates a(-λ) = conj(a(λ)) by {0:e}")]
    AsymmetricOverride(f64),
    #[error("override has {got} coefficients, frequency set has {want}")]
    OverrideSize { got: usize, want: usize },
    #[error("grid resolution {m} does not exceed {bound}")]
    ResolutionTooLow { m: usize, bound: usize },
    #[error("grid has no gradient channels")]
    MissingGradients,
    #[error("channel {0} is not in 0..=3")]
    BadChannel(u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FieldError>;

/// Coefficients a_λ of one sample, indexed like `FrequencySet::points`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveCoefficients {
    pub n: u64,
    pub seed: u64,
    pub replication_index: u64,
    pub a: Vec<Complex64>,
}

impl WaveCoefficients {
    /// Hash of the coefficient bits; equal fingerprints mean the same field.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.n.hash(&mut h);
        for c in &self.a {
            c.re.to_bits().hash(&mut h);
            c.im.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// The coefficients of x ↦ T(x + t).
    pub fn translated(&self, freq: &FrequencySet, t: [f64; 3]) -> WaveCoefficients {
        let a = self
            .a
            .iter()
            .zip(&freq.points)
            .map(|(c, p)| c * phase(p, t))
            .collect();
        WaveCoefficients { a, ..self.clone() }
    }

    /// The coefficients of −T.
    pub fn negated(&self) -> WaveCoefficients {
        WaveCoefficients {
            a: self.a.iter().map(|c| -c).collect(),
            ..self.clone()
        }
    }
}

fn dot(p: &[i32; 3], x: [f64; 3]) -> f64 {
    p[0] as f64 * x[0] + p[1] as f64 * x[1] + p[2] as f64 * x[2]
}

/// e^{2πi⟨λ,x⟩}.
fn phase(p: &[i32; 3], x: [f64; 3]) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * dot(p, x))
}

/// Seed of the `i`-th member of a family of independent fields.
pub fn family_seed(seed: u64, member: usize) -> u64 {
    seed ^ (member as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn draw_canonical(seed: u64, replication: u64, canonical_index: usize) -> Complex64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng.set_word_pos((canonical_index as u128) << 32);
    let re: f64 = StandardNormal.sample(&mut rng);
    let im: f64 = StandardNormal.sample(&mut rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws (or installs) the coefficients of one wave.
///
/// Without an override, the real and imaginary parts on the canonical
/// half-lattice are independent N(0, 1/2), each drawn from a counter-based
/// stream keyed by `(seed, replication_index, canonical index)`; the other
/// half is filled by conjugation.
pub fn make_coefficients(
    freq: &FrequencySet,
    seed: u64,
    replication_index: u64,
    override_values: Option<&[Complex64]>,
) -> Result<WaveCoefficients> {
    let neg = freq.antipodes();
    let a = match override_values {
        Some(v) => {
            if v.len() != freq.cardinality() {
                return Err(FieldError::OverrideSize {
                    got: v.len(),
                    want: freq.cardinality(),
                });
            }
            let worst = (0..v.len())
                .map(|i| (v[neg[i]] - v[i].conj()).norm())
                .fold(0.0, f64::max);
            if worst > SYMMETRY_TOL {
                return Err(FieldError::AsymmetricOverride(worst));
            }
            v.to_vec()
        }
        None => {
            let mut a = vec![Complex64::new(0.0, 0.0); freq.cardinality()];
            let mut canonical_index = 0;
            for (i, p) in freq.points.iter().enumerate() {
                if is_canonical(*p) {
                    let c = draw_canonical(seed, replication_index, canonical_index);
                    a[i] = c;
                    a[neg[i]] = c.conj();
                    canonical_index += 1;
                }
            }
            a
        }
    };
    Ok(WaveCoefficients {
        n: freq.n,
        seed,
        replication_index,
        a,
    })
}

/// `ell` independent waves for one replication.
pub fn make_family(
    freq: &FrequencySet,
    seed: u64,
    replication_index: u64,
    ell: usize,
) -> Vec<WaveCoefficients> {
    (0..ell)
        .map(|i| {
            make_coefficients(freq, family_seed(seed, i), replication_index, None)
                .expect("drawn coefficients are symmetric")
        })
        .collect()
}

/// T(x) and the normalized gradient √(3/E_n)∇T(x).
pub fn evaluate_point(
    freq: &FrequencySet,
    coeffs: &WaveCoefficients,
    x: [f64; 3],
) -> (f64, [f64; 3]) {
    let (value, grad, residue) = evaluate_point_with_residue(freq, coeffs, x);
    assert!(
        residue < IMAG_TOL,
        "imaginary residue {residue:e} above {IMAG_TOL:e}: coefficients are not symmetric"
    );
    (value, grad)
}

/// Like [`evaluate_point`], also returning the largest discarded imaginary part.
pub fn evaluate_point_with_residue(
    freq: &FrequencySet,
    coeffs: &WaveCoefficients,
    x: [f64; 3],
) -> (f64, [f64; 3], f64) {
    let count = freq.cardinality() as f64;
    let mut v = Complex64::new(0.0, 0.0);
    let mut g = [Complex64::new(0.0, 0.0); 3];
    for (p, c) in freq.points.iter().zip(&coeffs.a) {
        let t = c * phase(p, x);
        v += t;
        for j in 0..3 {
            g[j] += t * p[j] as f64;
        }
    }
    let scale = 1.0 / count.sqrt();
    let gscale = (3.0 / (freq.n as f64 * count)).sqrt();
    let v = v * scale;
    // T_{n,j} = i √(3/(nN)) Σ λ_j a_λ e_λ(x)
    let g: Vec<Complex64> = g.iter().map(|z| Complex64::i() * z * gscale).collect();
    let residue = g.iter().map(|z| z.im.abs()).fold(v.im.abs(), f64::max);
    (v.re, [g[0].re, g[1].re, g[2].re], residue)
}

/// Sampled field on the uniform grid x = (i, j, k)/M, stored with k fastest.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub n: u64,
    pub resolution: usize,
    pub values: Vec<f64>,
    /// The three normalized derivative channels, when synthesized.
    pub gradients: Option<[Vec<f64>; 3]>,
    /// Fingerprint of the generating coefficients.
    pub source: u64,
}

impl FieldGrid {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    pub fn channel(&self, c: u16) -> Result<&[f64]> {
        match c {
            0 => Ok(&self.values),
            1..=3 => self
                .gradients
                .as_ref()
                .map(|g| g[c as usize - 1].as_slice())
                .ok_or(FieldError::MissingGradients),
            _ => Err(FieldError::BadChannel(c)),
        }
    }
}

/// max(2⌊√n⌋ + 1, ⌈16√n⌉).
pub fn default_resolution(n: u64) -> usize {
    let floor = (n as f64).sqrt().floor() as usize;
    (2 * floor + 1).max((CELLS_PER_WAVELENGTH * (n as f64).sqrt()).ceil() as usize)
}

/// Smallest resolution for which grid means of degree-`degree` trigonometric
/// polynomials in the field are exact.
pub fn exact_resolution(n: u64, degree: usize) -> usize {
    degree * (n as f64).sqrt().floor() as usize + 1
}

fn inverse_fft_3d(data: &mut [Complex64], m: usize, planner: &mut FftPlanner<f64>) {
    let fft = planner.plan_fft_inverse(m);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    let mut line = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..m {
        for k in 0..m {
            for j in 0..m {
                line[j] = data[(i * m + j) * m + k];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for j in 0..m {
                data[(i * m + j) * m + k] = line[j];
            }
        }
    }
    for j in 0..m {
        for k in 0..m {
            for i in 0..m {
                line[i] = data[(i * m + j) * m + k];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for i in 0..m {
                data[(i * m + j) * m + k] = line[i];
            }
        }
    }
}

fn synthesize_channel(
    freq: &FrequencySet,
    coeffs: &WaveCoefficients,
    m: usize,
    weight: impl Fn(&[i32; 3]) -> Complex64,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let mut data = vec![Complex64::new(0.0, 0.0); m * m * m];
    let wrap = |c: i32| c.rem_euclid(m as i32) as usize;
    for (p, c) in freq.points.iter().zip(&coeffs.a) {
        let idx = (wrap(p[0]) * m + wrap(p[1])) * m + wrap(p[2]);
        data[idx] += c * weight(p);
    }
    inverse_fft_3d(&mut data, m, planner);
    let residue = data.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    assert!(
        residue < IMAG_TOL,
        "imaginary residue {residue:e} above {IMAG_TOL:e}: coefficients are not symmetric"
    );
    data.into_iter().map(|z| z.re).collect()
}

fn check_resolution(n: u64, m: usize) -> Result<()> {
    let bound = 2 * (n as f64).sqrt().floor() as usize;
    if m <= bound {
        return Err(FieldError::ResolutionTooLow { m, bound });
    }
    Ok(())
}

/// Values and the three normalized-gradient channels on an M³ grid.
pub fn synthesize_grid(
    freq: &FrequencySet,
    coeffs: &WaveCoefficients,
    m: usize,
) -> Result<FieldGrid> {
    synthesize(freq, coeffs, m, true)
}

/// Only the values channel on an M³ grid.
pub fn synthesize_values(
    freq: &FrequencySet,
    coeffs: &WaveCoefficients,
    m: usize,
) -> Result<FieldGrid> {
    synthesize(freq, coeffs, m, false)
}

fn synthesize(
    freq: &FrequencySet,
    coeffs: &WaveCoefficients,
    m: usize,
    with_gradients: bool,
) -> Result<FieldGrid> {
    check_resolution(freq.n, m)?;
    let count = freq.cardinality() as f64;
    let scale = 1.0 / count.sqrt();
    let mut planner = FftPlanner::new();
    let values = synthesize_channel(
        freq,
        coeffs,
        m,
        |_| Complex64::new(scale, 0.0),
        &mut planner,
    );
    let gradients = with_gradients.then(|| {
        let gscale = (3.0 / (freq.n as f64 * count)).sqrt();
        let chan = |j: usize, planner: &mut FftPlanner<f64>| {
            synthesize_channel(
                freq,
                coeffs,
                m,
                |p| Complex64::new(0.0, gscale * p[j] as f64),
                planner,
            )
        };
        [
            chan(0, &mut planner),
            chan(1, &mut planner),
            chan(2, &mut planner),
        ]
    });
    Ok(FieldGrid {
        n: freq.n,
        resolution: m,
        values,
        gradients,
        source: coeffs.fingerprint(),
    })
}

/// Writes one channel as a 32-byte header followed by little-endian f64 values.
pub fn write_grid_dump(path: &Path, grid: &FieldGrid, channel: u16) -> Result<()> {
    let data = grid.channel(channel)?;
    let mut out = Vec::with_capacity(32 + 8 * data.len());
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&GRID_VERSION.to_le_bytes());
    out.extend_from_slice(&channel.to_le_bytes());
    out.extend_from_slice(&grid.n.to_le_bytes());
    out.extend_from_slice(&(grid.resolution as u32).to_le_bytes());
    out.resize(32, 0);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Reads a dump written by [`write_grid_dump`]: (n, M, channel, data).
pub fn read_grid_dump(path: &Path) -> Result<(u64, usize, u16, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let bad = || {
        FieldError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "bad grid dump",
        ))
    };
    if bytes.len() < 32 || &bytes[..4] != GRID_MAGIC {
        return Err(bad());
    }
    let channel = u16::from_le_bytes([bytes[6], bytes[7]]);
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let m = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    if bytes.len() != 32 + 8 * m * m * m {
        return Err(bad());
    }
    let data = bytes[32..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n, m, channel, data))
}

/// r_n and its derivatives at a lag z.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceProfile {
    pub value: f64,
    /// 1 − r_n(z), summed as (2/N) Σ sin²(π⟨λ,z⟩) to keep precision near z = 0.
    pub one_minus_value: f64,
    pub gradient: [f64; 3],
    pub hessian: [[f64; 3]; 3],
    /// Covariances of (T, T̃₁, T̃₂, T̃₃) at x against the same vector at y = x − z.
    pub normalized_pairs: [[f64; 4]; 4],
}

pub fn covariance_profile(freq: &FrequencySet, z: [f64; 3]) -> CovarianceProfile {
    let count = freq.cardinality() as f64;
    let mut value = 0.0;
    let mut defect = 0.0;
    let mut gradient = [0.0; 3];
    let mut hessian = [[0.0; 3]; 3];
    for p in &freq.points {
        let theta = 2.0 * PI * dot(p, z);
        let (s, c) = theta.sin_cos();
        value += c;
        defect += (0.5 * theta).sin().powi(2);
        for j in 0..3 {
            gradient[j] -= 2.0 * PI * p[j] as f64 * s;
            for k in 0..3 {
                hessian[j][k] -= 4.0 * PI * PI * (p[j] * p[k]) as f64 * c;
            }
        }
    }
    value /= count;
    let one_minus_value = 2.0 * defect / count;
    for j in 0..3 {
        gradient[j] /= count;
        for k in 0..3 {
            hessian[j][k] /= count;
        }
    }
    let d = (3.0 / freq.energy()).sqrt();
    let mut normalized_pairs = [[0.0; 4]; 4];
    normalized_pairs[0][0] = value;
    for j in 0..3 {
        normalized_pairs[j + 1][0] = d * gradient[j];
        normalized_pairs[0][j + 1] = -d * gradient[j];
        for k in 0..3 {
            normalized_pairs[j + 1][k + 1] = -d * d * hessian[j][k];
        }
    }
    CovarianceProfile {
        value,
        one_minus_value,
        gradient,
        hessian,
        normalized_pairs,
    }
}

/// ∫T, the energy defect D and ∫(T² − 1), all computed from coefficients.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ParsevalFunctionals {
    pub mean: f64,
    pub energy_defect: f64,
    pub centred_energy: f64,
}

pub fn parseval_functionals(freq: &FrequencySet, coeffs: &WaveCoefficients) -> ParsevalFunctionals {
    let count = freq.cardinality() as f64;
    let e = freq.energy();
    let mut norm2 = 0.0;
    let mut centred = 0.0;
    let mut by_axis = [0.0; 3];
    for (p, c) in freq.points.iter().zip(&coeffs.a) {
        let m2 = c.norm_sqr();
        norm2 += m2;
        centred += m2 - 1.0;
        for j in 0..3 {
            by_axis[j] += (p[j] as f64).powi(2) * m2;
        }
    }
    let gradient_energy: f64 = by_axis
        .iter()
        .map(|s| (3.0 / e) * 4.0 * PI * PI * s / count)
        .sum::<f64>()
        / 3.0;
    ParsevalFunctionals {
        mean: 0.0,
        energy_defect: gradient_energy - norm2 / count,
        centred_energy: centred / count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::enumerate_frequencies;

    fn cos_x1(freq: &FrequencySet, c: f64) -> WaveCoefficients {
        let mut v = vec![Complex64::new(0.0, 0.0); freq.cardinality()];
        v[freq.index_of([1, 0, 0]).unwrap()] = Complex64::new(c, 0.0);
        v[freq.index_of([-1, 0, 0]).unwrap()] = Complex64::new(c, 0.0);
        make_coefficients(freq, 0, 0, Some(&v)).unwrap()
    }

    #[test]
    fn injected_cosine() {
        let f = enumerate_frequencies(1).unwrap();
        let w = cos_x1(&f, 0.7);
        for x in [[0.1, 0.2, 0.3], [0.9, 0.0, 0.5]] {
            let (v, _) = evaluate_point(&f, &w, x);
            let want = 2.0 * 0.7 / 6f64.sqrt() * (2.0 * PI * x[0]).cos();
            assert!((v - want).abs() < 1e-14);
        }
    }

    #[test]
    fn asymmetric_override_rejected() {
        let f = enumerate_frequencies(1).unwrap();
        let mut v = vec![Complex64::new(0.0, 0.0); 6];
        v[0] = Complex64::new(1.0, 0.0);
        assert!(matches!(
            make_coefficients(&f, 0, 0, Some(&v)),
            Err(FieldError::AsymmetricOverride(_))
        ));
    }

    #[test]
    fn deterministic_draws() {
        let f = enumerate_frequencies(26).unwrap();
        let a = make_coefficients(&f, 9, 4, None).unwrap();
        let b = make_coefficients(&f, 9, 4, None).unwrap();
        assert_eq!(a, b);
        let c = make_coefficients(&f, 9, 5, None).unwrap();
        assert_ne!(a.a, c.a);
    }

    #[test]
    fn resolution_guard() {
        let f = enumerate_frequencies(5).unwrap();
        let w = make_coefficients(&f, 1, 0, None).unwrap();
        assert!(matches!(
            synthesize_grid(&f, &w, 4),
            Err(FieldError::ResolutionTooLow { .. })
        ));
        assert!(synthesize_grid(&f, &w, 5).is_ok());
        assert_eq!(default_resolution(1), 16);
        assert_eq!(default_resolution(74), 138);
    }

    #[test]
    fn covariance_at_origin() {
        let f = enumerate_frequencies(17).unwrap();
        let p = covariance_profile(&f, [0.0; 3]);
        assert!((p.value - 1.0).abs() < 1e-15);
        assert_eq!(p.one_minus_value, 0.0);
        for j in 0..3 {
            assert!(p.gradient[j].abs() < 1e-12);
            for k in 0..3 {
                let want = if j == k { -f.energy() / 3.0 } else { 0.0 };
                assert!((p.hessian[j][k] - want).abs() < 1e-9 * f.energy());
            }
        }
    }

    #[test]
    fn dump_round_trip() {
        let f = enumerate_frequencies(2).unwrap();
        let w = make_coefficients(&f, 3, 0, None).unwrap();
        let g = synthesize_grid(&f, &w, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        write_grid_dump(&path, &g, 2).unwrap();
        let (n, m, ch, data) = read_grid_dump(&path).unwrap();
        assert_eq!((n, m, ch), (2, 8, 2));
        assert_eq!(data, g.gradients.as_ref().unwrap()[1]);
        assert_eq!(fs::read(&path).unwrap().len(), 32 + 8 * 512);
    }

    #[test]
    fn parseval_constant_coefficients() {
        let f = enumerate_frequencies(6).unwrap();
        let ones = vec![Complex64::new(1.0, 0.0); f.cardinality()];
        let w = make_coefficients(&f, 0, 0, Some(&ones)).unwrap();
        let p = parseval_functionals(&f, &w);
        assert_eq!(p.mean, 0.0);
        assert_eq!(p.centred_energy, 0.0);
        assert!(p.energy_defect.abs() < 1e-12);
    }
}
