//! Integer points on spheres in three dimensions.
//!
//! Provides the frequency sets Λ_n = {λ ∈ Z³ : |λ|² = n}, the normalized
//! moment sums over them, counts of m-correlations (tuples summing to zero)
//! and a visitor over the non-degenerate 4-correlations.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default memory cap for the pair-sum bucket table (4 GiB).
pub const DEFAULT_MEMORY_CAP: u64 = 4 << 30;

const CACHE_MAGIC: &[u8; 4] = b"ARWL";
const CENSUS_MAGIC: &[u8; 4] = b"ARWC";
const CACHE_VERSION: u16 = 1;

/// Rough cost of one hash-table entry holding a packed key and a count.
const BYTES_PER_BUCKET: u64 = 32;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("{0} is of the form 4^a(8b+7) and has no representation as a sum of three squares")]
    NotRepresentable(u64),
    #[error("bucket table needs about {required} bytes, above the cap of {cap} bytes")]
    MemoryBudgetExceeded { required: u64, cap: u64 },
    #[error("correlation order {0} is not one of 2, 4, 6")]
    InvalidOrder(usize),
    #[error("n = {0} is too large for packed 21-bit sum keys")]
    KeyOverflow(u64),
    #[error("cache record is corrupt: {0}")]
    CorruptCache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LatticeError>;

/// The lattice points on the sphere of radius √n, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencySet {
    pub n: u64,
    pub points: Vec<[i32; 3]>,
    pub admissible: bool,
}

impl FrequencySet {
    /// N_n, the number of points.
    pub fn cardinality(&self) -> usize {
        self.points.len()
    }

    /// The Laplace eigenvalue E_n = 4π²n.
    pub fn energy(&self) -> f64 {
        4.0 * std::f64::consts::PI * std::f64::consts::PI * self.n as f64
    }

    /// Index of `p` in `points`, if present.
    pub fn index_of(&self, p: [i32; 3]) -> Option<usize> {
        self.points.binary_search(&p).ok()
    }

    /// Index of −λ for every λ.
    pub fn antipodes(&self) -> Vec<usize> {
        self.points
            .iter()
            .map(|p| {
                self.index_of([-p[0], -p[1], -p[2]])
                    .expect("frequency sets are closed under negation")
            })
            .collect()
    }
}

/// Whether λ is on the canonical half-lattice: first nonzero coordinate positive.
pub fn is_canonical(p: [i32; 3]) -> bool {
    p.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0)
}

/// True iff n is not of the form 4^a(8b+7).
pub fn is_sum_of_three_squares(n: u64) -> bool {
    assert!(n >= 1, "n must be positive");
    let mut m = n;
    while m % 4 == 0 {
        m /= 4;
    }
    m % 8 != 7
}

/// n ≢ 0, 4, 7 (mod 8).
pub fn is_admissible(n: u64) -> bool {
    !matches!(n % 8, 0 | 4 | 7)
}

fn isqrt(v: u64) -> u64 {
    let mut r = (v as f64).sqrt() as u64;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    r
}

/// All λ ∈ Z³ with |λ|² = n, sorted lexicographically.
pub fn enumerate_frequencies(n: u64) -> Result<FrequencySet> {
    if n == 0 || !is_sum_of_three_squares(n) {
        return Err(LatticeError::NotRepresentable(n));
    }
    let r1 = isqrt(n) as i64;
    let mut points = Vec::new();
    for a in -r1..=r1 {
        let rest1 = n - (a * a) as u64;
        let r2 = isqrt(rest1) as i64;
        for b in -r2..=r2 {
            let rest2 = rest1 - (b * b) as u64;
            let c = isqrt(rest2);
            if c * c != rest2 {
                continue;
            }
            let c = c as i64;
            if c == 0 {
                points.push([a as i32, b as i32, 0]);
            } else {
                points.push([a as i32, b as i32, -c as i32]);
                points.push([a as i32, b as i32, c as i32]);
            }
        }
    }
    Ok(FrequencySet {
        n,
        points,
        admissible: is_admissible(n),
    })
}

/// Normalized second and fourth moment sums of the frequency set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeMoments {
    /// (1/(nN)) Σ λλᵀ.
    pub second_moment: [[f64; 3]; 3],
    /// Ψ_n = (1/(n²N)) Σ λ_k⁴, the same for every k.
    pub psi: f64,
    /// (1/(n²N)) Σ λ_k λ_l λ_j λ_m.
    pub fourth_moments: [[[[f64; 3]; 3]; 3]; 3],
}

impl LatticeMoments {
    /// Largest deviation of the fourth moments from the equidistributed
    /// limits 1/5 (all indices equal) and 1/15 (two distinct pairs).
    pub fn fourth_moment_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..3 {
            for l in 0..3 {
                for j in 0..3 {
                    for m in 0..3 {
                        let limit = fourth_moment_limit(k, l, j, m);
                        worst = worst.max((self.fourth_moments[k][l][j][m] - limit).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Limit of (1/(n²N)) Σ λ_k λ_l λ_j λ_m under equidistribution on the sphere.
pub fn fourth_moment_limit(k: usize, l: usize, j: usize, m: usize) -> f64 {
    if k == l && l == j && j == m {
        1.0 / 5.0
    } else if (k == l && j == m) || (k == j && l == m) || (k == m && l == j) {
        1.0 / 15.0
    } else {
        0.0
    }
}

pub fn lattice_moments(freq: &FrequencySet) -> LatticeMoments {
    let n = freq.n as f64;
    let count = freq.cardinality() as f64;
    let mut second = [[0i64; 3]; 3];
    let mut fourth = [[[[0i64; 3]; 3]; 3]; 3];
    for p in &freq.points {
        let q = [p[0] as i64, p[1] as i64, p[2] as i64];
        for k in 0..3 {
            for l in 0..3 {
                second[k][l] += q[k] * q[l];
                for j in 0..3 {
                    for m in 0..3 {
                        fourth[k][l][j][m] += q[k] * q[l] * q[j] * q[m];
                    }
                }
            }
        }
    }
    let mut second_moment = [[0.0; 3]; 3];
    let mut fourth_moments = [[[[0.0; 3]; 3]; 3]; 3];
    for k in 0..3 {
        for l in 0..3 {
            second_moment[k][l] = second[k][l] as f64 / (n * count);
            for j in 0..3 {
                for m in 0..3 {
                    fourth_moments[k][l][j][m] = fourth[k][l][j][m] as f64 / (n * n * count);
                }
            }
        }
    }
    LatticeMoments {
        second_moment,
        psi: fourth_moments[0][0][0][0],
        fourth_moments,
    }
}

/// Counts of m-correlations, with the non-degenerate 4-correlations when m = 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCensus {
    pub n: u64,
    pub m: usize,
    pub card_c: u64,
    pub card_x4: Option<u64>,
    pub rn_moment: f64,
}

const KEY_OFFSET: i64 = 1 << 20;

fn pack(v: [i64; 3]) -> u64 {
    let f = |c: i64| (c + KEY_OFFSET) as u64 & 0x1f_ffff;
    f(v[0]) | (f(v[1]) << 21) | (f(v[2]) << 42)
}

fn negate_key(v: [i64; 3]) -> u64 {
    pack([-v[0], -v[1], -v[2]])
}

fn check_key_range(n: u64, terms: u64) -> Result<()> {
    // coordinates of a sum of `terms` points are bounded by terms·√n
    if (terms * isqrt(n) + 1) as i64 >= KEY_OFFSET {
        return Err(LatticeError::KeyOverflow(n));
    }
    Ok(())
}

fn build_finished_census(freq: &FrequencySet, m: usize, card_c: u64) -> CorrelationCensus {
    let count = freq.cardinality() as u64;
    let card_x4 = (m == 4).then(|| card_c + 3 * count - 3 * count * count);
    CorrelationCensus {
        n: freq.n,
        m,
        card_c,
        card_x4,
        rn_moment: card_c as f64 / (count as f64).powi(m as i32),
    }
}

/// Counts C_n(m) by grouping (m/2)-tuples by their partial sum, with the
/// default 4 GiB cap on the bucket table.
pub fn correlation_census(freq: &FrequencySet, m: usize) -> Result<CorrelationCensus> {
    correlation_census_with_cap(freq, m, DEFAULT_MEMORY_CAP)
}

pub fn correlation_census_with_cap(
    freq: &FrequencySet,
    m: usize,
    cap_bytes: u64,
) -> Result<CorrelationCensus> {
    if !matches!(m, 2 | 4 | 6) {
        return Err(LatticeError::InvalidOrder(m));
    }
    let half = (m / 2) as u32;
    check_key_range(freq.n, half as u64)?;
    let count = freq.cardinality() as u64;
    let required = count.saturating_pow(half).saturating_mul(BYTES_PER_BUCKET);
    if required > cap_bytes {
        return Err(LatticeError::MemoryBudgetExceeded {
            required,
            cap: cap_bytes,
        });
    }
    let mut buckets: HashMap<u64, u64> = HashMap::new();
    let pts: Vec<[i64; 3]> = freq
        .points
        .iter()
        .map(|p| [p[0] as i64, p[1] as i64, p[2] as i64])
        .collect();
    let mut sums: Vec<[i64; 3]> = Vec::new();
    match half {
        1 => sums.extend(pts.iter().copied()),
        2 => {
            for a in &pts {
                for b in &pts {
                    sums.push([a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
                }
            }
        }
        _ => {
            for a in &pts {
                for b in &pts {
                    for c in &pts {
                        sums.push([a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]]);
                    }
                }
            }
        }
    }
    for s in &sums {
        *buckets.entry(pack(*s)).or_insert(0) += 1;
    }
    let mut card_c = 0u64;
    for (key, &c) in &buckets {
        let v = unpack(*key);
        if let Some(&d) = buckets.get(&negate_key(v)) {
            card_c += c * d;
        }
    }
    Ok(build_finished_census(freq, m, card_c))
}

fn unpack(key: u64) -> [i64; 3] {
    let f = |s: u32| ((key >> s) & 0x1f_ffff) as i64 - KEY_OFFSET;
    [f(0), f(21), f(42)]
}

/// Counts C_n(m) by looping over (m−1)-tuples and looking up the closing
/// point. Uses O(N) memory; the fallback when the bucket table is too large.
pub fn correlation_census_streaming(freq: &FrequencySet, m: usize) -> Result<CorrelationCensus> {
    if !matches!(m, 2 | 4 | 6) {
        return Err(LatticeError::InvalidOrder(m));
    }
    let pts = &freq.points;
    let mut card_c = 0u64;
    let mut prefix = vec![0usize; m - 1];
    loop {
        let mut s = [0i32; 3];
        for &i in &prefix {
            for c in 0..3 {
                s[c] += pts[i][c];
            }
        }
        if freq.index_of([-s[0], -s[1], -s[2]]).is_some() {
            card_c += 1;
        }
        let mut pos = m - 1;
        loop {
            if pos == 0 {
                return Ok(build_finished_census(freq, m, card_c));
            }
            pos -= 1;
            prefix[pos] += 1;
            if prefix[pos] < pts.len() {
                break;
            }
            prefix[pos] = 0;
        }
    }
}

/// Calls `visitor` with the indices and points of every element of X_n(4),
/// in lexicographic order of indices. Returns the number of visits.
pub fn stream_nondegenerate_quadruples<F>(freq: &FrequencySet, mut visitor: F) -> u64
where
    F: FnMut([usize; 4], [[i32; 3]; 4]),
{
    let pts = &freq.points;
    let neg = freq.antipodes();
    let mut emitted = 0u64;
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            if j == neg[i] {
                continue;
            }
            let s = [
                pts[i][0] + pts[j][0],
                pts[i][1] + pts[j][1],
                pts[i][2] + pts[j][2],
            ];
            for k in 0..pts.len() {
                if k == neg[i] || k == neg[j] {
                    continue;
                }
                let closing = [
                    -(s[0] + pts[k][0]),
                    -(s[1] + pts[k][1]),
                    -(s[2] + pts[k][2]),
                ];
                let Some(l) = freq.index_of(closing) else {
                    continue;
                };
                if l == neg[i] || l == neg[j] {
                    continue;
                }
                emitted += 1;
                visitor([i, j, k, l], [pts[i], pts[j], pts[k], pts[l]]);
            }
        }
    }
    emitted
}

/// Directory used for lattice caches: `ARW_CACHE_DIR` or `./.arw-cache`.
pub fn cache_dir() -> PathBuf {
    std::env::var_os("ARW_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".arw-cache"))
}

fn lattice_path(dir: &Path, n: u64) -> PathBuf {
    dir.join(format!("lattice_{n}.arwl"))
}

fn census_path(dir: &Path, n: u64, m: usize) -> PathBuf {
    dir.join(format!("census_{n}_{m}.arwc"))
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn encode_frequency_set(freq: &FrequencySet) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + 12 * freq.points.len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&freq.n.to_le_bytes());
    out.extend_from_slice(&(freq.points.len() as u32).to_le_bytes());
    for p in &freq.points {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn decode_frequency_set(bytes: &[u8]) -> Result<FrequencySet> {
    let corrupt = |msg: &str| LatticeError::CorruptCache(msg.to_string());
    if bytes.len() < 18 || &bytes[..4] != CACHE_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CACHE_VERSION {
        return Err(corrupt("unknown version"));
    }
    let n = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let count = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
    if bytes.len() != 18 + 12 * count {
        return Err(corrupt("length mismatch"));
    }
    let points = bytes[18..]
        .chunks_exact(12)
        .map(|c| {
            [
                i32::from_le_bytes(c[0..4].try_into().unwrap()),
                i32::from_le_bytes(c[4..8].try_into().unwrap()),
                i32::from_le_bytes(c[8..12].try_into().unwrap()),
            ]
        })
        .collect::<Vec<_>>();
    if points
        .iter()
        .any(|p| p.iter().map(|&c| (c as i64) * (c as i64)).sum::<i64>() != n as i64)
    {
        return Err(corrupt("point off the sphere"));
    }
    Ok(FrequencySet {
        n,
        points,
        admissible: is_admissible(n),
    })
}

/// Reads Λ_n from the cache directory, enumerating and writing it on a miss.
pub fn load_or_enumerate(dir: &Path, n: u64) -> Result<FrequencySet> {
    let path = lattice_path(dir, n);
    if let Ok(mut f) = fs::File::open(&path) {
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        if let Ok(freq) = decode_frequency_set(&bytes) {
            if freq.n == n {
                return Ok(freq);
            }
        }
    }
    let freq = enumerate_frequencies(n)?;
    atomic_write(&path, &encode_frequency_set(&freq))?;
    Ok(freq)
}

fn encode_census(c: &CorrelationCensus) -> Vec<u8> {
    let mut out = Vec::with_capacity(38);
    out.extend_from_slice(CENSUS_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&c.n.to_le_bytes());
    out.extend_from_slice(&(c.m as u32).to_le_bytes());
    out.extend_from_slice(&c.card_c.to_le_bytes());
    out.extend_from_slice(&c.card_x4.unwrap_or(u64::MAX).to_le_bytes());
    out
}

fn decode_census(bytes: &[u8], count: usize) -> Option<CorrelationCensus> {
    if bytes.len() != 34 || &bytes[..4] != CENSUS_MAGIC {
        return None;
    }
    if u16::from_le_bytes([bytes[4], bytes[5]]) != CACHE_VERSION {
        return None;
    }
    let n = u64::from_le_bytes(bytes[6..14].try_into().ok()?);
    let m = u32::from_le_bytes(bytes[14..18].try_into().ok()?) as usize;
    let card_c = u64::from_le_bytes(bytes[18..26].try_into().ok()?);
    let x4 = u64::from_le_bytes(bytes[26..34].try_into().ok()?);
    Some(CorrelationCensus {
        n,
        m,
        card_c,
        card_x4: (x4 != u64::MAX).then_some(x4),
        rn_moment: card_c as f64 / (count as f64).powi(m as i32),
    })
}

/// Census with a sibling cache record keyed by (n, m). Falls back to the
/// streaming count when the bucket table would exceed the memory cap.
pub fn load_or_census(dir: &Path, freq: &FrequencySet, m: usize) -> Result<CorrelationCensus> {
    let path = census_path(dir, freq.n, m);
    if let Ok(bytes) = fs::read(&path) {
        if let Some(c) = decode_census(&bytes, freq.cardinality()) {
            if c.n == freq.n && c.m == m {
                return Ok(c);
            }
        }
    }
    let census = match correlation_census(freq, m) {
        Err(LatticeError::MemoryBudgetExceeded { .. }) => correlation_census_streaming(freq, m)?,
        other => other?,
    };
    atomic_write(&path, &encode_census(&census))?;
    Ok(census)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn representability_examples() {
        assert!(!is_sum_of_three_squares(7));
        assert!(is_sum_of_three_squares(1));
        assert!(!is_sum_of_three_squares(28));
        assert!(is_sum_of_three_squares(2));
        assert!(!is_sum_of_three_squares(112));
    }

    #[test]
    fn small_sets() {
        let f1 = enumerate_frequencies(1).unwrap();
        assert_eq!(
            f1.points,
            vec![
                [-1, 0, 0],
                [0, -1, 0],
                [0, 0, -1],
                [0, 0, 1],
                [0, 1, 0],
                [1, 0, 0]
            ]
        );
        assert_eq!(enumerate_frequencies(2).unwrap().cardinality(), 12);
        assert!(matches!(
            enumerate_frequencies(7),
            Err(LatticeError::NotRepresentable(7))
        ));
    }

    #[test]
    fn psi_values() {
        let m1 = lattice_moments(&enumerate_frequencies(1).unwrap());
        assert!((m1.psi - 1.0 / 3.0).abs() < 1e-15);
        let m2 = lattice_moments(&enumerate_frequencies(2).unwrap());
        assert!((m2.psi - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn census_n1() {
        let f = enumerate_frequencies(1).unwrap();
        let c2 = correlation_census(&f, 2).unwrap();
        assert_eq!(c2.card_c, 6);
        assert!((c2.rn_moment - 1.0 / 6.0).abs() < 1e-15);
        let c4 = correlation_census(&f, 4).unwrap();
        assert_eq!(c4.card_c, 90);
        assert_eq!(c4.card_x4, Some(0));
        assert_eq!(stream_nondegenerate_quadruples(&f, |_, _| {}), 0);
    }

    #[test]
    fn memory_cap_is_enforced() {
        let f = enumerate_frequencies(5).unwrap();
        assert!(matches!(
            correlation_census_with_cap(&f, 6, 1024),
            Err(LatticeError::MemoryBudgetExceeded { .. })
        ));
        assert!(matches!(
            correlation_census(&f, 3),
            Err(LatticeError::InvalidOrder(3))
        ));
    }

    #[test]
    fn streaming_census_agrees_with_buckets() {
        for n in [1, 2, 3, 5, 6, 9] {
            let f = enumerate_frequencies(n).unwrap();
            for m in [2, 4, 6] {
                assert_eq!(
                    correlation_census(&f, m).unwrap(),
                    correlation_census_streaming(&f, m).unwrap()
                );
            }
        }
    }

    #[test]
    fn packing_round_trips() {
        for v in [[0, 0, 0], [-5, 7, 1000], [-(1 << 19), 1 << 19, -1]] {
            assert_eq!(unpack(pack(v)), v);
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = load_or_enumerate(dir.path(), 29).unwrap();
        let b = load_or_enumerate(dir.path(), 29).unwrap();
        assert_eq!(a, b);
        let bytes = fs::read(lattice_path(dir.path(), 29)).unwrap();
        assert_eq!(&bytes[..4], b"ARWL");
        let c1 = load_or_census(dir.path(), &a, 4).unwrap();
        let c2 = load_or_census(dir.path(), &a, 4).unwrap();
        assert_eq!(c1, c2);
        assert!(decode_frequency_set(&bytes[..bytes.len() - 1]).is_err());
    }
}
