//! Spectral statistics of one replication: the W, M, R, S and X families
//! built from the coefficients of ℓ independent waves.
//!
//! `compute_rv1` streams over the non-degenerate quadruples X_n(4).
//! `PairBuckets` evaluates the contracted X sums needed by the fourth-chaos
//! projection in O(N²) by grouping pairs of frequencies by their sum.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::field::WaveCoefficients;
use crate::lattice::{is_canonical, stream_nondegenerate_quadruples, FrequencySet};

use super::ChaosError;

/// Imaginary parts above this are reported as a symmetry failure.
const REAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct KahanComplex {
    re: Kahan,
    im: Kahan,
}

impl KahanComplex {
    fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    fn value(&self) -> Complex64 {
        Complex64::new(self.re.sum, self.im.sum)
    }
}

/// Sums over X_n(4) of a_λ a_λ' b_λ'' b_λ''' with the λ-weights:
/// `kk`: λ_kλ'_k, `kk_rev`: λ''_kλ'''_k, `kkjj`: λ_kλ'_kλ''_jλ'''_j,
/// `kjkj`: λ_kλ'_jλ''_kλ'''_j; normalized by 1/N, 1/(nN) or 1/(n²N).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct XFamily {
    pub x: f64,
    pub kk: [f64; 3],
    pub kk_rev: [f64; 3],
    pub kkjj: [[f64; 3]; 3],
    pub kjkj: [[f64; 3]; 3],
}

/// The index-contracted X sums: X, Σ_k X_kk, Σ_{k,j} X_kkjj, Σ_{k,j} X_kjkj.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct XContracted {
    pub x: f64,
    pub tr_kk: f64,
    pub tr_kkjj: f64,
    pub tr_kjkj: f64,
}

impl XFamily {
    pub fn contract(&self) -> XContracted {
        XContracted {
            x: self.x,
            tr_kk: self.kk.iter().sum(),
            tr_kkjj: self.kkjj.iter().flatten().sum(),
            tr_kjkj: self.kjkj.iter().flatten().sum(),
        }
    }
}

/// Statistics of a single wave T^{(i)} (including the i₁ = i₂ members of
/// the R and X families).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub w: f64,
    pub w_jk: [[f64; 3]; 3],
    pub r: f64,
    pub r_jk: [[f64; 3]; 3],
    pub x: XFamily,
}

/// Statistics of a pair of waves i₁ < i₂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub i1: usize,
    pub i2: usize,
    pub m: f64,
    pub m_j: [f64; 3],
    pub m_jk: [[f64; 3]; 3],
    pub r: f64,
    pub r_jk: [[f64; 3]; 3],
    pub s: f64,
    pub s_jk: [[f64; 3]; 3],
    pub x: XFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralStatistics {
    pub n: u64,
    pub big_n: usize,
    pub ell: usize,
    pub fields: Vec<FieldStats>,
    pub pairs: Vec<PairStats>,
}

/// Field statistics with the X family reduced to its traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractedField {
    pub w: f64,
    pub w_jk: [[f64; 3]; 3],
    pub r: f64,
    pub x: XContracted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractedPair {
    pub i1: usize,
    pub i2: usize,
    pub m_j: [f64; 3],
    pub m_jk: [[f64; 3]; 3],
    pub r: f64,
    pub s: f64,
    pub x: XContracted,
}

/// The subset of the statistics that enters the fourth-chaos projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractedStatistics {
    pub n: u64,
    pub big_n: usize,
    pub ell: usize,
    pub fields: Vec<ContractedField>,
    pub pairs: Vec<ContractedPair>,
}

impl SpectralStatistics {
    pub fn contract(&self) -> ContractedStatistics {
        ContractedStatistics {
            n: self.n,
            big_n: self.big_n,
            ell: self.ell,
            fields: self
                .fields
                .iter()
                .map(|f| ContractedField {
                    w: f.w,
                    w_jk: f.w_jk,
                    r: f.r,
                    x: f.x.contract(),
                })
                .collect(),
            pairs: self
                .pairs
                .iter()
                .map(|p| ContractedPair {
                    i1: p.i1,
                    i2: p.i2,
                    m_j: p.m_j,
                    m_jk: p.m_jk,
                    r: p.r,
                    s: p.s,
                    x: p.x.contract(),
                })
                .collect(),
        }
    }
}

fn real(z: Complex64, what: &str) -> Result<f64, ChaosError> {
    if z.im.abs() > REAL_TOL * (1.0 + z.re.abs()) {
        return Err(ChaosError::NotReal {
            what: what.to_string(),
            imag: z.im,
        });
    }
    Ok(z.re)
}

fn check_sets(sets: &[WaveCoefficients], freq: &FrequencySet) -> Result<(), ChaosError> {
    if sets.is_empty() || sets.len() > 3 {
        return Err(ChaosError::InvalidEll(sets.len()));
    }
    if sets
        .iter()
        .any(|s| s.n != freq.n || s.a.len() != freq.cardinality())
    {
        return Err(ChaosError::Mismatch);
    }
    Ok(())
}

/// W^{(i)} and W_jk^{(i)} only.
pub fn w_family(freq: &FrequencySet, a: &WaveCoefficients) -> (f64, [[f64; 3]; 3]) {
    let count = freq.cardinality() as f64;
    let n = freq.n as f64;
    let mut w = 0.0;
    let mut w_jk = [[0.0; 3]; 3];
    for (p, c) in freq.points.iter().zip(&a.a) {
        let d = c.norm_sqr() - 1.0;
        w += d;
        for j in 0..3 {
            for k in 0..3 {
                w_jk[j][k] += (p[j] * p[k]) as f64 * d;
            }
        }
    }
    let s = count.sqrt();
    for row in w_jk.iter_mut() {
        for v in row.iter_mut() {
            *v /= n * s;
        }
    }
    (w / s, w_jk)
}

/// M, M_j and M_jk of a pair of waves.
pub fn m_family(
    freq: &FrequencySet,
    a: &WaveCoefficients,
    b: &WaveCoefficients,
) -> Result<(f64, [f64; 3], [[f64; 3]; 3]), ChaosError> {
    let count = freq.cardinality() as f64;
    let n = freq.n as f64;
    let mut m = Complex64::new(0.0, 0.0);
    let mut m_j = [Complex64::new(0.0, 0.0); 3];
    let mut m_jk = [[Complex64::new(0.0, 0.0); 3]; 3];
    for ((p, x), y) in freq.points.iter().zip(&a.a).zip(&b.a) {
        let t = x * y.conj();
        m += t;
        for j in 0..3 {
            m_j[j] += t * p[j] as f64;
            for k in 0..3 {
                m_jk[j][k] += t * (p[j] * p[k]) as f64;
            }
        }
    }
    let s = count.sqrt();
    let mut out_j = [0.0; 3];
    let mut out_jk = [[0.0; 3]; 3];
    for j in 0..3 {
        out_j[j] = real(Complex64::i() * m_j[j] / (n * count).sqrt(), "M_j")?;
        for k in 0..3 {
            out_jk[j][k] = real(m_jk[j][k] / (n * s), "M_jk")?;
        }
    }
    Ok((real(m / s, "M")?, out_j, out_jk))
}

#[derive(Clone, Copy, Default)]
struct XAccumulator {
    x: KahanComplex,
    kk: [KahanComplex; 3],
    kk_rev: [KahanComplex; 3],
    kkjj: [[KahanComplex; 3]; 3],
    kjkj: [[KahanComplex; 3]; 3],
}

impl XAccumulator {
    fn add(&mut self, prod: Complex64, pts: &[[i32; 3]; 4]) {
        self.x.add(prod);
        let l = |q: usize, c: usize| pts[q][c] as f64;
        for k in 0..3 {
            self.kk[k].add(prod * (l(0, k) * l(1, k)));
            self.kk_rev[k].add(prod * (l(2, k) * l(3, k)));
            for j in 0..3 {
                self.kkjj[k][j].add(prod * (l(0, k) * l(1, k) * l(2, j) * l(3, j)));
                self.kjkj[k][j].add(prod * (l(0, k) * l(1, j) * l(2, k) * l(3, j)));
            }
        }
    }

    fn finish(&self, freq: &FrequencySet) -> Result<XFamily, ChaosError> {
        let count = freq.cardinality() as f64;
        let n = freq.n as f64;
        let mut out = XFamily {
            x: real(self.x.value() / count, "X")?,
            ..Default::default()
        };
        for k in 0..3 {
            out.kk[k] = real(self.kk[k].value() / (n * count), "X_kk")?;
            out.kk_rev[k] = real(self.kk_rev[k].value() / (n * count), "X_kk")?;
            for j in 0..3 {
                out.kkjj[k][j] = real(self.kkjj[k][j].value() / (n * n * count), "X_kkjj")?;
                out.kjkj[k][j] = real(self.kjkj[k][j].value() / (n * n * count), "X_kjkj")?;
            }
        }
        Ok(out)
    }
}

fn rs_families(
    freq: &FrequencySet,
    a: &[Complex64],
    b: &[Complex64],
) -> Result<(f64, [[f64; 3]; 3], f64, [[f64; 3]; 3]), ChaosError> {
    let count = freq.cardinality() as f64;
    let n = freq.n as f64;
    let mut r = 0.0;
    let mut r_jk = [[0.0; 3]; 3];
    let mut s = Complex64::new(0.0, 0.0);
    let mut s_jk = [[Complex64::new(0.0, 0.0); 3]; 3];
    for ((p, x), y) in freq.points.iter().zip(a).zip(b) {
        let rr = x.norm_sqr() * y.norm_sqr();
        let ss = x * x * y.conj() * y.conj();
        r += rr;
        s += ss;
        for j in 0..3 {
            for k in 0..3 {
                let w = ((p[j] * p[j]) as f64) * ((p[k] * p[k]) as f64);
                r_jk[j][k] += w * rr;
                s_jk[j][k] += ss * w;
            }
        }
    }
    let mut out_s = [[0.0; 3]; 3];
    for j in 0..3 {
        for k in 0..3 {
            r_jk[j][k] /= n * n * count;
            out_s[j][k] = real(s_jk[j][k] / (n * n * count), "S_jk")?;
        }
    }
    Ok((r / count, r_jk, real(s / count, "S")?, out_s))
}

/// All statistics of one replication, with the X families accumulated by
/// compensated summation in a single pass over the streamed quadruples of
/// X_n(4).
pub fn compute_rv1(
    sets: &[WaveCoefficients],
    freq: &FrequencySet,
) -> Result<SpectralStatistics, ChaosError> {
    check_sets(sets, freq)?;
    let ell = sets.len();
    let combos: Vec<(usize, usize)> = (0..ell)
        .flat_map(|i| (i..ell).map(move |j| (i, j)))
        .collect();
    let mut acc = vec![XAccumulator::default(); combos.len()];
    stream_nondegenerate_quadruples(freq, |idx, pts| {
        for (slot, &(i, j)) in acc.iter_mut().zip(&combos) {
            let (a, b) = (&sets[i].a, &sets[j].a);
            slot.add(a[idx[0]] * a[idx[1]] * b[idx[2]] * b[idx[3]], &pts);
        }
    });
    let x_of = |i: usize, j: usize| {
        let pos = combos
            .iter()
            .position(|&c| c == (i, j))
            .expect("combination present");
        acc[pos].finish(freq)
    };

    let mut fields = Vec::new();
    for (i, set) in sets.iter().enumerate() {
        let (w, w_jk) = w_family(freq, set);
        let (r, r_jk, _, _) = rs_families(freq, &set.a, &set.a)?;
        fields.push(FieldStats {
            w,
            w_jk,
            r,
            r_jk,
            x: x_of(i, i)?,
        });
    }
    let mut pairs = Vec::new();
    for i1 in 0..ell {
        for i2 in i1 + 1..ell {
            let (a, b) = (&sets[i1], &sets[i2]);
            let (m, m_j, m_jk) = m_family(freq, a, b)?;
            let (r, r_jk, s, s_jk) = rs_families(freq, &a.a, &b.a)?;
            pairs.push(PairStats {
                i1,
                i2,
                m,
                m_j,
                m_jk,
                r,
                r_jk,
                s,
                s_jk,
                x: x_of(i1, i2)?,
            });
        }
    }
    Ok(SpectralStatistics {
        n: freq.n,
        big_n: freq.cardinality(),
        ell,
        fields,
        pairs,
    })
}

/// Ordered pairs (λ, λ') with λ + λ' ≠ 0, grouped by their sum; only sums on
/// the canonical half-lattice are kept, the opposite bucket being the
/// conjugate for Hermitian coefficients.
#[derive(Debug, Clone)]
pub struct PairBuckets {
    n: u64,
    big_n: usize,
    points: Vec<[f64; 3]>,
    antipode: Vec<usize>,
    offsets: Vec<usize>,
    first: Vec<u32>,
    second: Vec<u32>,
    /// ⟨λ, λ'⟩ / n for the pairs of each bucket.
    inner: Vec<f64>,
}

impl PairBuckets {
    pub fn new(freq: &FrequencySet) -> Self {
        let pts = &freq.points;
        let mut keyed: Vec<([i32; 3], u32, u32)> = Vec::new();
        for (i, p) in pts.iter().enumerate() {
            for (j, q) in pts.iter().enumerate() {
                let s = [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
                if is_canonical(s) {
                    keyed.push((s, i as u32, j as u32));
                }
            }
        }
        keyed.sort_unstable();
        let n = freq.n as f64;
        let mut offsets = vec![0];
        let mut inner = Vec::new();
        for w in 0..keyed.len() {
            if w > 0 && keyed[w].0 != keyed[w - 1].0 {
                offsets.push(w);
            }
            if w == 0 || keyed[w].0 != keyed[w - 1].0 {
                let s = keyed[w].0;
                let s2 = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]) as f64;
                inner.push((s2 - 2.0 * n) / (2.0 * n));
            }
        }
        offsets.push(keyed.len());
        PairBuckets {
            n: freq.n,
            big_n: pts.len(),
            points: pts
                .iter()
                .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
                .collect(),
            antipode: freq.antipodes(),
            offsets,
            first: keyed.iter().map(|k| k.1).collect(),
            second: keyed.iter().map(|k| k.2).collect(),
            inner,
        }
    }

    pub fn bucket_count(&self) -> usize {
        self.inner.len()
    }

    pub fn pair_count(&self) -> usize {
        self.first.len()
    }

    /// P_{cd}(s) = Σ_{λ+λ'=s} c_λ d_λ' on the canonical buckets.
    fn pair_sums(&self, c: &[Complex64], d: &[Complex64]) -> Vec<Complex64> {
        (0..self.inner.len())
            .map(|b| {
                let mut acc = Complex64::new(0.0, 0.0);
                for w in self.offsets[b]..self.offsets[b + 1] {
                    acc += c[self.first[w] as usize] * d[self.second[w] as usize];
                }
                acc
            })
            .collect()
    }

    /// Σ over X_n(4) of g(⟨λ₁,λ₂⟩/n) c1_λ₁ c2_λ₂ c3_λ₃ c4_λ₄ for g = 1, t, t².
    ///
    /// `main` holds Σ_{s≠0} g P_{c1c2}(s) P_{c3c4}(−s) per power; the two
    /// degenerate families λ₃ = −λ₁ and λ₄ = −λ₁ are removed and their
    /// overlap λ₁ = λ₂ added back.
    fn nondegenerate(&self, main: [Complex64; 3], c: [&[Complex64]; 4]) -> [Complex64; 3] {
        let neg = &self.antipode;
        let mut out = main;
        // λ₃ = −λ₁, λ₄ = −λ₂ and λ₃ = −λ₂, λ₄ = −λ₁
        for (u_at, v_at) in [((0, 2), (1, 3)), ((0, 3), (1, 2))] {
            let u: Vec<Complex64> = (0..self.big_n)
                .map(|i| c[u_at.0][i] * c[u_at.1][neg[i]])
                .collect();
            let v: Vec<Complex64> = (0..self.big_n)
                .map(|i| c[v_at.0][i] * c[v_at.1][neg[i]])
                .collect();
            let d = self.factorized(&u, &v);
            // exclude λ₂ = −λ₁, where ⟨λ₁,λ₂⟩/n = −1
            let anti: Complex64 = (0..self.big_n).map(|i| u[i] * v[neg[i]]).sum();
            for p in 0..3 {
                out[p] -= d[p] - anti * (-1f64).powi(p as i32);
            }
        }
        // λ₁ = λ₂, λ₃ = λ₄ = −λ₁, where ⟨λ₁,λ₂⟩/n = 1
        let both: Complex64 = (0..self.big_n)
            .map(|i| c[0][i] * c[1][i] * c[2][neg[i]] * c[3][neg[i]])
            .sum();
        for o in out.iter_mut() {
            *o += both;
        }
        out
    }

    /// Σ_{λ₁,λ₂} (⟨λ₁,λ₂⟩/n)^p u_λ₁ v_λ₂ for p = 0, 1, 2.
    fn factorized(&self, u: &[Complex64], v: &[Complex64]) -> [Complex64; 3] {
        let n = self.n as f64;
        let moments = |w: &[Complex64]| {
            let mut m0 = Complex64::new(0.0, 0.0);
            let mut m1 = [Complex64::new(0.0, 0.0); 3];
            let mut m2 = [[Complex64::new(0.0, 0.0); 3]; 3];
            for (p, z) in self.points.iter().zip(w) {
                m0 += z;
                for k in 0..3 {
                    m1[k] += z * p[k];
                    for j in 0..3 {
                        m2[k][j] += z * (p[k] * p[j]);
                    }
                }
            }
            (m0, m1, m2)
        };
        let (a0, a1, a2) = moments(u);
        let (b0, b1, b2) = moments(v);
        let mut t1 = Complex64::new(0.0, 0.0);
        let mut t2 = Complex64::new(0.0, 0.0);
        for k in 0..3 {
            t1 += a1[k] * b1[k];
            for j in 0..3 {
                t2 += a2[k][j] * b2[k][j];
            }
        }
        [a0 * b0, t1 / n, t2 / (n * n)]
    }

    fn weighted_main(&self, p12: &[Complex64], p34: &[Complex64], mixed: bool) -> [Complex64; 3] {
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for (b, &t) in self.inner.iter().enumerate() {
            // Σ over s and −s: P12(s) P34(−s) + P12(−s) P34(s), with P(−s) = conj P(s)
            let z = if mixed {
                Complex64::new(2.0 * p12[b].norm_sqr(), 0.0)
            } else {
                let q = p12[b] * p34[b].conj();
                Complex64::new(2.0 * q.re, 0.0)
            };
            out[0] += z;
            out[1] += z * t;
            out[2] += z * (t * t);
        }
        out
    }

    /// Contracted statistics of one replication of ℓ waves.
    pub fn contracted_statistics(
        &self,
        sets: &[WaveCoefficients],
        freq: &FrequencySet,
    ) -> Result<ContractedStatistics, ChaosError> {
        check_sets(sets, freq)?;
        if freq.n != self.n {
            return Err(ChaosError::Mismatch);
        }
        let count = self.big_n as f64;
        let own: Vec<Vec<Complex64>> = sets.iter().map(|s| self.pair_sums(&s.a, &s.a)).collect();
        let same = |i: usize, j: usize| -> Result<XContracted, ChaosError> {
            let (a, b) = (&sets[i].a, &sets[j].a);
            let main = self.weighted_main(&own[i], &own[j], false);
            let v = self.nondegenerate(main, [a, a, b, b]);
            Ok(XContracted {
                x: real(v[0] / count, "X")?,
                tr_kk: real(v[1] / count, "X_kk")?,
                tr_kkjj: real(v[2] / count, "X_kkjj")?,
                tr_kjkj: 0.0,
            })
        };
        let mut fields = Vec::new();
        for (i, set) in sets.iter().enumerate() {
            let (w, w_jk) = w_family(freq, set);
            let r = set.a.iter().map(|c| c.norm_sqr().powi(2)).sum::<f64>() / count;
            let mut x = same(i, i)?;
            x.tr_kjkj = x.tr_kkjj;
            fields.push(ContractedField { w, w_jk, r, x });
        }
        let mut pairs = Vec::new();
        for i1 in 0..sets.len() {
            for i2 in i1 + 1..sets.len() {
                let (a, b) = (&sets[i1].a, &sets[i2].a);
                let (_, m_j, m_jk) = m_family(freq, &sets[i1], &sets[i2])?;
                let mut r = 0.0;
                let mut s = Complex64::new(0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    r += x.norm_sqr() * y.norm_sqr();
                    s += x * x * y.conj() * y.conj();
                }
                let mut x = same(i1, i2)?;
                let pab = self.pair_sums(a, b);
                let main = self.weighted_main(&pab, &pab, true);
                let v = self.nondegenerate(main, [a, b, a, b]);
                x.tr_kjkj = real(v[2] / count, "X_kjkj")?;
                pairs.push(ContractedPair {
                    i1,
                    i2,
                    m_j,
                    m_jk,
                    r: r / count,
                    s: real(s / count, "S")?,
                    x,
                });
            }
        }
        Ok(ContractedStatistics {
            n: self.n,
            big_n: self.big_n,
            ell: sets.len(),
            fields,
            pairs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_coefficients, make_family};
    use crate::lattice::{correlation_census, enumerate_frequencies};

    #[test]
    fn constant_coefficients() {
        let f = enumerate_frequencies(9).unwrap();
        let ones = vec![Complex64::new(1.0, 0.0); f.cardinality()];
        let w = make_coefficients(&f, 0, 0, Some(&ones)).unwrap();
        let st = compute_rv1(&[w], &f).unwrap();
        assert_eq!(st.fields[0].w, 0.0);
        assert!(st.fields[0].w_jk.iter().flatten().all(|v| *v == 0.0));
        assert!((st.fields[0].r - 1.0).abs() < 1e-15);
        let census = correlation_census(&f, 4).unwrap();
        assert!(
            (st.fields[0].x.x - census.card_x4.unwrap() as f64 / f.cardinality() as f64).abs()
                < 1e-9
        );
    }

    #[test]
    fn trace_identities() {
        let f = enumerate_frequencies(11).unwrap();
        let sets = make_family(&f, 5, 0, 2);
        let st = compute_rv1(&sets, &f).unwrap();
        let p = &st.pairs[0];
        let rs: f64 = p.r_jk.iter().flatten().sum();
        let ss: f64 = p.s_jk.iter().flatten().sum();
        assert!((rs - p.r).abs() < 1e-12);
        assert!((ss - p.s).abs() < 1e-12);
        let mk: f64 = (0..3).map(|k| p.m_jk[k][k]).sum();
        assert!((mk - p.m).abs() < 1e-12);
        let wk: f64 = (0..3).map(|k| st.fields[1].w_jk[k][k]).sum();
        assert!((wk - st.fields[1].w).abs() < 1e-12);
        // ⟨λ,λ'⟩ = ⟨λ'',λ'''⟩ on 4-correlations
        let a: f64 = p.x.kk.iter().sum();
        let b: f64 = p.x.kk_rev.iter().sum();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn buckets_match_stream() {
        for n in [3, 9, 17, 26] {
            let f = enumerate_frequencies(n).unwrap();
            let buckets = PairBuckets::new(&f);
            let sets = make_family(&f, 77, 3, 3);
            let full = compute_rv1(&sets, &f).unwrap().contract();
            let fast = buckets.contracted_statistics(&sets, &f).unwrap();
            let close = |a: f64, b: f64| (a - b).abs() < 1e-9 * (1.0 + a.abs());
            for (x, y) in full.fields.iter().zip(&fast.fields) {
                assert!(close(x.x.x, y.x.x), "n={n} X {} {}", x.x.x, y.x.x);
                assert!(close(x.x.tr_kk, y.x.tr_kk));
                assert!(close(x.x.tr_kkjj, y.x.tr_kkjj));
                assert!(close(x.r, y.r));
            }
            for (x, y) in full.pairs.iter().zip(&fast.pairs) {
                assert!(close(x.x.x, y.x.x), "n={n} pair X {} {}", x.x.x, y.x.x);
                assert!(close(x.x.tr_kk, y.x.tr_kk));
                assert!(close(x.x.tr_kkjj, y.x.tr_kkjj));
                assert!(
                    close(x.x.tr_kjkj, y.x.tr_kjkj),
                    "n={n} kjkj {} {}",
                    x.x.tr_kjkj,
                    y.x.tr_kjkj
                );
                assert!(close(x.s, y.s) && close(x.r, y.r));
            }
        }
    }
}
