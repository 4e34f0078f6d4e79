//! Exact integer matrices and the floating-point spectral kernels.
//!
//! [`IntMatrix`] carries arbitrary-precision entries and its determinant.
//! Singular values are computed from exterior powers: `||Λ^k g||` is the
//! product `σ_1 ⋯ σ_k`, and each `Λ^k g` is an exact integer matrix of
//! `k`-minors. Its top singular value comes from a cyclic Jacobi eigensolve
//! of the pre-scaled Gram matrix. Taking ratios keeps small singular values
//! accurate even when the entries of `g` are far beyond double range.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::Value;

use crate::error::{Error, Result};

/// Off-diagonal mass (relative to the Frobenius norm) at which Jacobi stops.
pub const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric `n × n` row-major matrix by cyclic Jacobi.
///
/// Returns eigenvalues in non-increasing order and the matching unit
/// eigenvectors.
pub fn jacobi_eigen(sym: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(sym.len(), n * n, "jacobi_eigen: wrong buffer size");
    let mut a = sym.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if frob > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i * n + j] * a[i * n + j])
                .sum::<f64>()
                .sqrt();
            if off <= JACOBI_TOL * frob {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
        .collect();
    (values, vectors)
}

/// Largest eigenvalue of `mᵀm` for a row-major `rows × cols` matrix.
fn gram_top_eigenvalue(m: &[f64], rows: usize, cols: usize) -> f64 {
    let mut g = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in i..cols {
            let s: f64 = (0..rows).map(|r| m[r * cols + i] * m[r * cols + j]).sum();
            g[i * cols + j] = s;
            g[j * cols + i] = s;
        }
    }
    let (vals, _) = jacobi_eigen(&g, cols);
    vals[0].max(0.0)
}

/// Converts integers to doubles after factoring out a common `2^shift` so the
/// largest magnitude fits the 53-bit mantissa. `value ≈ out · 2^shift`.
pub(crate) fn scaled_f64(entries: &[BigInt]) -> (Vec<f64>, i64) {
    let bits = entries.iter().map(|e| e.bits()).max().unwrap_or(0) as i64;
    let shift = (bits - 53).max(0);
    let out = entries
        .iter()
        .map(|e| {
            if shift == 0 {
                e.to_f64().expect("bigint to f64")
            } else {
                (e >> shift as usize).to_f64().expect("bigint to f64")
            }
        })
        .collect();
    (out, shift)
}

/// Determinant by fraction-free Bareiss elimination.
pub fn bareiss_det(entries: &[BigInt], n: usize) -> BigInt {
    if n == 0 {
        return BigInt::one();
    }
    let mut m = entries.to_vec();
    let mut sign = BigInt::one();
    let mut prev = BigInt::one();
    for k in 0..n - 1 {
        if m[k * n + k].is_zero() {
            match ((k + 1)..n).find(|&r| !m[r * n + k].is_zero()) {
                Some(r) => {
                    for c in 0..n {
                        m.swap(k * n + c, r * n + c);
                    }
                    sign = -sign;
                }
                None => return BigInt::zero(),
            }
        }
        for i in (k + 1)..n {
            for j in (k + 1)..n {
                let v = (&m[i * n + j] * &m[k * n + k] - &m[i * n + k] * &m[k * n + j]) / &prev;
                m[i * n + j] = v;
            }
        }
        prev = m[k * n + k].clone();
    }
    sign * &m[(n - 1) * n + (n - 1)]
}

/// Rank of an integer matrix (rows × cols) by exact fraction-free elimination.
pub fn exact_rank(entries: &[BigInt], rows: usize, cols: usize) -> usize {
    let mut m = entries.to_vec();
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows).find(|&r| !m[r * cols + c].is_zero()) else {
            continue;
        };
        for k in 0..cols {
            m.swap(rank * cols + k, p * cols + k);
        }
        for r in 0..rows {
            if r != rank && !m[r * cols + c].is_zero() {
                let f = m[r * cols + c].clone();
                let piv = m[rank * cols + c].clone();
                for k in 0..cols {
                    m[r * cols + k] = &m[r * cols + k] * &piv - &m[rank * cols + k] * &f;
                }
            }
        }
        rank += 1;
        if rank == rows {
            break;
        }
    }
    rank
}

/// Lexicographically ordered `k`-subsets of `0..n`.
pub(crate) fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Exact `d × d` integer matrix with cached determinant.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IntMatrix {
    dim: usize,
    entries: Vec<BigInt>,
    det: BigInt,
}

impl IntMatrix {
    /// Builds a matrix from row-major entries.
    pub fn new(dim: usize, entries: Vec<BigInt>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::MalformedMatrix(format!(
                "{} entries for dimension {}",
                entries.len(),
                dim
            )));
        }
        let det = bareiss_det(&entries, dim);
        Ok(IntMatrix { dim, entries, det })
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::MalformedMatrix("rows are not square".into()));
        }
        Self::new(dim, rows.iter().flatten().map(|&x| BigInt::from(x)).collect())
    }

    /// Builds an element of `SL_d(Z)`, rejecting determinants other than 1.
    pub fn group_element(rows: &[Vec<i64>]) -> Result<Self> {
        Self::from_rows(rows)?.into_group_element()
    }

    /// Checks `SL_d(Z)` membership.
    pub fn into_group_element(self) -> Result<Self> {
        if self.det.is_one() {
            Ok(self)
        } else {
            Err(Error::NotInSl { det: self.det.to_string() })
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![BigInt::zero(); dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = BigInt::one();
        }
        IntMatrix { dim, entries, det: BigInt::one() }
    }

    pub fn zero(dim: usize) -> Self {
        IntMatrix {
            dim,
            entries: vec![BigInt::zero(); dim * dim],
            det: if dim == 0 { BigInt::one() } else { BigInt::zero() },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[BigInt] {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> &BigInt {
        &self.entries[i * self.dim + j]
    }

    pub fn det(&self) -> &BigInt {
        &self.det
    }

    /// Exact product `self · other`.
    pub fn mat_mul(&self, other: &IntMatrix) -> Result<IntMatrix> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let d = self.dim;
        let mut entries = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let mut s = BigInt::zero();
                for k in 0..d {
                    s += &self.entries[i * d + k] * &other.entries[k * d + j];
                }
                entries.push(s);
            }
        }
        Ok(IntMatrix { dim: d, entries, det: &self.det * &other.det })
    }

    fn zip_with(&self, other: &IntMatrix, f: impl Fn(&BigInt, &BigInt) -> BigInt) -> IntMatrix {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let entries: Vec<BigInt> =
            self.entries.iter().zip(&other.entries).map(|(a, b)| f(a, b)).collect();
        let det = bareiss_det(&entries, self.dim);
        IntMatrix { dim: self.dim, entries, det }
    }

    pub fn add(&self, other: &IntMatrix) -> IntMatrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &IntMatrix) -> IntMatrix {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn transpose(&self) -> IntMatrix {
        let d = self.dim;
        let entries = (0..d * d).map(|k| self.entries[(k % d) * d + k / d].clone()).collect();
        IntMatrix { dim: d, entries, det: self.det.clone() }
    }

    /// Inverse of a unimodular matrix (determinant ±1), via the adjugate.
    pub fn inverse(&self) -> Result<IntMatrix> {
        if self.det.abs() != BigInt::one() {
            return Err(Error::Singular);
        }
        let d = self.dim;
        if d == 1 {
            return Ok(self.clone());
        }
        let mut entries = vec![BigInt::zero(); d * d];
        for i in 0..d {
            for j in 0..d {
                let minor: Vec<BigInt> = (0..d)
                    .filter(|&r| r != i)
                    .flat_map(|r| (0..d).filter(move |&c| c != j).map(move |c| (r, c)))
                    .map(|(r, c)| self.entries[r * d + c].clone())
                    .collect();
                let cof = bareiss_det(&minor, d - 1);
                let cof = if (i + j) % 2 == 0 { cof } else { -cof };
                // adj[j][i] = cofactor(i, j); inverse = adj / det = adj * det
                entries[j * d + i] = cof * &self.det;
            }
        }
        Ok(IntMatrix { dim: d, entries, det: self.det.clone() })
    }

    /// Block-diagonal sum `self ⊕ other`.
    pub fn direct_sum(&self, other: &IntMatrix) -> IntMatrix {
        let (a, b) = (self.dim, other.dim);
        let d = a + b;
        let mut entries = vec![BigInt::zero(); d * d];
        for i in 0..a {
            for j in 0..a {
                entries[i * d + j] = self.entries[i * a + j].clone();
            }
        }
        for i in 0..b {
            for j in 0..b {
                entries[(a + i) * d + a + j] = other.entries[i * b + j].clone();
            }
        }
        IntMatrix { dim: d, entries, det: &self.det * &other.det }
    }

    /// Largest absolute row sum (the ∞-operator norm), as a double.
    pub fn max_row_abs_sum(&self) -> f64 {
        (0..self.dim)
            .map(|i| {
                self.entries[i * self.dim..(i + 1) * self.dim]
                    .iter()
                    .map(|e| e.abs().to_f64().unwrap_or(f64::INFINITY))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Matrix of `k × k` minors (rows and columns indexed by lexicographic subsets).
    pub fn compound(&self, k: usize) -> Vec<BigInt> {
        let d = self.dim;
        let subs = subsets(d, k);
        let m = subs.len();
        let mut out = Vec::with_capacity(m * m);
        for rs in &subs {
            for cs in &subs {
                let sub: Vec<BigInt> = rs
                    .iter()
                    .flat_map(|&r| cs.iter().map(move |&c| (r, c)))
                    .map(|(r, c)| self.entries[r * d + c].clone())
                    .collect();
                out.push(bareiss_det(&sub, k));
            }
        }
        out
    }

    /// Entries as doubles (may overflow to infinity for huge entries).
    pub fn to_real(&self) -> RealMatrix {
        RealMatrix::new(
            self.dim,
            self.entries.iter().map(|e| e.to_f64().unwrap_or(f64::NAN)).collect(),
        )
        .expect("finite conversion")
    }

    /// `e^{log_factor} · self` as doubles, robust to entries beyond double range.
    pub fn to_real_scaled(&self, log_factor: f64) -> RealMatrix {
        let (scaled, shift) = scaled_f64(&self.entries);
        let log_total = log_factor + shift as f64 * std::f64::consts::LN_2;
        let factor = log_total.exp();
        RealMatrix::new(self.dim, scaled.into_iter().map(|x| x * factor).collect())
            .expect("finite scaled conversion")
    }

    /// Parses the JSON matrix literal: an array of rows of integers or decimal strings.
    pub fn from_json(value: &Value) -> Result<Self> {
        let rows = value
            .as_array()
            .ok_or_else(|| Error::MalformedMatrix("expected an array of rows".into()))?;
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            let row = row
                .as_array()
                .ok_or_else(|| Error::MalformedMatrix("expected a row array".into()))?;
            if row.len() != dim {
                return Err(Error::MalformedMatrix("rows are not square".into()));
            }
            for x in row {
                let v = match x {
                    Value::Number(n) => n
                        .as_i64()
                        .map(BigInt::from)
                        .or_else(|| n.as_u64().map(BigInt::from))
                        .ok_or_else(|| Error::MalformedMatrix(format!("non-integer entry {n}")))?,
                    Value::String(s) => s
                        .trim()
                        .parse::<BigInt>()
                        .map_err(|_| Error::MalformedMatrix(format!("bad integer '{s}'")))?,
                    other => {
                        return Err(Error::MalformedMatrix(format!("bad entry {other}")));
                    }
                };
                entries.push(v);
            }
        }
        Self::new(dim, entries)
    }

    /// JSON literal; entries beyond `i64` are written as decimal strings.
    pub fn to_json(&self) -> Value {
        Value::Array(
            (0..self.dim)
                .map(|i| {
                    Value::Array(
                        (0..self.dim)
                            .map(|j| {
                                let e = &self.entries[i * self.dim + j];
                                match e.to_i64() {
                                    Some(v) => Value::from(v),
                                    None => Value::from(e.to_string()),
                                }
                            })
                            .collect(),
                    )
                })
                .collect(),
        )
    }
}

impl PartialOrd for IntMatrix {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for IntMatrix {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dim.cmp(&other.dim).then_with(|| self.entries.cmp(&other.entries))
    }
}

impl fmt::Display for IntMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

/// Free-function form of [`IntMatrix::mat_mul`].
pub fn mat_mul(a: &IntMatrix, b: &IntMatrix) -> Result<IntMatrix> {
    a.mat_mul(b)
}

/// Ordered singular values and Cartan projection of a matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularProfile {
    /// `σ_1 ≥ … ≥ σ_d`; may overflow to `inf` for astronomically large products.
    pub sigma: Vec<f64>,
    /// `log σ_i`; `None` when the matrix is singular.
    pub kappa: Option<Vec<f64>>,
    /// `log(σ_1 ⋯ σ_k)` for `k = 1..=d` (`-inf` past the rank).
    pub log_wedge_norms: Vec<f64>,
}

impl SingularProfile {
    pub fn is_singular(&self) -> bool {
        self.kappa.is_none()
    }
}

/// `log ||M||` (spectral) of an exact integer matrix with `rows × cols` entries.
fn log_spectral_norm_exact(m: &[BigInt], rows: usize, cols: usize) -> f64 {
    if m.iter().all(Zero::is_zero) {
        return f64::NEG_INFINITY;
    }
    let (scaled, shift) = scaled_f64(m);
    let top = gram_top_eigenvalue(&scaled, rows, cols);
    0.5 * top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Full ordered singular spectrum of `g`.
pub fn singular_values(g: &IntMatrix) -> SingularProfile {
    let d = g.dim();
    let mut log_wedge = Vec::with_capacity(d);
    for k in 1..=d {
        let c = if k == 1 { g.entries.clone() } else { g.compound(k) };
        let m = if k == 1 { d } else { subsets(d, k).len() };
        log_wedge.push(log_spectral_norm_exact(&c, m, m));
    }
    let singular = log_wedge.iter().any(|l| l.is_infinite());
    let mut kappa: Vec<f64> = (0..d)
        .map(|k| if k == 0 { log_wedge[0] } else { log_wedge[k] - log_wedge[k - 1] })
        .collect();
    if singular {
        let sigma = kappa
            .iter()
            .map(|k| if k.is_nan() { 0.0 } else { k.exp() })
            .collect::<Vec<_>>();
        let mut sigma = sigma;
        sigma.sort_by(|a, b| b.total_cmp(a));
        return SingularProfile { sigma, kappa: None, log_wedge_norms: log_wedge };
    }
    kappa.sort_by(|a, b| b.total_cmp(a));
    let sigma = kappa.iter().map(|k| k.exp()).collect();
    SingularProfile { sigma, kappa: Some(kappa), log_wedge_norms: log_wedge }
}

/// Spectral norm `σ_1(a)`.
pub fn operator_norm(a: &IntMatrix) -> f64 {
    log_operator_norm(a).exp()
}

/// `log σ_1(a)`, finite even when `σ_1` overflows a double.
pub fn log_operator_norm(a: &IntMatrix) -> f64 {
    log_spectral_norm_exact(&a.entries, a.dim, a.dim)
}

/// Cartan projection `(log σ_1, …, log σ_d)`.
pub fn cartan_projection(g: &IntMatrix) -> Result<Vec<f64>> {
    singular_values(g).kappa.ok_or(Error::Singular)
}

#[inline]
fn canon(x: f64) -> f64 {
    x + 0.0
}

/// Dense real `d × d` matrix (row-major, finite entries).
#[derive(Clone, Debug, PartialEq)]
pub struct RealMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl Eq for RealMatrix {}

impl PartialOrd for RealMatrix {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RealMatrix {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dim.cmp(&other.dim).then_with(|| {
            for (a, b) in self.entries.iter().zip(&other.entries) {
                match a.total_cmp(b) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            Ordering::Equal
        })
    }
}

/// Thin singular value decomposition `a = Σ σ_i u_i v_iᵀ`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub sigma: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl RealMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::MalformedMatrix(format!(
                "{} entries for dimension {}",
                entries.len(),
                dim
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::MalformedMatrix("non-finite entry".into()));
        }
        Ok(RealMatrix { dim, entries: entries.into_iter().map(canon).collect() })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::MalformedMatrix("rows are not square".into()));
        }
        Self::new(dim, rows.iter().flatten().copied().collect())
    }

    pub fn identity(dim: usize) -> Self {
        let mut e = vec![0.0; dim * dim];
        for i in 0..dim {
            e[i * dim + i] = 1.0;
        }
        RealMatrix { dim, entries: e }
    }

    pub fn zero(dim: usize) -> Self {
        RealMatrix { dim, entries: vec![0.0; dim * dim] }
    }

    /// Matrix unit `E_ij`.
    pub fn unit(dim: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zero(dim);
        m.entries[i * dim + j] = 1.0;
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn mul(&self, other: &RealMatrix) -> RealMatrix {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let d = self.dim;
        let mut e = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.entries[i * d + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    e[i * d + j] += a * other.entries[k * d + j];
                }
            }
        }
        RealMatrix { dim: d, entries: e.into_iter().map(canon).collect() }
    }

    pub fn add(&self, other: &RealMatrix) -> RealMatrix {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let e = self.entries.iter().zip(&other.entries).map(|(a, b)| canon(a + b)).collect();
        RealMatrix { dim: self.dim, entries: e }
    }

    pub fn sub(&self, other: &RealMatrix) -> RealMatrix {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let e = self.entries.iter().zip(&other.entries).map(|(a, b)| canon(a - b)).collect();
        RealMatrix { dim: self.dim, entries: e }
    }

    pub fn scale(&self, s: f64) -> RealMatrix {
        RealMatrix { dim: self.dim, entries: self.entries.iter().map(|x| canon(x * s)).collect() }
    }

    pub fn transpose(&self) -> RealMatrix {
        let d = self.dim;
        RealMatrix { dim: d, entries: (0..d * d).map(|k| self.entries[(k % d) * d + k / d]).collect() }
    }

    /// Trace pairing `tr(selfᵀ other)`.
    pub fn pairing(&self, other: &RealMatrix) -> f64 {
        self.entries.iter().zip(&other.entries).map(|(a, b)| a * b).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.pairing(self).sqrt()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d).map(|i| (0..d).map(|j| self.entries[i * d + j] * v[j]).sum()).collect()
    }

    fn gram(&self) -> Vec<f64> {
        let d = self.dim;
        let mut g = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let s: f64 = (0..d).map(|r| self.entries[r * d + i] * self.entries[r * d + j]).sum();
                g[i * d + j] = s;
                g[j * d + i] = s;
            }
        }
        g
    }

    /// Spectral norm.
    pub fn operator_norm(&self) -> f64 {
        gram_top_eigenvalue(&self.entries, self.dim, self.dim).sqrt()
    }

    pub fn singular_values(&self) -> Vec<f64> {
        let (vals, _) = jacobi_eigen(&self.gram(), self.dim);
        vals.into_iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// SVD from the Jacobi eigenvectors of `aᵀa`.
    pub fn svd(&self) -> Svd {
        let d = self.dim;
        let (vals, vecs) = jacobi_eigen(&self.gram(), d);
        let sigma: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
        let u = vecs
            .iter()
            .zip(&sigma)
            .map(|(v, &s)| {
                let av = self.apply(v);
                if s > 0.0 {
                    av.into_iter().map(|x| x / s).collect()
                } else {
                    vec![0.0; d]
                }
            })
            .collect();
        Svd { sigma, u, v: vecs }
    }

    /// Rank-`r` truncation `Σ_{i<r} σ_i u_i v_iᵀ`.
    pub fn truncate_rank(&self, r: usize) -> RealMatrix {
        let d = self.dim;
        let svd = self.svd();
        let mut e = vec![0.0; d * d];
        for k in 0..r.min(d) {
            for i in 0..d {
                for j in 0..d {
                    e[i * d + j] += svd.sigma[k] * svd.u[k][i] * svd.v[k][j];
                }
            }
        }
        RealMatrix { dim: d, entries: e.into_iter().map(canon).collect() }
    }

    pub fn max_abs_diff(&self, other: &RealMatrix) -> f64 {
        self.entries.iter().zip(&other.entries).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Exact rational `d × d` matrix.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RatMatrix {
    dim: usize,
    entries: Vec<BigRational>,
}

impl RatMatrix {
    pub fn new(dim: usize, entries: Vec<BigRational>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::MalformedMatrix(format!(
                "{} entries for dimension {}",
                entries.len(),
                dim
            )));
        }
        Ok(RatMatrix { dim, entries })
    }

    /// Entries given as `(numerator, denominator)` pairs, row-major.
    pub fn from_ratios(dim: usize, ratios: &[(i64, i64)]) -> Result<Self> {
        if ratios.iter().any(|&(_, q)| q == 0) {
            return Err(Error::MalformedMatrix("zero denominator".into()));
        }
        Self::new(
            dim,
            ratios
                .iter()
                .map(|&(p, q)| BigRational::new(BigInt::from(p), BigInt::from(q)))
                .collect(),
        )
    }

    pub fn identity(dim: usize) -> Self {
        let mut e = vec![BigRational::zero(); dim * dim];
        for i in 0..dim {
            e[i * dim + i] = BigRational::one();
        }
        RatMatrix { dim, entries: e }
    }

    pub fn zero(dim: usize) -> Self {
        RatMatrix { dim, entries: vec![BigRational::zero(); dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[BigRational] {
        &self.entries
    }

    pub fn mul(&self, other: &RatMatrix) -> RatMatrix {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let d = self.dim;
        let mut e = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let mut s = BigRational::zero();
                for k in 0..d {
                    s += &self.entries[i * d + k] * &other.entries[k * d + j];
                }
                e.push(s);
            }
        }
        RatMatrix { dim: d, entries: e }
    }

    pub fn add(&self, other: &RatMatrix) -> RatMatrix {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        RatMatrix {
            dim: self.dim,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &RatMatrix) -> RatMatrix {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        RatMatrix {
            dim: self.dim,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a - b).collect(),
        }
    }

    /// Exact pairing `Σ ξ_ij x_ij`.
    pub fn pairing(&self, other: &RatMatrix) -> BigRational {
        self.entries.iter().zip(&other.entries).map(|(a, b)| a * b).sum()
    }

    pub fn to_real(&self) -> RealMatrix {
        RealMatrix::new(self.dim, self.entries.iter().map(|e| e.to_f64().unwrap_or(f64::NAN)).collect())
            .expect("finite rational conversion")
    }
}

impl From<&IntMatrix> for RatMatrix {
    fn from(m: &IntMatrix) -> Self {
        RatMatrix {
            dim: m.dim,
            entries: m.entries.iter().map(|e| BigRational::from_integer(e.clone())).collect(),
        }
    }
}

/// Points on which finite measures live: closed under `+`, `−`, `·`.
pub trait MatrixPoint: Clone + Ord + fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn identity_like(dim: usize) -> Self;
    fn zero_like(dim: usize) -> Self;
    fn mul_point(&self, other: &Self) -> Self;
    fn add_point(&self, other: &Self) -> Self;
    fn sub_point(&self, other: &Self) -> Self;
}

impl MatrixPoint for IntMatrix {
    fn dim(&self) -> usize {
        self.dim
    }
    fn identity_like(dim: usize) -> Self {
        IntMatrix::identity(dim)
    }
    fn zero_like(dim: usize) -> Self {
        IntMatrix::zero(dim)
    }
    fn mul_point(&self, other: &Self) -> Self {
        self.mat_mul(other).expect("dimension checked by caller")
    }
    fn add_point(&self, other: &Self) -> Self {
        self.add(other)
    }
    fn sub_point(&self, other: &Self) -> Self {
        self.sub(other)
    }
}

impl MatrixPoint for RealMatrix {
    fn dim(&self) -> usize {
        self.dim
    }
    fn identity_like(dim: usize) -> Self {
        RealMatrix::identity(dim)
    }
    fn zero_like(dim: usize) -> Self {
        RealMatrix::zero(dim)
    }
    fn mul_point(&self, other: &Self) -> Self {
        self.mul(other)
    }
    fn add_point(&self, other: &Self) -> Self {
        self.add(other)
    }
    fn sub_point(&self, other: &Self) -> Self {
        self.sub(other)
    }
}

impl MatrixPoint for RatMatrix {
    fn dim(&self) -> usize {
        self.dim
    }
    fn identity_like(dim: usize) -> Self {
        RatMatrix::identity(dim)
    }
    fn zero_like(dim: usize) -> Self {
        RatMatrix::zero(dim)
    }
    fn mul_point(&self, other: &Self) -> Self {
        self.mul(other)
    }
    fn add_point(&self, other: &Self) -> Self {
        self.add(other)
    }
    fn sub_point(&self, other: &Self) -> Self {
        self.sub(other)
    }
}

/// Sign-aware conversion of a big integer to `u128` modulo `2^128`.
pub(crate) fn bigint_mod_2_128(x: &BigInt) -> u128 {
    let (sign, digits) = x.to_u64_digits();
    let lo = digits.first().copied().unwrap_or(0) as u128
        | (digits.get(1).copied().unwrap_or(0) as u128) << 64;
    match sign {
        Sign::Minus => lo.wrapping_neg(),
        _ => lo,
    }
}
