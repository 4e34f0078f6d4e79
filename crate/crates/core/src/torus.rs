//! Points of `T^d = R^d / Z^d`, the induced walk `x ↦ g x mod Z^d`, and
//! Fourier coefficients of its law.
//!
//! A point is either exact (`num / den` with one common denominator) or a
//! 128-bit fixed-point fraction. Fixed-point stepping is exact arithmetic
//! modulo `2^128`, so the only error is the rounding of the starting point;
//! each walk carries a bound on how far that error has been stretched.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_bigint::{BigInt, BigUint};
use num_complex::Complex64;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{bigint_mod_2_128, IntMatrix};
use crate::mc::{par_collect, stream_rng};
use crate::measure::FiniteMeasure;

const TWO_POW_128: f64 = 340_282_366_920_938_463_463_374_607_431_768_211_456.0;
const DOMAIN_WALK: u64 = 0x5741_4c4b;

/// A point of `T^d`, always in the canonical representative `[0, 1)^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TorusPoint {
    /// Coordinates `num_i / den` with `0 ≤ num_i < den` and the fraction reduced.
    Exact { num: Vec<BigInt>, den: BigInt },
    /// Coordinates `x_i / 2^128`.
    Fixed(Vec<u128>),
}

impl TorusPoint {
    /// Exact point from a common denominator; numerators are reduced mod `den`.
    pub fn exact(num: Vec<BigInt>, den: BigInt) -> Result<Self> {
        if !den.is_positive() {
            return Err(Error::InvalidArgument("denominator must be positive".into()));
        }
        if num.is_empty() {
            return Err(Error::InvalidArgument("point has no coordinates".into()));
        }
        let mut num: Vec<BigInt> = num.into_iter().map(|x| x.mod_floor(&den)).collect();
        let g = num.iter().fold(den.clone(), |g, x| g.gcd(x));
        let den = if g.is_one() {
            den
        } else {
            for x in num.iter_mut() {
                *x = &*x / &g;
            }
            den / g
        };
        Ok(TorusPoint::Exact { num, den })
    }

    /// Exact point from per-coordinate fractions `p/q`.
    pub fn from_ratios(ratios: &[(i64, i64)]) -> Result<Self> {
        if ratios.iter().any(|&(_, q)| q <= 0) {
            return Err(Error::InvalidArgument("denominators must be positive".into()));
        }
        let den = ratios.iter().fold(BigInt::one(), |l, &(_, q)| l.lcm(&BigInt::from(q)));
        let num = ratios
            .iter()
            .map(|&(p, q)| BigInt::from(p) * (&den / BigInt::from(q)))
            .collect();
        Self::exact(num, den)
    }

    pub fn zero(d: usize) -> Self {
        TorusPoint::Exact { num: vec![BigInt::zero(); d], den: BigInt::one() }
    }

    /// Fixed-point point with coordinates `x_i mod 1` rounded to the 2^-128 grid.
    pub fn from_f64(coords: &[f64]) -> Result<Self> {
        if coords.is_empty() || coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("coordinates must be finite".into()));
        }
        Ok(TorusPoint::Fixed(
            coords
                .iter()
                .map(|&x| ((x - x.floor()) * TWO_POW_128) as u128)
                .collect(),
        ))
    }

    /// Haar-random point (independent uniform 128-bit coordinates).
    pub fn haar<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        TorusPoint::Fixed((0..d).map(|_| rng.random::<u128>()).collect())
    }

    pub fn dim(&self) -> usize {
        match self {
            TorusPoint::Exact { num, .. } => num.len(),
            TorusPoint::Fixed(x) => x.len(),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, TorusPoint::Exact { .. })
    }

    /// Denominator of an exact point.
    pub fn denominator(&self) -> Option<&BigInt> {
        match self {
            TorusPoint::Exact { den, .. } => Some(den),
            TorusPoint::Fixed(_) => None,
        }
    }

    pub fn coord_f64(&self, i: usize) -> f64 {
        match self {
            TorusPoint::Exact { num, den } => {
                BigRational::new(num[i].clone(), den.clone()).to_f64().unwrap_or(0.0)
            }
            TorusPoint::Fixed(x) => x[i] as f64 / TWO_POW_128,
        }
    }

    pub fn coords_f64(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.coord_f64(i)).collect()
    }

    /// Coordinate `i` as an exact rational.
    pub fn coord_rational(&self, i: usize) -> BigRational {
        match self {
            TorusPoint::Exact { num, den } => BigRational::new(num[i].clone(), den.clone()),
            TorusPoint::Fixed(x) => {
                BigRational::new(BigInt::from(x[i]), BigInt::one() << 128usize)
            }
        }
    }

    /// Fixed-point image; exact whenever the denominator divides `2^128`.
    pub fn to_fixed(&self) -> (Vec<u128>, bool) {
        match self {
            TorusPoint::Fixed(x) => (x.clone(), true),
            TorusPoint::Exact { num, den } => {
                let mut exact = true;
                let xs = num
                    .iter()
                    .map(|n| {
                        let (q, r) = (n << 128usize).div_rem(den);
                        if !r.is_zero() {
                            exact = false;
                        }
                        q.to_u128().expect("numerator below denominator")
                    })
                    .collect();
                (xs, exact)
            }
        }
    }

    /// Parses `"0"`, `"golden"`, `"sqrt2"`, `"p/q,p/q,…"` (exact) or decimals (fixed).
    pub fn parse(s: &str, d: usize) -> Result<Self> {
        let s = s.trim();
        let point = match s {
            "0" | "zero" => TorusPoint::zero(d),
            "golden" => TorusPoint::Fixed(vec![golden_fixed(); d]),
            "sqrt2" => TorusPoint::Fixed(vec![sqrt2_fixed(); d]),
            "golden-sqrt2" => {
                let mut v = vec![sqrt2_fixed(); d];
                v[0] = golden_fixed();
                TorusPoint::Fixed(v)
            }
            _ => {
                let parts: Vec<&str> = s.split(',').map(str::trim).collect();
                if parts.iter().all(|p| p.contains('/') || p.parse::<i64>().is_ok()) {
                    let mut ratios = Vec::with_capacity(parts.len());
                    for p in &parts {
                        let (a, b) = p.split_once('/').unwrap_or((p, "1"));
                        let a: i64 = a.trim().parse().map_err(|_| bad_point(s))?;
                        let b: i64 = b.trim().parse().map_err(|_| bad_point(s))?;
                        ratios.push((a, b));
                    }
                    TorusPoint::from_ratios(&ratios)?
                } else {
                    let xs: Vec<f64> = parts
                        .iter()
                        .map(|p| p.parse::<f64>().map_err(|_| bad_point(s)))
                        .collect::<Result<_>>()?;
                    TorusPoint::from_f64(&xs)?
                }
            }
        };
        if point.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: point.dim() });
        }
        Ok(point)
    }
}

fn bad_point(s: &str) -> Error {
    Error::Parse(format!("bad torus point '{s}'"))
}

/// `floor(√n · 2^k)` via integer square root.
fn isqrt_scaled(n: u64, k: usize) -> BigUint {
    (BigUint::from(n) << (2 * k)).sqrt()
}

/// `φ − 1 = (√5 − 1)/2` to 128 bits.
pub fn golden_fixed() -> u128 {
    let s = isqrt_scaled(5, 127) - (BigUint::one() << 127usize);
    s.to_u128().expect("fits")
}

/// `√2 − 1` to 128 bits.
pub fn sqrt2_fixed() -> u128 {
    let s = isqrt_scaled(2, 128) - (BigUint::one() << 128usize);
    s.to_u128().expect("fits")
}

/// One step `x ↦ g x mod Z^d`.
pub fn step(g: &IntMatrix, x: &TorusPoint) -> Result<TorusPoint> {
    let d = g.dim();
    if x.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: x.dim() });
    }
    match x {
        TorusPoint::Exact { num, den } => {
            let out = (0..d)
                .map(|i| (0..d).map(|j| g.entry(i, j) * &num[j]).sum::<BigInt>().mod_floor(den))
                .collect();
            Ok(TorusPoint::Exact { num: out, den: den.clone() })
        }
        TorusPoint::Fixed(xs) => {
            let gm: Vec<u128> = g.entries().iter().map(bigint_mod_2_128).collect();
            Ok(TorusPoint::Fixed(fixed_apply(&gm, xs)))
        }
    }
}

fn fixed_apply(g: &[u128], x: &[u128]) -> Vec<u128> {
    let d = x.len();
    (0..d)
        .map(|i| {
            (0..d).fold(0u128, |acc, j| acc.wrapping_add(g[i * d + j].wrapping_mul(x[j])))
        })
        .collect()
}

/// `e(θ) = exp(2πiθ)` for `θ = s / 2^128`, `s` read as a signed residue.
fn phase_fixed(s: u128) -> Complex64 {
    if s == 1u128 << 127 {
        return Complex64::new(-1.0, 0.0);
    }
    let theta = (s as i128) as f64 / TWO_POW_128;
    let (sin, cos) = (TAU * theta).sin_cos();
    Complex64::new(cos, sin)
}

/// `e(r / q)` for a residue `r mod q`, using the signed representative.
pub(crate) fn phase_rational(r: &BigInt, q: &BigInt) -> Complex64 {
    let r = r.mod_floor(q);
    let twice = &r * 2u32;
    if &twice == q {
        return Complex64::new(-1.0, 0.0);
    }
    let signed = if &twice > q { r - q } else { r };
    let theta = match (signed.to_i64(), q.to_i64()) {
        (Some(a), Some(b)) if b < (1 << 53) => a as f64 / b as f64,
        _ => BigRational::new(signed, q.clone()).to_f64().unwrap_or(0.0),
    };
    let (sin, cos) = (TAU * theta).sin_cos();
    Complex64::new(cos, sin)
}

/// `e(⟨a, x⟩)`.
pub fn character(a: &[i64], x: &TorusPoint) -> Complex64 {
    match x {
        TorusPoint::Fixed(xs) => {
            let s = a
                .iter()
                .zip(xs)
                .fold(0u128, |acc, (&ai, &xi)| acc.wrapping_add((ai as i128 as u128).wrapping_mul(xi)));
            phase_fixed(s)
        }
        TorusPoint::Exact { num, den } => {
            let s: BigInt = a.iter().zip(num).map(|(&ai, xi)| BigInt::from(ai) * xi).sum();
            phase_rational(&s, den)
        }
    }
}

/// Row action `a ↦ a g` on frequencies (so that `⟨a, gx⟩ = ⟨ag, x⟩`).
pub fn row_action(a: &[BigInt], g: &IntMatrix) -> Vec<BigInt> {
    let d = g.dim();
    (0..d).map(|j| (0..d).map(|i| &a[i] * g.entry(i, j)).sum()).collect()
}

/// Residue `⟨a, x⟩ mod 1` as an exact rational in `[0, 1)`.
pub fn pairing_residue(a: &[BigInt], x: &TorusPoint) -> BigRational {
    let s: BigRational = a
        .iter()
        .enumerate()
        .map(|(i, ai)| BigRational::from_integer(ai.clone()) * x.coord_rational(i))
        .sum();
    &s - s.floor()
}

enum Kernel {
    Fixed(Vec<Vec<u128>>),
    Small { den: u64, mats: Vec<Vec<u64>> },
    Big { mats: Vec<IntMatrix> },
}

/// A prepared walk: step matrices in the arithmetic matching the start point.
pub struct Walker {
    d: usize,
    sampler: crate::measure::StepSampler<IntMatrix>,
    kernel: Kernel,
    row_norms: Vec<f64>,
    start: TorusPoint,
    start_error: f64,
}

impl Walker {
    pub fn new(mu: &FiniteMeasure<IntMatrix>, x0: &TorusPoint) -> Result<Self> {
        let d = mu.dim();
        if x0.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: x0.dim() });
        }
        let sampler = mu.sampler()?;
        let pts = sampler.points().to_vec();
        let row_norms = pts.iter().map(|g| g.max_row_abs_sum()).collect();
        let kernel = match x0 {
            TorusPoint::Fixed(_) => Kernel::Fixed(
                pts.iter().map(|g| g.entries().iter().map(bigint_mod_2_128).collect()).collect(),
            ),
            TorusPoint::Exact { den, .. } => match den.to_u64() {
                Some(q) => Kernel::Small {
                    den: q,
                    mats: pts
                        .iter()
                        .map(|g| {
                            g.entries()
                                .iter()
                                .map(|e| e.mod_floor(den).to_u64().expect("reduced"))
                                .collect()
                        })
                        .collect(),
                },
                None => Kernel::Big { mats: pts },
            },
        };
        Ok(Walker { d, sampler, kernel, row_norms, start: x0.clone(), start_error: 0.0 })
    }

    /// Walk in fixed point from an exact start (rounded once to 2^-128).
    pub fn new_fixed(mu: &FiniteMeasure<IntMatrix>, x0: &TorusPoint) -> Result<Self> {
        let (xs, exact) = x0.to_fixed();
        let mut w = Walker::new(mu, &TorusPoint::Fixed(xs))?;
        w.start_error = if exact { 0.0 } else { 1.0 / TWO_POW_128 };
        Ok(w)
    }

    /// `x_n = g_n ⋯ g_1 x_0` and the sup-norm error bound of the fixed-point
    /// representation (0 for exact points).
    pub fn run<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (TorusPoint, f64) {
        let d = self.d;
        let mut err = self.start_error;
        match (&self.kernel, &self.start) {
            (Kernel::Fixed(mats), TorusPoint::Fixed(x0)) => {
                let mut x = x0.clone();
                for _ in 0..n {
                    let k = self.sampler.draw_index(rng);
                    x = fixed_apply(&mats[k], &x);
                    err *= self.row_norms[k];
                }
                (TorusPoint::Fixed(x), err)
            }
            (Kernel::Small { den, mats }, TorusPoint::Exact { num, den: bden }) => {
                let q = *den as u128;
                let mut x: Vec<u128> = num.iter().map(|v| v.to_u64().expect("reduced") as u128).collect();
                let mut y = vec![0u128; d];
                for _ in 0..n {
                    let m = &mats[self.sampler.draw_index(rng)];
                    for i in 0..d {
                        let mut acc = 0u128;
                        for j in 0..d {
                            acc = (acc + (m[i * d + j] as u128 * x[j]) % q) % q;
                        }
                        y[i] = acc;
                    }
                    std::mem::swap(&mut x, &mut y);
                }
                let num = x.into_iter().map(BigInt::from).collect();
                (TorusPoint::Exact { num, den: bden.clone() }, 0.0)
            }
            (Kernel::Big { mats }, start) => {
                let mut x = start.clone();
                for _ in 0..n {
                    x = step(&mats[self.sampler.draw_index(rng)], &x).expect("dims checked");
                }
                (x, 0.0)
            }
            _ => unreachable!("kernel always matches the start point"),
        }
    }
}

/// Endpoints of independent walks, one seeded stream per walk.
#[derive(Clone, Debug)]
pub struct WalkSamples {
    pub n: usize,
    pub points: Vec<TorusPoint>,
    /// Largest fixed-point error bound over the walks.
    pub max_error: f64,
}

pub fn walk_samples(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    x0: &TorusPoint,
    samples: usize,
    seed: u64,
) -> Result<WalkSamples> {
    let walker = Walker::new(mu, x0)?;
    Ok(collect_walks(&walker, n, samples, seed))
}

pub(crate) fn collect_walks(walker: &Walker, n: usize, samples: usize, seed: u64) -> WalkSamples {
    let out = par_collect(samples, |i| {
        let mut rng = stream_rng(seed, DOMAIN_WALK, i as u64);
        walker.run(n, &mut rng)
    });
    let max_error = out.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    WalkSamples { n, points: out.into_iter().map(|(p, _)| p).collect(), max_error }
}

/// Monte Carlo estimate of `ν̂(a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierEstimate {
    pub a: Vec<i64>,
    pub value: Complex64,
    pub stderr: f64,
    pub samples: usize,
}

impl FourierEstimate {
    pub fn abs(&self) -> f64 {
        self.value.norm()
    }
}

/// `ν̂(a)` for the empirical measure of `points`, summed in sample order.
pub fn fourier_from_samples(points: &[TorusPoint], a: &[i64]) -> FourierEstimate {
    let n = points.len();
    if a.iter().all(|&x| x == 0) {
        return FourierEstimate { a: a.to_vec(), value: Complex64::new(1.0, 0.0), stderr: 0.0, samples: n };
    }
    let phases: Vec<Complex64> = points.iter().map(|x| character(a, x)).collect();
    let sum = phases.iter().fold(Complex64::new(0.0, 0.0), |s, z| s + z);
    let mean = sum / n as f64;
    let stderr = if n > 1 {
        let var = phases.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    FourierEstimate { a: a.to_vec(), value: mean, stderr, samples: n }
}

/// Monte Carlo `ν̂_n(a)` for `ν_n = μ^{*n} * δ_{x0}`.
pub fn empirical_fourier(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    x0: &TorusPoint,
    a: &[i64],
    samples: usize,
    seed: u64,
) -> Result<FourierEstimate> {
    if samples < 100 {
        return Err(Error::InvalidArgument("at least 100 samples are required".into()));
    }
    if a.len() != x0.dim() {
        return Err(Error::DimensionMismatch { expected: x0.dim(), found: a.len() });
    }
    if a.iter().all(|&v| v == 0) || n == 0 {
        return Ok(FourierEstimate {
            a: a.to_vec(),
            value: if n == 0 { character(a, x0) } else { Complex64::new(1.0, 0.0) },
            stderr: 0.0,
            samples,
        });
    }
    let w = walk_samples(mu, n, x0, samples, seed)?;
    Ok(fourier_from_samples(&w.points, a))
}

/// Exact law of `x_n` for a rational start, as a map from numerators to mass.
pub fn exact_orbit_law(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    x0: &TorusPoint,
    state_cap: u128,
) -> Result<(BTreeMap<Vec<u64>, BigRational>, BigInt)> {
    let (num, den) = match x0 {
        TorusPoint::Exact { num, den } => (num, den),
        TorusPoint::Fixed(_) => {
            return Err(Error::InvalidArgument("exact chain needs a rational start".into()))
        }
    };
    let d = x0.dim();
    if d != mu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), found: d });
    }
    let states = den
        .to_u128()
        .and_then(|q| (0..d).try_fold(1u128, |acc, _| acc.checked_mul(q)))
        .unwrap_or(u128::MAX);
    if states > state_cap {
        return Err(Error::StateSpaceTooLarge { states, cap: state_cap });
    }
    let q = den.to_u64().expect("bounded by the cap") as u128;
    let mats: Vec<(Vec<u128>, BigRational)> = mu
        .atoms()
        .map(|(g, w)| {
            (
                g.entries().iter().map(|e| e.mod_floor(den).to_u128().expect("reduced")).collect(),
                w.clone(),
            )
        })
        .collect();
    let mut law: BTreeMap<Vec<u64>, BigRational> = BTreeMap::new();
    law.insert(num.iter().map(|v| v.to_u64().expect("reduced")).collect(), BigRational::one());
    for _ in 0..n {
        let mut next: BTreeMap<Vec<u64>, BigRational> = BTreeMap::new();
        for (x, wx) in &law {
            for (m, wg) in &mats {
                let y: Vec<u64> = (0..d)
                    .map(|i| {
                        (0..d).fold(0u128, |acc, j| (acc + m[i * d + j] * x[j] as u128 % q) % q) as u64
                    })
                    .collect();
                *next.entry(y).or_insert_with(BigRational::zero) += wx * wg;
            }
        }
        law = next;
    }
    Ok((law, den.clone()))
}

/// `ν̂_n(a)` by propagating the exact distribution on `(1/q Z^d)/Z^d`.
/// Masses are grouped by the exact residue of `⟨a, x⟩` before rounding.
pub fn fourier_exact_rational(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    x0: &TorusPoint,
    a: &[i64],
    state_cap: u128,
) -> Result<Complex64> {
    let (law, den) = exact_orbit_law(mu, n, x0, state_cap)?;
    let mut by_residue: BTreeMap<BigInt, BigRational> = BTreeMap::new();
    for (x, w) in &law {
        let r: BigInt = a.iter().zip(x).map(|(&ai, &xi)| BigInt::from(ai) * xi).sum();
        *by_residue.entry(r.mod_floor(&den)).or_insert_with(BigRational::zero) += w;
    }
    Ok(by_residue.iter().fold(Complex64::new(0.0, 0.0), |acc, (r, w)| {
        acc + phase_rational(r, &den) * w.to_f64().unwrap_or(0.0)
    }))
}

/// Frequencies in the sup-norm ball of radius `radius`, in lexicographic order.
pub fn frequency_ball(d: usize, radius: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|v| (-radius..=radius).map(move |c| {
                let mut w = v.clone();
                w.push(c);
                w
            }))
            .collect();
    }
    out
}

/// The set `A(t) ∩ B(0, N)` of large coefficients.
#[derive(Clone, Debug)]
pub struct CoefficientSet {
    pub threshold: f64,
    pub radius: i64,
    pub members: Vec<FourierEstimate>,
    pub scanned: usize,
    pub max_error: f64,
}

impl CoefficientSet {
    /// CSV with columns `a_1..a_d, re, im, abs, stderr, samples`.
    pub fn to_csv(&self, d: usize) -> String {
        let mut s = (1..=d).map(|i| format!("a_{i}")).collect::<Vec<_>>().join(",");
        s.push_str(",re,im,abs,stderr,samples\n");
        for e in &self.members {
            let a = e.a.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            s.push_str(&format!(
                "{a},{:.12e},{:.12e},{:.12e},{:.6e},{}\n",
                e.value.re,
                e.value.im,
                e.abs(),
                e.stderr,
                e.samples
            ));
        }
        s
    }
}

/// Scans all `a` with `‖a‖_∞ ≤ radius`, reusing one trajectory set for every
/// frequency. Fails before sampling if `(2N+1)^d · samples > budget`.
pub fn large_coefficient_scan(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    x0: &TorusPoint,
    t: f64,
    radius: i64,
    samples: usize,
    seed: u64,
    budget: u128,
) -> Result<CoefficientSet> {
    let d = x0.dim();
    let count = (2 * radius as u128 + 1).pow(d as u32);
    let required = count.saturating_mul(samples as u128);
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let w = walk_samples(mu, n, x0, samples, seed)?;
    let freqs = frequency_ball(d, radius);
    let estimates = par_collect(freqs.len(), |i| fourier_from_samples(&w.points, &freqs[i]));
    let members = estimates
        .into_iter()
        .filter(|e| e.abs() >= t - 3.0 * e.stderr)
        .collect();
    Ok(CoefficientSet { threshold: t, radius, members, scanned: freqs.len(), max_error: w.max_error })
}

/// Sup-metric distance on `T^d`.
pub fn torus_distance(x: &TorusPoint, y: &TorusPoint) -> f64 {
    match (x, y) {
        (TorusPoint::Fixed(a), TorusPoint::Fixed(b)) => a
            .iter()
            .zip(b)
            .map(|(&p, &q)| {
                let diff = p.wrapping_sub(q);
                diff.min(diff.wrapping_neg()) as f64 / TWO_POW_128
            })
            .fold(0.0, f64::max),
        _ => (0..x.dim())
            .map(|i| {
                let diff = x.coord_rational(i) - y.coord_rational(i);
                let frac = &diff - diff.floor();
                let one = BigRational::one();
                let m = if frac.clone() * BigRational::from_integer(2.into()) > one {
                    one - frac
                } else {
                    frac
                };
                m.to_f64().unwrap_or(0.0)
            })
            .fold(0.0, f64::max),
    }
}

/// Greedy maximal `r`-separated subset, in input order.
pub fn separated_subset(points: &[TorusPoint], r: f64) -> Vec<TorusPoint> {
    let mut kept: Vec<TorusPoint> = Vec::new();
    for p in points {
        if kept.iter().all(|k| torus_distance(k, p) >= r) {
            kept.push(p.clone());
        }
    }
    kept
}

/// Fraction of samples within `radius` of some center.
pub fn concentration_mass(samples: &[TorusPoint], centers: &[TorusPoint], radius: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = samples
        .iter()
        .filter(|s| centers.iter().any(|c| torus_distance(s, c) <= radius))
        .count();
    hits as f64 / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::stream_rng;

    fn m(rows: &[&[i64]]) -> IntMatrix {
        IntMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn sl2() -> FiniteMeasure<IntMatrix> {
        FiniteMeasure::uniform(vec![m(&[&[1, 1], &[0, 1]]), m(&[&[1, 0], &[1, 1]])]).unwrap()
    }

    #[test]
    fn exact_step_examples() {
        let x = TorusPoint::from_ratios(&[(1, 5), (2, 5)]).unwrap();
        assert_eq!(step(&IntMatrix::identity(2), &x).unwrap(), x);
        let y = step(&m(&[&[1, 1], &[0, 1]]), &x).unwrap();
        assert_eq!(y, TorusPoint::from_ratios(&[(3, 5), (2, 5)]).unwrap());
    }

    #[test]
    fn canonical_form() {
        let x = TorusPoint::from_ratios(&[(-1, 2), (3, 4)]).unwrap();
        assert_eq!(x, TorusPoint::from_ratios(&[(2, 4), (7, 4)]).unwrap());
        assert_eq!(x.denominator().unwrap(), &BigInt::from(4));
        assert_eq!(TorusPoint::parse("1/5, 2/5", 2).unwrap(), TorusPoint::from_ratios(&[(1, 5), (2, 5)]).unwrap());
        assert!(TorusPoint::parse("1/5", 2).is_err());
    }

    #[test]
    fn high_precision_constants() {
        let g = golden_fixed() as f64 / TWO_POW_128;
        assert!((g - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
        let s = sqrt2_fixed() as f64 / TWO_POW_128;
        assert!((s - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        // x² + x = 1 for x = φ − 1: check to ~2^-120 with exact integers
        let x = BigInt::from(golden_fixed());
        let lhs: BigInt = &x * &x + (&x << 128usize);
        let one: BigInt = BigInt::one() << 256usize;
        assert!((lhs - one).abs() < (BigInt::one() << 130usize));
    }

    #[test]
    fn unipotent_fixed_walk_tracks_exact_shadow() {
        let u = FiniteMeasure::uniform(vec![m(&[&[1, 1], &[0, 1]]), m(&[&[1, -1], &[0, 1]])]).unwrap();
        let x0 = TorusPoint::from_ratios(&[(1, 7), (3, 11)]).unwrap();
        let exact = Walker::new(&u, &x0).unwrap();
        let fixed = Walker::new_fixed(&u, &x0).unwrap();
        for i in 0..20 {
            let (xe, _) = exact.run(1000, &mut stream_rng(1, 2, i));
            let (xf, err) = fixed.run(1000, &mut stream_rng(1, 2, i));
            let dist = torus_distance(&xe, &xf);
            assert!(dist <= 1001.0 / TWO_POW_128 + 1e-300);
            assert!(dist <= 2f64.powi(-80));
            assert!(dist <= err);
        }
    }

    #[test]
    fn dyadic_start_is_bitwise_exact_under_random_walk() {
        let mu = sl2();
        let x0 = TorusPoint::from_ratios(&[(3, 1 << 20), (5, 1 << 30)]).unwrap();
        let exact = Walker::new(&mu, &x0).unwrap();
        let fixed = Walker::new_fixed(&mu, &x0).unwrap();
        for i in 0..20 {
            let (xe, _) = exact.run(1000, &mut stream_rng(3, 2, i));
            let (xf, err) = fixed.run(1000, &mut stream_rng(3, 2, i));
            assert_eq!(err, 0.0);
            assert_eq!(xe.to_fixed().0, xf.to_fixed().0);
        }
    }

    #[test]
    fn fast_walker_matches_generic_step() {
        let mu = sl2();
        let s = mu.sampler().unwrap();
        for x0 in [
            TorusPoint::from_ratios(&[(1, 3), (0, 1)]).unwrap(),
            TorusPoint::Fixed(vec![golden_fixed(), sqrt2_fixed()]),
            TorusPoint::exact(vec![BigInt::from(7), BigInt::from(11)], BigInt::from(u64::MAX) * 5).unwrap(),
        ] {
            let w = Walker::new(&mu, &x0).unwrap();
            let (fast, _) = w.run(50, &mut stream_rng(4, 0, 0));
            let mut rng = stream_rng(4, 0, 0);
            let mut x = x0.clone();
            for _ in 0..50 {
                x = step(s.draw(&mut rng), &x).unwrap();
            }
            assert_eq!(fast, x);
        }
    }

    #[test]
    fn fourier_trivial_cases() {
        let mu = sl2();
        let zero = TorusPoint::zero(2);
        let e = empirical_fourier(&mu, 10, &zero, &[3, -2], 200, 1).unwrap();
        assert_eq!(e.value, Complex64::new(1.0, 0.0));
        let x = TorusPoint::from_ratios(&[(1, 5), (2, 5)]).unwrap();
        let e = empirical_fourier(&mu, 7, &x, &[0, 0], 200, 1).unwrap();
        assert_eq!(e.value, Complex64::new(1.0, 0.0));
        let e = empirical_fourier(&mu, 0, &x, &[1, 0], 200, 1).unwrap();
        assert_eq!(e.value, character(&[1, 0], &x));
        assert!(empirical_fourier(&mu, 3, &x, &[1, 0], 99, 1).is_err());
    }

    #[test]
    fn exact_chain_examples() {
        let mu = sl2();
        let x = TorusPoint::from_ratios(&[(1, 5), (2, 5)]).unwrap();
        for n in 0..6 {
            let v = fourier_exact_rational(&mu, n, &x, &[5, 0], 1000).unwrap();
            assert_eq!(v, Complex64::new(1.0, 0.0));
        }
        let v = fourier_exact_rational(&mu, 4, &TorusPoint::zero(2), &[1, 2], 10).unwrap();
        assert_eq!(v, Complex64::new(1.0, 0.0));
        let big = TorusPoint::from_ratios(&[(1, 1_000_003), (0, 1)]).unwrap();
        assert!(matches!(
            fourier_exact_rational(&mu, 4, &big, &[1, 0], 1_000_000),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    /// Brute force over the 2^4 words, independent of the chain code.
    fn brute_force_third(n: usize) -> Complex64 {
        let gens = [m(&[&[1, 1], &[0, 1]]), m(&[&[1, 0], &[1, 1]])];
        let mut total = Complex64::new(0.0, 0.0);
        for w in 0..(1usize << n) {
            let mut x = (1i64, 0i64);
            for k in 0..n {
                let g = &gens[(w >> k) & 1];
                let e = |i, j| g.entry(i, j).to_i64().unwrap();
                x = ((e(0, 0) * x.0 + e(0, 1) * x.1).rem_euclid(3), (e(1, 0) * x.0 + e(1, 1) * x.1).rem_euclid(3));
            }
            let theta = x.0 as f64 / 3.0;
            total += Complex64::new((TAU * theta).cos(), (TAU * theta).sin());
        }
        total / (1usize << n) as f64
    }

    #[test]
    fn nine_state_chain_matches_brute_force_and_monte_carlo() {
        let mu = sl2();
        let x = TorusPoint::from_ratios(&[(1, 3), (0, 1)]).unwrap();
        let exact = fourier_exact_rational(&mu, 4, &x, &[1, 0], 100).unwrap();
        assert!((exact - brute_force_third(4)).norm() < 1e-12);
        let mc = empirical_fourier(&mu, 4, &x, &[1, 0], 100_000, 9).unwrap();
        assert!((mc.value - exact).norm() <= 4.0 * mc.stderr.max(1e-12));
    }

    #[test]
    fn conjugate_symmetry_is_exact() {
        let mu = sl2();
        let x0 = TorusPoint::Fixed(vec![golden_fixed(), sqrt2_fixed()]);
        let w = walk_samples(&mu, 20, &x0, 500, 3).unwrap();
        for a in [[1i64, 0], [2, -3], [7, 5]] {
            let p = fourier_from_samples(&w.points, &a);
            let q = fourier_from_samples(&w.points, &[-a[0], -a[1]]);
            assert_eq!(q.value, p.value.conj());
        }
        let xr = TorusPoint::from_ratios(&[(1, 4), (1, 2)]).unwrap();
        let w = walk_samples(&mu, 5, &xr, 300, 3).unwrap();
        let p = fourier_from_samples(&w.points, &[1, 1]);
        let q = fourier_from_samples(&w.points, &[-1, -1]);
        assert_eq!(q.value, p.value.conj());
    }

    #[test]
    fn pairing_transposition_per_sample() {
        let mu = sl2();
        let x0 = TorusPoint::from_ratios(&[(2, 7), (3, 13)]).unwrap();
        let a = vec![BigInt::from(3), BigInt::from(-5)];
        for i in 0..50 {
            let g = mu.sample_product(15, &mut stream_rng(5, 0, i)).unwrap();
            let gx = step(&g, &x0).unwrap();
            assert_eq!(pairing_residue(&a, &gx), pairing_residue(&row_action(&a, &g), &x0));
        }
    }

    #[test]
    fn scan_examples() {
        let mu = sl2();
        let s = large_coefficient_scan(&mu, 5, &TorusPoint::zero(2), 0.5, 2, 100, 1, 1 << 20).unwrap();
        assert_eq!(s.members.len(), 25);
        let x = TorusPoint::from_ratios(&[(1, 3), (2, 3)]).unwrap();
        let s = large_coefficient_scan(&mu, 8, &x, 0.9, 3, 400, 1, 1 << 20).unwrap();
        for e in &s.members {
            assert!(e.a.iter().all(|v| v % 3 == 0), "{:?}", e.a);
        }
        assert_eq!(s.members.len(), 9);
        let err = large_coefficient_scan(&mu, 5, &x, 0.5, 10, 1000, 1, 1000).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
        let csv = s.to_csv(2);
        assert!(csv.starts_with("a_1,a_2,re,im,abs,stderr,samples\n"));
    }

    #[test]
    fn separated_subset_examples() {
        let p = TorusPoint::from_f64(&[0.1, 0.2]).unwrap();
        assert_eq!(separated_subset(&[p.clone()], 0.3), vec![p.clone()]);
        let q = TorusPoint::from_f64(&[0.15, 0.2]).unwrap();
        assert_eq!(separated_subset(&[p.clone(), q], 0.1), vec![p]);
        let mut rng = stream_rng(6, 0, 0);
        let pts: Vec<TorusPoint> = (0..100).map(|_| TorusPoint::haar(2, &mut rng)).collect();
        let out = separated_subset(&pts, 0.2);
        for (i, a) in out.iter().enumerate() {
            for b in &out[i + 1..] {
                assert!(torus_distance(a, b) >= 0.2);
            }
        }
        assert!(pts.iter().all(|p| out.iter().any(|c| torus_distance(p, c) < 0.2)));
    }

    #[test]
    fn concentration_examples() {
        let mut rng = stream_rng(7, 0, 0);
        let pts: Vec<TorusPoint> = (0..50).map(|_| TorusPoint::haar(2, &mut rng)).collect();
        assert_eq!(concentration_mass(&pts, &pts, 0.0), 1.0);
        assert_eq!(concentration_mass(&pts, &[], 0.1), 0.0);
        let grid: Vec<TorusPoint> = (0..100)
            .flat_map(|i| (0..100).map(move |j| TorusPoint::from_ratios(&[(i, 100), (j, 100)]).unwrap()))
            .collect();
        let c = TorusPoint::from_f64(&[0.503, 0.497]).unwrap();
        let mass = concentration_mass(&grid, &[c], 0.1);
        let p: f64 = 0.04;
        let sigma = (p * (1.0 - p) / grid.len() as f64).sqrt();
        assert!((mass - p).abs() <= 4.0 * sigma);
    }

    #[test]
    fn torus_distance_wraps() {
        let a = TorusPoint::from_f64(&[0.95, 0.5]).unwrap();
        let b = TorusPoint::from_f64(&[0.05, 0.5]).unwrap();
        assert!((torus_distance(&a, &b) - 0.1).abs() < 1e-12);
        let r = TorusPoint::from_ratios(&[(9, 10), (1, 2)]).unwrap();
        let s = TorusPoint::from_ratios(&[(1, 10), (1, 2)]).unwrap();
        assert!((torus_distance(&r, &s) - 0.2).abs() < 1e-15);
    }
}
