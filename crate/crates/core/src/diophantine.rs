//! Rational points `W_Q` of the torus, nearest rational approximations and
//! a per-instance check that a large coefficient `|ν̂_n(a)| ≥ t` forces `x0`
//! to lie within `e^{−λn}` of a rational point with denominator `≤ (‖a‖/t)^C`.

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::IntMatrix;
use crate::measure::FiniteMeasure;
use crate::torus::{empirical_fourier, fourier_exact_rational, torus_distance, FourierEstimate, TorusPoint};

/// Largest denominator bound the brute-force search accepts.
pub const Q_CAP: u64 = 1_000_000;
/// Exact chains are used while `q^d` stays below this.
pub const EXACT_STATE_CAP: u128 = 1 << 20;
const PARALLEL_Q: u64 = 4096;

/// Best approximation of a point by `(1/q Z^d)/Z^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalApprox {
    pub q: u64,
    pub xprime: TorusPoint,
    pub dist: f64,
    pub dist_exact: BigRational,
}

/// Per-`q` candidate: sup distance is `m / (q · unit)`; `p` are the roundings.
struct Candidate {
    q: u64,
    m: BigUint,
    p: Vec<BigInt>,
}

fn evaluate(x: &TorusPoint, q: u64) -> Candidate {
    match x {
        TorusPoint::Fixed(xs) => {
            let half = 1u128 << 127;
            let mut worst = 0u128;
            let mut p = Vec::with_capacity(xs.len());
            for &xi in xs {
                let f = xi.wrapping_mul(q as u128);
                let floor = (BigUint::from(xi) * q) >> 128usize;
                let (m, pi) = if f <= half {
                    (f, BigInt::from(floor))
                } else {
                    (f.wrapping_neg(), BigInt::from(floor) + 1)
                };
                worst = worst.max(m);
                p.push(pi);
            }
            Candidate { q, m: BigUint::from(worst), p }
        }
        TorusPoint::Exact { num, den } => {
            let mut worst = BigInt::zero();
            let mut p = Vec::with_capacity(num.len());
            for ni in num {
                let (floor, r) = (ni * q).div_mod_floor(den);
                let twice = &r * 2u32;
                let (m, pi) = if &twice <= den { (r, floor) } else { (den - r, floor + 1) };
                if m > worst {
                    worst = m.clone();
                }
                p.push(pi);
            }
            Candidate { q, m: worst.to_biguint().expect("non-negative"), p }
        }
    }
}

/// `a` strictly better than `b`: smaller distance, then smaller `q`.
fn better(a: &Candidate, b: &Candidate) -> bool {
    let lhs = &a.m * b.q;
    let rhs = &b.m * a.q;
    lhs < rhs || (lhs == rhs && a.q < b.q)
}

fn unit(x: &TorusPoint) -> BigInt {
    match x {
        TorusPoint::Fixed(_) => BigInt::one() << 128usize,
        TorusPoint::Exact { den, .. } => den.clone(),
    }
}

/// Nearest point of `W_Q` in the sup metric, by per-coordinate rounding for
/// every `q ≤ Q`. Ties go to the smaller `q`, then the smaller numerators.
pub fn nearest_rational(x: &TorusPoint, big_q: u64) -> Result<RationalApprox> {
    if big_q == 0 {
        return Err(Error::InvalidArgument("Q must be at least 1".into()));
    }
    let best = if big_q > PARALLEL_Q {
        (1..=big_q)
            .into_par_iter()
            .map(|q| evaluate(x, q))
            .reduce_with(|a, b| if better(&b, &a) { b } else { a })
            .expect("Q >= 1")
    } else {
        let mut best = evaluate(x, 1);
        for q in 2..=big_q {
            let c = evaluate(x, q);
            if better(&c, &best) {
                best = c;
            }
        }
        best
    };
    let q = BigInt::from(best.q);
    let dist_exact = BigRational::new(BigInt::from(best.m), &q * unit(x));
    let xprime = TorusPoint::exact(best.p.iter().map(|p| p.mod_floor(&q)).collect(), q)?;
    Ok(RationalApprox { q: best.q, xprime, dist: dist_exact.to_f64().unwrap_or(0.0), dist_exact })
}

/// Fraction of samples within `rho` of `W_Q`.
pub fn wq_mass(samples: &[TorusPoint], big_q: u64, rho: f64) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let r = BigRational::from_float(rho).ok_or_else(|| Error::InvalidArgument("rho must be finite".into()))?;
    let hits: Vec<bool> = samples
        .par_iter()
        .map(|x| nearest_rational(x, big_q).map(|a| a.dist_exact <= r))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / samples.len() as f64)
}

/// Outcome of the witness search for one `(x0, a, t, n)`.
#[derive(Clone, Debug)]
pub struct MainTheoremReport {
    pub n: usize,
    pub coefficient: FourierEstimate,
    pub exact_coefficient: bool,
    pub big_q: u64,
    pub q_capped: bool,
    pub target_dist: f64,
    pub witness: RationalApprox,
    pub found: bool,
    pub exponent_needed: f64,
}

impl MainTheoremReport {
    /// `{coefficient: {re, im, abs, stderr}, witness: {q, xprime, dist}, exponent_needed}`.
    pub fn to_json(&self) -> Value {
        let xprime = match &self.witness.xprime {
            TorusPoint::Exact { num, den } => num.iter().map(|p| format!("{p}/{den}")).collect::<Vec<_>>(),
            TorusPoint::Fixed(_) => unreachable!("approximations are exact"),
        };
        json!({
            "coefficient": {
                "re": self.coefficient.value.re,
                "im": self.coefficient.value.im,
                "abs": self.coefficient.abs(),
                "stderr": self.coefficient.stderr,
            },
            "witness": { "q": self.witness.q, "xprime": xprime, "dist": self.witness.dist },
            "exponent_needed": self.exponent_needed,
            "n": self.n,
            "Q": self.big_q,
            "Q_capped": self.q_capped,
            "target_dist": self.target_dist,
            "found": self.found,
            "exact_coefficient": self.exact_coefficient,
        })
    }
}

/// Parameters of [`verify_main_theorem`].
#[derive(Clone, Debug)]
pub struct MainTheoremParams {
    pub a: Vec<i64>,
    pub t: f64,
    pub n: usize,
    pub lambda: f64,
    pub c_window: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Estimates `|ν̂_n(a)|`; when it clears `t` by three standard errors,
/// searches `W_Q` with `Q = ⌈(‖a‖/t)^C⌉` for a point within `e^{−λn}` of `x0`.
pub fn verify_main_theorem(
    mu: &FiniteMeasure<IntMatrix>,
    x0: &TorusPoint,
    p: &MainTheoremParams,
) -> Result<MainTheoremReport> {
    if !(p.t > 0.0 && p.t < 0.5) {
        return Err(Error::InvalidArgument("t must lie in (0, 1/2)".into()));
    }
    if p.lambda <= 0.0 {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    let norm_a = p.a.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0) as f64;
    if norm_a == 0.0 {
        return Err(Error::InvalidArgument("a must be nonzero".into()));
    }
    let exact = match x0 {
        TorusPoint::Exact { .. } => fourier_exact_rational(mu, p.n, x0, &p.a, EXACT_STATE_CAP).ok(),
        TorusPoint::Fixed(_) => None,
    };
    let coefficient = match exact {
        Some(v) => FourierEstimate { a: p.a.clone(), value: v, stderr: 0.0, samples: 0 },
        None => empirical_fourier(mu, p.n, x0, &p.a, p.samples, p.seed)?,
    };
    let lower = coefficient.abs() - 3.0 * coefficient.stderr;
    if lower < p.t {
        return Err(Error::NotApplicable { coefficient: coefficient.abs(), threshold: p.t });
    }
    let ratio = norm_a / p.t;
    let raw_q = ratio.powf(p.c_window).ceil();
    let q_capped = !(raw_q <= Q_CAP as f64);
    let big_q = if q_capped { Q_CAP } else { (raw_q as u64).max(1) };
    let witness = nearest_rational(x0, big_q)?;
    let target_dist = (-p.lambda * p.n as f64).exp();
    let found = witness.dist <= target_dist;
    let exponent_needed = (witness.q as f64).ln() / ratio.ln();
    Ok(MainTheoremReport {
        n: p.n,
        coefficient,
        exact_coefficient: exact.is_some(),
        big_q,
        q_capped,
        target_dist,
        witness,
        found,
        exponent_needed,
    })
}

/// A heavy ball found by the screen.
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenCenter {
    pub center: TorusPoint,
    pub mass: f64,
    pub q: u64,
    pub dist: f64,
    pub in_w: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiophScreenReport {
    pub rho: f64,
    pub eta_fit: f64,
    pub n_used: usize,
    pub big_q: u64,
    pub w_radius: f64,
    pub max_mass: f64,
    pub passing: Vec<ScreenCenter>,
    pub counterexamples: usize,
    /// `(η, number of centers with mass ≥ ρ^η)` around `eta_fit`.
    pub eta_sensitivity: Vec<(f64, usize)>,
}

impl DiophScreenReport {
    pub fn to_json(&self) -> Value {
        json!({
            "rho": self.rho,
            "eta_fit": self.eta_fit,
            "n_used": self.n_used,
            "Q": self.big_q,
            "w_radius": self.w_radius,
            "max_mass": self.max_mass,
            "passing": self.passing.len(),
            "counterexamples": self.counterexamples,
            "eta_sensitivity": self.eta_sensitivity.iter().map(|(e, c)| json!({"eta": e, "centers": c})).collect::<Vec<_>>(),
        })
    }
}

/// Masses `ν(B(x, ρ))` for each center, using a hash of `ρ`-cells.
fn ball_masses(samples: &[TorusPoint], centers: &[TorusPoint], rho: f64) -> Vec<f64> {
    let n = samples.len() as f64;
    let cells_per_axis = (1.0 / rho).floor() as i64;
    if cells_per_axis < 3 {
        return centers
            .iter()
            .map(|c| samples.iter().filter(|s| torus_distance(s, c) <= rho).count() as f64 / n)
            .collect();
    }
    let k = cells_per_axis;
    let cell = |x: &TorusPoint| -> Vec<i64> {
        x.coords_f64().iter().map(|&c| ((c * k as f64).floor() as i64).rem_euclid(k)).collect()
    };
    let mut grid: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        grid.entry(cell(s)).or_default().push(i);
    }
    let d = samples.first().map(TorusPoint::dim).unwrap_or(0);
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(d as u32))
        .map(|mut code| {
            (0..d)
                .map(|_| {
                    let o = (code % 3) as i64 - 1;
                    code /= 3;
                    o
                })
                .collect()
        })
        .collect();
    centers
        .par_iter()
        .map(|c| {
            let base = cell(c);
            let mut count = 0usize;
            for off in &offsets {
                let key: Vec<i64> = base.iter().zip(off).map(|(b, o)| (b + o).rem_euclid(k)).collect();
                if let Some(ix) = grid.get(&key) {
                    count += ix.iter().filter(|&&i| torus_distance(&samples[i], c) <= rho).count();
                }
            }
            count as f64 / n
        })
        .collect()
}

/// Screens sample points `x` with `ν(B(x, ρ)) ≥ ρ^η` and checks each lies in
/// `W_{ρ^{-1/10}}` enlarged by `ρ^{9/10}`.
pub fn dioph_screen(samples: &[TorusPoint], rho: f64, n_used: usize, eta_fit: f64) -> Result<DiophScreenReport> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument("rho must lie in (0, 1)".into()));
    }
    let big_q = (rho.powf(-0.1).floor() as u64).max(1);
    let w_radius = rho.powf(0.9);
    let mut seen = std::collections::HashSet::new();
    let centers: Vec<TorusPoint> = samples.iter().filter(|x| seen.insert((*x).clone())).cloned().collect();
    let masses = ball_masses(samples, &centers, rho);
    let max_mass = masses.iter().copied().fold(0.0, f64::max);
    let threshold = rho.powf(eta_fit);
    let passing: Vec<ScreenCenter> = centers
        .iter()
        .zip(&masses)
        .filter(|(_, &m)| m >= threshold)
        .map(|(c, &mass)| {
            let approx = nearest_rational(c, big_q).expect("Q >= 1");
            ScreenCenter {
                center: c.clone(),
                mass,
                q: approx.q,
                dist: approx.dist,
                in_w: approx.dist <= w_radius,
            }
        })
        .collect();
    let counterexamples = passing.iter().filter(|c| !c.in_w).count();
    let eta_sensitivity = [0.5, 0.75, 1.0, 1.25, 1.5]
        .iter()
        .map(|f| {
            let eta = eta_fit * f;
            let thr = rho.powf(eta);
            (eta, masses.iter().filter(|&&m| m >= thr).count())
        })
        .collect();
    Ok(DiophScreenReport {
        rho,
        eta_fit,
        n_used,
        big_q,
        w_radius,
        max_mass,
        passing,
        counterexamples,
        eta_sensitivity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::stream_rng;
    use crate::torus::{golden_fixed, sqrt2_fixed, walk_samples};
    use num_complex::Complex64;
    use rand::Rng;

    fn m(rows: &[&[i64]]) -> IntMatrix {
        IntMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn sl2() -> FiniteMeasure<IntMatrix> {
        FiniteMeasure::uniform(vec![m(&[&[1, 1], &[0, 1]]), m(&[&[1, 0], &[1, 1]])]).unwrap()
    }

    /// Exhaustive oracle: every q ≤ Q and every integer vector p with
    /// |q x_i − p_i| ≤ q/2, in exact rationals.
    fn brute_force(x: &TorusPoint, big_q: u64) -> (u64, BigRational) {
        let d = x.dim();
        let mut best: Option<(u64, BigRational)> = None;
        for q in 1..=big_q {
            let qr = BigRational::from_integer(q.into());
            let mut worst = BigRational::zero();
            for i in 0..d {
                let qx = x.coord_rational(i) * &qr;
                let lo = qx.floor();
                let mut bestc: Option<BigRational> = None;
                for p in [lo.clone() - BigRational::one(), lo.clone(), lo.clone() + BigRational::one(), lo + BigRational::from_integer(2.into())] {
                    let diff = (&qx - &p).abs_sub_free();
                    if diff * BigRational::from_integer(2.into()) <= qr {
                        let dd = (&qx - &p).abs_sub_free() / &qr;
                        if bestc.as_ref().map_or(true, |b| &dd < b) {
                            bestc = Some(dd);
                        }
                    }
                }
                let c = bestc.unwrap();
                if c > worst {
                    worst = c;
                }
            }
            if best.as_ref().map_or(true, |(_, b)| &worst < b) {
                best = Some((q, worst));
            }
        }
        best.unwrap()
    }

    trait AbsFree {
        fn abs_sub_free(self) -> Self;
    }
    impl AbsFree for BigRational {
        fn abs_sub_free(self) -> Self {
            if self < BigRational::zero() { -self } else { self }
        }
    }

    #[test]
    fn exact_hit_and_q_one() {
        let x = TorusPoint::from_ratios(&[(1, 5), (2, 5)]).unwrap();
        let r = nearest_rational(&x, 5).unwrap();
        assert_eq!((r.q, r.dist), (5, 0.0));
        assert_eq!(r.xprime, x);
        let r = nearest_rational(&x, 12).unwrap();
        assert_eq!(r.q, 5);
        let y = TorusPoint::from_ratios(&[(3, 10), (7, 10)]).unwrap();
        let r = nearest_rational(&y, 1).unwrap();
        assert_eq!(r.xprime, TorusPoint::zero(2));
        assert!((r.dist - 0.3).abs() < 1e-15);
    }

    #[test]
    fn golden_sqrt2_brute_force() {
        let x = TorusPoint::Fixed(vec![golden_fixed(), sqrt2_fixed()]);
        let r = nearest_rational(&x, 10).unwrap();
        let (q, dist) = brute_force(&x, 10);
        assert_eq!(r.q, q);
        assert_eq!(r.dist_exact, dist);
    }

    #[test]
    fn optimality_on_seeded_points() {
        let mut rng = stream_rng(12, 0, 0);
        for i in 0..1000 {
            let d = 1 + i % 3;
            let big_q = rng.random_range(1..=20u64);
            let x = if i % 2 == 0 {
                TorusPoint::haar(d, &mut rng)
            } else {
                let den: i64 = rng.random_range(1..=40);
                let ratios: Vec<(i64, i64)> = (0..d).map(|_| (rng.random_range(0..den), den)).collect();
                TorusPoint::from_ratios(&ratios).unwrap()
            };
            let r = nearest_rational(&x, big_q).unwrap();
            let (q, dist) = brute_force(&x, big_q);
            assert_eq!(r.dist_exact, dist, "point {x:?} Q {big_q}");
            assert_eq!(r.q, q);
            assert!((torus_distance(&x, &r.xprime) - r.dist).abs() < 1e-15);
        }
    }

    #[test]
    fn monotone_in_q() {
        let mut rng = stream_rng(13, 0, 0);
        for _ in 0..50 {
            let x = TorusPoint::haar(2, &mut rng);
            let mut prev = f64::INFINITY;
            for q in 1..30 {
                let d = nearest_rational(&x, q).unwrap().dist;
                assert!(d <= prev);
                prev = d;
            }
        }
    }

    #[test]
    fn parallel_search_matches_sequential() {
        let x = TorusPoint::Fixed(vec![golden_fixed(), sqrt2_fixed()]);
        let big = nearest_rational(&x, 5000).unwrap();
        let mut best = evaluate(&x, 1);
        for q in 2..=5000 {
            let c = evaluate(&x, q);
            if better(&c, &best) {
                best = c;
            }
        }
        assert_eq!(big.q, best.q);
    }

    #[test]
    fn wq_mass_examples() {
        let pts: Vec<TorusPoint> = (0..7).map(|k| TorusPoint::from_ratios(&[(k, 7), (2 * k, 7)]).unwrap()).collect();
        assert_eq!(wq_mass(&pts, 7, 0.0).unwrap(), 1.0);
        let mut rng = stream_rng(14, 0, 0);
        let haar1: Vec<TorusPoint> = (0..200).map(|_| TorusPoint::haar(1, &mut rng)).collect();
        assert_eq!(wq_mass(&haar1, 4, 1.0 / 8.0).unwrap(), 1.0);
        // rho = 0 on rational samples: fraction whose denominator divides some q <= Q
        let mixed: Vec<TorusPoint> = (1..=12).map(|q| TorusPoint::from_ratios(&[(1, q), (0, 1)]).unwrap()).collect();
        assert_eq!(wq_mass(&mixed, 5, 0.0).unwrap(), 5.0 / 12.0);
    }

    #[test]
    fn wq_mass_matches_area_oracle() {
        // area of the union of sup-balls of radius ρ around W_3 in T^2
        let rho = 0.01;
        let mut coords: Vec<f64> = Vec::new();
        for q in 1..=3i64 {
            for p in 0..q {
                coords.push(p as f64 / q as f64);
            }
        }
        coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
        coords.dedup();
        // W_3 = grid of pairs with one common denominator; count by denominator classes
        let mut pts = std::collections::BTreeSet::new();
        for q in 1..=3i64 {
            for a in 0..q {
                for b in 0..q {
                    let g = a.gcd(&b).gcd(&q);
                    pts.insert((a / g, b / g, q / g));
                }
            }
        }
        let area = pts.len() as f64 * (2.0 * rho) * (2.0 * rho);
        let mut rng = stream_rng(15, 0, 0);
        let n = 200_000;
        let samples: Vec<TorusPoint> = (0..n).map(|_| TorusPoint::haar(2, &mut rng)).collect();
        let mass = wq_mass(&samples, 3, rho).unwrap();
        let sigma = (area * (1.0 - area) / n as f64).sqrt();
        assert!((mass - area).abs() <= 4.0 * sigma, "{mass} vs {area}");
    }

    fn params(a: Vec<i64>, t: f64, n: usize, lambda: f64) -> MainTheoremParams {
        MainTheoremParams { a, t, n, lambda, c_window: 2.0, samples: 2000, seed: 1 }
    }

    #[test]
    fn main_theorem_trivial_cases() {
        let mu = sl2();
        let r = verify_main_theorem(&mu, &TorusPoint::zero(2), &params(vec![1, 2], 0.3, 10, 0.05)).unwrap();
        assert_eq!((r.witness.q, r.witness.dist), (1, 0.0));
        assert!(r.found);
        let x = TorusPoint::from_ratios(&[(1, 5), (2, 5)]).unwrap();
        for n in [1, 5, 20] {
            let r = verify_main_theorem(&mu, &x, &params(vec![5, 0], 0.45, n, 0.05)).unwrap();
            assert_eq!((r.witness.q, r.witness.dist), (5, 0.0));
            assert_eq!(r.coefficient.value, Complex64::new(1.0, 0.0));
            assert!(r.exact_coefficient);
        }
    }

    #[test]
    fn main_theorem_perturbed_seven() {
        let mu = sl2();
        let den = BigInt::from(7i64) << 40usize;
        let x = TorusPoint::exact(vec![(BigInt::from(1) << 40usize) + 7, (BigInt::from(3) << 40usize) + 7], den).unwrap();
        let r = verify_main_theorem(&mu, &x, &params(vec![7, 0], 0.4, 20, 0.05)).unwrap();
        assert_eq!(r.witness.q, 7);
        assert_eq!(r.witness.dist, 2f64.powi(-40));
        assert!(r.found);
        let (q, dist) = brute_force(&x, r.big_q);
        assert_eq!((q, dist), (7, r.witness.dist_exact.clone()));
        let v = r.to_json();
        assert_eq!(v["witness"]["q"], 7);
    }

    #[test]
    fn main_theorem_not_applicable() {
        let mu = sl2();
        let x = TorusPoint::Fixed(vec![golden_fixed(), sqrt2_fixed()]);
        let err = verify_main_theorem(&mu, &x, &params(vec![1, 0], 0.4, 30, 0.05)).unwrap_err();
        assert!(matches!(err, Error::NotApplicable { .. }));
    }

    #[test]
    fn screen_examples() {
        let zeros = vec![TorusPoint::zero(2); 100];
        let r = dioph_screen(&zeros, 0.01, 5, 1.0).unwrap();
        assert_eq!(r.passing.len(), 1);
        assert_eq!((r.passing[0].q, r.passing[0].dist), (1, 0.0));
        assert_eq!(r.counterexamples, 0);

        let mut rng = stream_rng(16, 0, 0);
        let haar: Vec<TorusPoint> = (0..10_000).map(|_| TorusPoint::haar(2, &mut rng)).collect();
        let r = dioph_screen(&haar, 0.01, 0, 1.0).unwrap();
        assert!(r.passing.is_empty());
        assert!(r.max_mass < 0.01);

        let mu = sl2();
        let x = TorusPoint::from_ratios(&[(1, 5), (2, 5)]).unwrap();
        let w = walk_samples(&mu, 12, &x, 2000, 2).unwrap();
        let rho = 5f64.powi(-10);
        let r = dioph_screen(&w.points, rho, 12, 1.0).unwrap();
        assert!(r.big_q >= 5);
        assert!(!r.passing.is_empty());
        assert_eq!(r.counterexamples, 0);
    }

    #[test]
    fn hashed_masses_match_brute_force() {
        let mut rng = stream_rng(17, 0, 0);
        let pts: Vec<TorusPoint> = (0..500).map(|_| TorusPoint::haar(2, &mut rng)).collect();
        let centers = &pts[..50];
        let fast = ball_masses(&pts, centers, 0.07);
        for (c, f) in centers.iter().zip(fast) {
            let slow = pts.iter().filter(|s| torus_distance(s, c) <= 0.07).count() as f64 / 500.0;
            assert_eq!(f, slow);
        }
    }
}
