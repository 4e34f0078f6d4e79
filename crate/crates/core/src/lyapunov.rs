//! Lyapunov exponents and large-deviation tails of random matrix products.
//!
//! `top_exponent`, `spectrum` and `lyapunov_vector` draw sample `i` from the
//! same stream, so their estimates are paired and directly comparable.

use crate::error::{Error, Result};
use crate::linalg::{log_operator_norm, scaled_f64, singular_values, IntMatrix, RealMatrix};
use crate::mc::{linear_fit, mean_stderr, par_collect, stream_rng, wilson_interval, Z95};
use crate::measure::{FiniteMeasure, StepSampler};

const DOMAIN_LYAPUNOV: u64 = 0x4c59_4150;
const DOMAIN_TAIL: u64 = 0x5441_494c;
const DOMAIN_CONTRACTION: u64 = 0x434f_4e54;

/// Rescale the float product once its norm exceeds this.
const RENORM: f64 = 1e100;

/// Least number of events a sweep point needs to enter the slope fit.
pub const MIN_FIT_COUNT: u64 = 20;

fn check_n(n: usize, samples: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be positive".into()));
    }
    Ok(())
}

/// `log ‖g_n ⋯ g_1‖` by a floating product with periodic rescaling.
fn float_log_norm(sampler: &StepSampler<IntMatrix>, reals: &[RealMatrix], n: usize, seed: u64, i: usize) -> f64 {
    let mut rng = stream_rng(seed, DOMAIN_LYAPUNOV, i as u64);
    let d = reals[0].dim();
    let mut m = RealMatrix::identity(d);
    let mut acc = 0.0;
    for _ in 0..n {
        m = reals[sampler.draw_index(&mut rng)].mul(&m);
        let f = m.frobenius();
        if f > RENORM {
            m = m.scale(1.0 / f);
            acc += f.ln();
        }
    }
    acc + m.operator_norm().ln()
}

/// `λ̂_1 = mean (1/n) log ‖g_n ⋯ g_1‖` and its standard error.
pub fn top_exponent(mu: &FiniteMeasure<IntMatrix>, n: usize, samples: usize, seed: u64) -> Result<(f64, f64)> {
    check_n(n, samples)?;
    let sampler = mu.sampler()?;
    let reals: Vec<RealMatrix> = sampler.points().iter().map(IntMatrix::to_real).collect();
    let v = par_collect(samples, |i| float_log_norm(&sampler, &reals, n, seed, i) / n as f64);
    Ok(mean_stderr(&v))
}

/// Mean and standard error of `log ‖g_n ⋯ g_1‖` (not divided by `n`).
pub fn mean_log_norm(mu: &FiniteMeasure<IntMatrix>, n: usize, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let (m, s) = top_exponent(mu, n, samples, seed)?;
    Ok((m * n as f64, s * n as f64))
}

/// Estimated Lyapunov spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumEstimate {
    pub lambda: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n: usize,
    pub samples: usize,
}

/// Modified Gram–Schmidt on the columns of a row-major `d × d` matrix.
/// Returns `log |R_kk|` and leaves `q` orthonormal.
fn mgs_log_diag(q: &mut [f64], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        for j in 0..k {
            let dot: f64 = (0..d).map(|i| q[i * d + j] * q[i * d + k]).sum();
            for i in 0..d {
                q[i * d + k] -= dot * q[i * d + j];
            }
        }
        let norm: f64 = (0..d).map(|i| q[i * d + k] * q[i * d + k]).sum::<f64>().sqrt();
        out.push(norm.ln());
        if norm > 0.0 {
            for i in 0..d {
                q[i * d + k] /= norm;
            }
        }
    }
    out
}

/// Pushes the frame `q` through `mats[idx[0]], mats[idx[1]], …`, taking the
/// QR step every `period` multiplications and at the end. Returns the summed
/// `log |R_kk|` and the final orthonormal frame.
fn qr_pass(mats: &[RealMatrix], idx: impl Iterator<Item = usize>, q0: RealMatrix, period: usize) -> (Vec<f64>, RealMatrix) {
    let d = q0.dim();
    let mut q = q0;
    let mut acc = vec![0.0; d];
    let mut pending = 0;
    for k in idx {
        q = mats[k].mul(&q);
        pending += 1;
        if pending == period {
            let mut buf = q.entries().to_vec();
            for (a, l) in acc.iter_mut().zip(mgs_log_diag(&mut buf, d)) {
                *a += l;
            }
            q = RealMatrix::new(d, buf).expect("finite frame");
            pending = 0;
        }
    }
    if pending > 0 {
        let mut buf = q.entries().to_vec();
        for (a, l) in acc.iter_mut().zip(mgs_log_diag(&mut buf, d)) {
            *a += l;
        }
        q = RealMatrix::new(d, buf).expect("finite frame");
    }
    (acc, q)
}

/// Lyapunov spectrum by QR with re-orthonormalization every `reorth_period`
/// steps.
///
/// A first pass runs the transposed product `g_1ᵀ ⋯ g_nᵀ` to find the most
/// expanded input frame of `g = g_n ⋯ g_1`; the forward pass starts there, so
/// the diagonal of `R` recovers `log σ_k(g)` rather than the growth of a fixed
/// starting frame.
pub fn spectrum(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    samples: usize,
    seed: u64,
    reorth_period: usize,
) -> Result<SpectrumEstimate> {
    check_n(n, samples)?;
    if reorth_period == 0 || n < reorth_period {
        return Err(Error::InvalidArgument("need 1 <= reorth_period <= n".into()));
    }
    let sampler = mu.sampler()?;
    let d = mu.dim();
    let reals: Vec<RealMatrix> = sampler.points().iter().map(IntMatrix::to_real).collect();
    let transposed: Vec<RealMatrix> = reals.iter().map(RealMatrix::transpose).collect();
    let per_sample = par_collect(samples, |i| {
        let mut rng = stream_rng(seed, DOMAIN_LYAPUNOV, i as u64);
        let idx: Vec<usize> = (0..n).map(|_| sampler.draw_index(&mut rng)).collect();
        let (_, frame) = qr_pass(&transposed, idx.iter().rev().copied(), RealMatrix::identity(d), reorth_period);
        let (acc, _) = qr_pass(&reals, idx.iter().copied(), frame, reorth_period);
        acc.into_iter().map(|a| a / n as f64).collect::<Vec<f64>>()
    });
    let mut stats: Vec<(f64, f64)> = (0..d)
        .map(|k| mean_stderr(&per_sample.iter().map(|v| v[k]).collect::<Vec<_>>()))
        .collect();
    stats.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(SpectrumEstimate {
        lambda: stats.iter().map(|s| s.0).collect(),
        stderr: stats.iter().map(|s| s.1).collect(),
        n,
        samples,
    })
}

/// Mean Cartan projection `(1/n) E κ(g_n ⋯ g_1)` from exact products.
pub fn lyapunov_vector(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_n(n, samples)?;
    let sampler = mu.sampler()?;
    let d = mu.dim();
    let per_sample = par_collect(samples, |i| {
        let mut rng = stream_rng(seed, DOMAIN_LYAPUNOV, i as u64);
        let g = sampler.product(n, &mut rng);
        singular_values(&g)
            .kappa
            .map(|k| k.into_iter().map(|x| x / n as f64).collect::<Vec<f64>>())
    });
    let per_sample: Vec<Vec<f64>> = per_sample.into_iter().collect::<Option<_>>().ok_or(Error::Singular)?;
    let stats: Vec<(f64, f64)> = (0..d)
        .map(|k| mean_stderr(&per_sample.iter().map(|v| v[k]).collect::<Vec<_>>()))
        .collect();
    Ok((stats.iter().map(|s| s.0).collect(), stats.iter().map(|s| s.1).collect()))
}

/// Which normalized quantity a deviation tail tracks.
#[derive(Clone, Debug, PartialEq)]
pub enum TailMode {
    /// `(1/n) log ‖g‖`.
    Norm,
    /// `(1/n) log σ_k(g)`, `k` counted from 1.
    SingularK(usize),
    /// `(1/n) log (‖gv‖/‖v‖)`.
    Vector(Vec<f64>),
}

/// `log (‖g v‖ / ‖v‖)` for huge exact `g`.
fn log_vector_growth(g: &IntMatrix, v: &[f64]) -> f64 {
    let (s, shift) = scaled_f64(g.entries());
    let d = g.dim();
    let gv: f64 = (0..d)
        .map(|i| (0..d).map(|j| s[i * d + j] * v[j]).sum::<f64>().powi(2))
        .sum::<f64>()
        .sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (gv / nv).ln() + shift as f64 * std::f64::consts::LN_2
}

fn statistic(g: &IntMatrix, mode: &TailMode) -> f64 {
    match mode {
        TailMode::Norm => log_operator_norm(g),
        TailMode::SingularK(k) => singular_values(g).kappa.map(|v| v[k - 1]).unwrap_or(f64::NEG_INFINITY),
        TailMode::Vector(v) => log_vector_growth(g, v),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailRow {
    pub n: usize,
    pub count: u64,
    pub trials: u64,
    pub prob: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Empirical `P(|(1/n) stat − λ| ≥ ω)` per `n`, with Wilson 95% intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct TailReport {
    pub omega: f64,
    pub lambda_ref: f64,
    pub rows: Vec<TailRow>,
}

impl TailReport {
    /// CSV with columns `n, count, prob, ci_low, ci_high`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,count,prob,ci_low,ci_high\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.8e},{:.8e},{:.8e}\n", r.n, r.count, r.prob, r.ci_low, r.ci_high));
        }
        s
    }

    /// Probabilities strictly decreasing with pairwise disjoint intervals.
    pub fn strictly_separated(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].prob < w[0].prob && w[1].ci_high < w[0].ci_low)
    }
}

/// Deviation tails at each `n`. `lambda_ref` is the plug-in exponent the
/// statistic is compared against.
pub fn deviation_tails(
    mu: &FiniteMeasure<IntMatrix>,
    omega: f64,
    ns: &[usize],
    samples: usize,
    mode: &TailMode,
    lambda_ref: f64,
    seed: u64,
) -> Result<TailReport> {
    if let TailMode::SingularK(k) = mode {
        if *k == 0 || *k > mu.dim() {
            return Err(Error::InvalidArgument(format!("singular index {k} out of range")));
        }
    }
    if let TailMode::Vector(v) = mode {
        if v.len() != mu.dim() || v.iter().all(|x| *x == 0.0) {
            return Err(Error::InvalidArgument("direction must be a nonzero vector of length d".into()));
        }
    }
    let sampler = mu.sampler()?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        check_n(n, samples)?;
        let hits = par_collect(samples, |i| {
            let mut rng = stream_rng(seed, DOMAIN_TAIL.wrapping_add(n as u64), i as u64);
            let g = sampler.product(n, &mut rng);
            (statistic(&g, mode) / n as f64 - lambda_ref).abs() >= omega
        });
        let count = hits.iter().filter(|&&h| h).count() as u64;
        let trials = samples as u64;
        let (ci_low, ci_high) = wilson_interval(count, trials, Z95);
        rows.push(TailRow { n, count, trials, prob: count as f64 / trials as f64, ci_low, ci_high });
    }
    Ok(TailReport { omega, lambda_ref, rows })
}

/// `‖g v‖ / (‖g‖ ‖v‖)`, scale-free so huge products are fine.
fn contraction_ratio(g: &IntMatrix, v: &[f64]) -> f64 {
    let (s, _) = scaled_f64(g.entries());
    let d = g.dim();
    let m = RealMatrix::new(d, s).expect("finite scaled entries");
    let gv = m.apply(v);
    let ngv = gv.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    ngv / (m.operator_norm() * nv)
}

fn contraction_ratios(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    v: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if v.len() != mu.dim() || v.iter().all(|x| *x == 0.0) {
        return Err(Error::InvalidArgument("direction must be a nonzero vector of length d".into()));
    }
    let sampler = mu.sampler()?;
    Ok(par_collect(samples, |i| {
        let mut rng = stream_rng(seed, DOMAIN_CONTRACTION, i as u64);
        contraction_ratio(&sampler.product(n, &mut rng), v)
    }))
}

/// Empirical `μ^{*n}{g : ‖gv‖ ≤ ρ ‖g‖ ‖v‖}`; exactly 1 for `ρ ≥ 1`.
pub fn contraction_tail(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    v: &[f64],
    rho: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_n(n, samples)?;
    if rho >= 1.0 {
        return Ok(1.0);
    }
    let r = contraction_ratios(mu, n, v, samples, seed)?;
    Ok(r.iter().filter(|&&x| x <= rho).count() as f64 / samples as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionPoint {
    pub rho: f64,
    pub count: u64,
    pub prob: f64,
    /// Whether the point entered the slope fit.
    pub fitted: bool,
}

/// Contraction probabilities over a sweep of `ρ` and the fitted exponent `κ̂`
/// (slope of log-probability against log-ρ).
#[derive(Clone, Debug, PartialEq)]
pub struct ContractionSweep {
    pub n: usize,
    pub samples: usize,
    pub points: Vec<ContractionPoint>,
    pub kappa_hat: Option<f64>,
}

pub fn contraction_sweep(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    v: &[f64],
    rhos: &[f64],
    samples: usize,
    seed: u64,
) -> Result<ContractionSweep> {
    check_n(n, samples)?;
    let r = contraction_ratios(mu, n, v, samples, seed)?;
    let points: Vec<ContractionPoint> = rhos
        .iter()
        .map(|&rho| {
            let count = if rho >= 1.0 { samples as u64 } else { r.iter().filter(|&&x| x <= rho).count() as u64 };
            ContractionPoint {
                rho,
                count,
                prob: count as f64 / samples as f64,
                fitted: count >= MIN_FIT_COUNT,
            }
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.fitted)
        .map(|p| (p.rho.ln(), p.prob.ln()))
        .unzip();
    let kappa_hat = linear_fit(&xs, &ys).map(|(slope, _)| slope);
    Ok(ContractionSweep { n, samples, points, kappa_hat })
}

/// Exact `g^n` helper used by deterministic checks.
pub fn power(g: &IntMatrix, n: usize) -> IntMatrix {
    let mut acc = IntMatrix::identity(g.dim());
    for _ in 0..n {
        acc = g.mat_mul(&acc).expect("same dimension");
    }
    acc
}
