//! δ-discretized measures on `E ≅ R^D`: the `P_δ` smoothing, L2 norms,
//! covering numbers, additive energy, the flattening recursion
//! `μ_{k+1} = η_k ⊛ η_k ⊟ η_k ⊛ η_k`, and exact checks of two unconditional
//! Fourier inequalities.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;

use crate::algebra::AlgebraBasis;
use crate::error::{Error, Result};
use crate::linalg::{IntMatrix, RatMatrix, RealMatrix};
use crate::mc::stream_rng;
use crate::measure::FiniteMeasure;
use crate::torus::{character, phase_rational, TorusPoint};

const DOMAIN_FLATTEN: u64 = 0x464c_4154;
const DOMAIN_RESCALED: u64 = 0x5245_5343;
/// Slack for realness and for the inequalities checked in floating point.
pub const CHECK_SLACK: f64 = 1e-10;

pub type Cell = Vec<i64>;

/// Cell masses on the lattice `δ Z^D` of basis coordinates. A cell's mass is
/// spread uniformly over the cell, so the density is `mass / δ^D`.
#[derive(Clone, Debug)]
pub struct GridMeasure {
    basis: AlgebraBasis,
    delta: f64,
    box_radius: f64,
    cells: BTreeMap<Cell, f64>,
    dropped: f64,
    smoothed: bool,
}

fn same_basis(a: &AlgebraBasis, b: &AlgebraBasis) -> bool {
    a.ambient_dim() == b.ambient_dim()
        && a.dim() == b.dim()
        && a.basis().iter().zip(b.basis()).all(|(x, y)| x.max_abs_diff(y) <= 1e-12)
}

/// Volume of the Euclidean unit ball in `R^D`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / d as f64 * unit_ball_volume(d - 2),
    }
}

/// `‖δ_0 ⊞ P_δ‖²` under the `3^D` cell kernel divided by the ball value
/// `|B(0, δ)|^{-1}`: equals `V_D / 3^D`.
pub fn kernel_normalization(d: usize) -> f64 {
    unit_ball_volume(d) / 3f64.powi(d as i32)
}

fn offsets(d: usize, reach: i64) -> Vec<Cell> {
    let width = (2 * reach + 1) as usize;
    (0..width.pow(d as u32))
        .map(|mut code| {
            (0..d)
                .map(|_| {
                    let o = (code % width) as i64 - reach;
                    code /= width;
                    o
                })
                .collect()
        })
        .collect()
}

impl GridMeasure {
    /// Builds a grid directly from cell masses.
    pub fn from_cells(basis: AlgebraBasis, delta: f64, box_radius: f64, cells: BTreeMap<Cell, f64>) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument("delta must be positive".into()));
        }
        let dd = basis.dim();
        let reach = (box_radius / delta).round() as i64;
        for (c, &m) in &cells {
            if c.len() != dd {
                return Err(Error::DimensionMismatch { expected: dd, found: c.len() });
            }
            if !(m >= 0.0) {
                return Err(Error::InvalidMeasure("cell masses must be nonnegative".into()));
            }
            if c.iter().any(|v| v.abs() > reach) {
                return Err(Error::InvalidMeasure("cell outside the box".into()));
            }
        }
        let cells = cells.into_iter().filter(|(_, m)| *m > 0.0).collect();
        Ok(GridMeasure { basis, delta, box_radius, cells, dropped: 0.0, smoothed: false })
    }

    pub fn basis(&self) -> &AlgebraBasis {
        &self.basis
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn box_radius(&self) -> f64 {
        self.box_radius
    }

    pub fn cells(&self) -> &BTreeMap<Cell, f64> {
        &self.cells
    }

    /// Mass that fell outside the box in the operation producing this grid.
    pub fn dropped(&self) -> f64 {
        self.dropped
    }

    pub fn is_smoothed(&self) -> bool {
        self.smoothed
    }

    pub fn total(&self) -> f64 {
        self.cells.values().sum()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.delta.powi(self.basis.dim() as i32)
    }

    pub fn support(&self) -> BTreeSet<Cell> {
        self.cells.keys().cloned().collect()
    }

    /// Coordinates of a cell center.
    pub fn center(&self, c: &[i64]) -> Vec<f64> {
        c.iter().map(|&v| v as f64 * self.delta).collect()
    }

    /// `Σ m(c) · e(⟨ξ, δc⟩)`.
    pub fn fourier(&self, xi: &[f64]) -> Complex64 {
        self.cells
            .iter()
            .map(|(c, &m)| {
                let t: f64 = c.iter().zip(xi).map(|(&ci, &x)| ci as f64 * self.delta * x).sum();
                let frac = t - t.round();
                Complex64::from_polar(m, std::f64::consts::TAU * frac)
            })
            .sum()
    }
}

/// Bins weighted points of `E` into cells `round(coords / δ)`; points with a
/// coordinate beyond `box_radius` are dropped and their mass reported.
pub fn discretize_weighted(
    points: &[(RealMatrix, f64)],
    basis: &AlgebraBasis,
    delta: f64,
    box_radius: f64,
) -> Result<GridMeasure> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    let mut cells: BTreeMap<Cell, f64> = BTreeMap::new();
    let mut dropped = 0.0;
    for (x, w) in points {
        if x.dim() != basis.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: basis.ambient_dim(), found: x.dim() });
        }
        let coords = basis.coords(x);
        let res = x.sub(&basis.from_coords(&coords)).frobenius();
        if res > crate::algebra::MEMBERSHIP_TOL * (1.0 + x.frobenius()) {
            return Err(Error::NotInAlgebra { residual: res });
        }
        if coords.iter().any(|c| c.abs() > box_radius) {
            dropped += w;
            continue;
        }
        let cell: Cell = coords.iter().map(|c| (c / delta).round() as i64).collect();
        *cells.entry(cell).or_insert(0.0) += w;
    }
    Ok(GridMeasure { basis: basis.clone(), delta, box_radius, cells, dropped, smoothed: false })
}

/// Cell binning of a finite measure on `E`.
pub fn discretize(
    mu: &FiniteMeasure<RealMatrix>,
    basis: &AlgebraBasis,
    delta: f64,
    box_radius: f64,
) -> Result<GridMeasure> {
    let pts: Vec<(RealMatrix, f64)> = mu.atoms().map(|(x, w)| (x.clone(), w.to_f64().unwrap_or(0.0))).collect();
    discretize_weighted(&pts, basis, delta, box_radius)
}

/// `gm ⊞ P_δ` with `P_δ` realized as the average over the `3^D` cells
/// around the origin. The box grows by one cell so no mass is lost.
pub fn smooth_p_delta(gm: &GridMeasure) -> GridMeasure {
    let dd = gm.basis.dim();
    let offs = offsets(dd, 1);
    let share = 1.0 / offs.len() as f64;
    let mut cells: BTreeMap<Cell, f64> = BTreeMap::new();
    for (c, &m) in &gm.cells {
        for o in &offs {
            let key: Cell = c.iter().zip(o).map(|(a, b)| a + b).collect();
            *cells.entry(key).or_insert(0.0) += m * share;
        }
    }
    GridMeasure {
        basis: gm.basis.clone(),
        delta: gm.delta,
        box_radius: gm.box_radius + gm.delta,
        cells,
        dropped: 0.0,
        smoothed: true,
    }
}

/// `‖f‖_2² = Σ (m / δ^D)² · δ^D`.
pub fn l2_norm_sq(gm: &GridMeasure) -> f64 {
    gm.cells.values().map(|m| m * m).sum::<f64>() / gm.cell_volume()
}

/// `‖gm ⊞ P_δ‖_2²` without materializing the smoothed grid: the smoothed
/// norm is `Σ_v K(v) Σ_c m(c) m(c+v) / (9^D δ^D)` with
/// `K(v) = Π (3 − |v_i|)` over `‖v‖_∞ ≤ 2`.
pub fn smoothed_l2_norm_sq(gm: &GridMeasure) -> f64 {
    let dd = gm.basis.dim();
    let lookup: HashMap<&[i64], f64> = gm.cells.iter().map(|(c, &m)| (c.as_slice(), m)).collect();
    let weighted: Vec<(Cell, f64)> = offsets(dd, 2)
        .into_iter()
        .map(|v| {
            let k: f64 = v.iter().map(|&x| (3 - x.abs()) as f64).product();
            (v, k)
        })
        .collect();
    let cells: Vec<(&Cell, f64)> = gm.cells.iter().map(|(c, &m)| (c, m)).collect();
    let partial: Vec<f64> = cells
        .par_chunks(4096)
        .map(|chunk| {
            let mut buf = vec![0i64; dd];
            let mut acc = 0.0;
            for (c, m) in chunk {
                for (v, k) in &weighted {
                    for i in 0..dd {
                        buf[i] = c[i] + v[i];
                    }
                    if let Some(m2) = lookup.get(buf.as_slice()) {
                        acc += k * m * m2;
                    }
                }
            }
            acc
        })
        .collect();
    partial.iter().sum::<f64>() / 9f64.powi(dd as i32) / gm.cell_volume()
}

/// Greedy cover of `cells` by Euclidean balls of radius `rho` centered on
/// cells, scanning in lattice order.
pub fn covering_number(cells: &BTreeSet<Cell>, delta: f64, rho: f64) -> usize {
    let r = rho / delta;
    let r2 = r * r;
    let mut uncovered: BTreeSet<&Cell> = cells.iter().collect();
    let mut count = 0;
    while let Some(&c) = uncovered.iter().next() {
        count += 1;
        uncovered.retain(|x| {
            let d2: f64 = x.iter().zip(c).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
            d2 > r2
        });
    }
    count
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub delta: f64,
    pub energy: u128,
    pub n_a: usize,
    pub n_b: usize,
    pub normalized: f64,
}

/// Additive energy `Σ_x r(x)²`, `r(x) = #{(a, b) ∈ A × B : a + b = x}`,
/// on δ-cells.
pub fn additive_energy(a: &BTreeSet<Cell>, b: &BTreeSet<Cell>, delta: f64) -> EnergyReport {
    let mut r: HashMap<Cell, u64> = HashMap::new();
    for x in a {
        for y in b {
            let s: Cell = x.iter().zip(y).map(|(p, q)| p + q).collect();
            *r.entry(s).or_insert(0) += 1;
        }
    }
    let energy: u128 = r.values().map(|&v| (v as u128) * (v as u128)).sum();
    let (n_a, n_b) = (a.len(), b.len());
    let normalized = energy as f64 / ((n_a as f64).powf(1.5) * (n_b as f64).powf(1.5));
    EnergyReport { delta, energy, n_a, n_b, normalized }
}

/// Structure constants: coordinates of `b_i b_j`.
fn mult_table(basis: &AlgebraBasis) -> Vec<Vec<f64>> {
    let b = basis.basis();
    b.iter().flat_map(|x| b.iter().map(move |y| basis.coords(&x.mul(y)))).collect()
}

fn check_pair(g1: &GridMeasure, g2: &GridMeasure) -> Result<()> {
    if !same_basis(&g1.basis, &g2.basis) || g1.delta != g2.delta {
        return Err(Error::BasisMismatch);
    }
    Ok(())
}

/// Pushforward of `g1 × g2` under a cell map, rebinned into the larger box.
fn pushforward(
    g1: &GridMeasure,
    g2: &GridMeasure,
    map: impl Fn(&[i64], &[i64]) -> Cell + Sync,
) -> GridMeasure {
    let box_radius = g1.box_radius.max(g2.box_radius);
    let reach = (box_radius / g1.delta).round() as i64;
    let left: Vec<(&Cell, f64)> = g1.cells.iter().map(|(c, &m)| (c, m)).collect();
    let parts: Vec<(BTreeMap<Cell, f64>, f64)> = left
        .par_chunks(256)
        .map(|chunk| {
            let mut out: BTreeMap<Cell, f64> = BTreeMap::new();
            let mut dropped = 0.0;
            for (c1, m1) in chunk {
                for (c2, m2) in &g2.cells {
                    let c = map(c1, c2);
                    if c.iter().any(|v| v.abs() > reach) {
                        dropped += m1 * m2;
                    } else {
                        *out.entry(c).or_insert(0.0) += m1 * m2;
                    }
                }
            }
            (out, dropped)
        })
        .collect();
    let mut cells: BTreeMap<Cell, f64> = BTreeMap::new();
    let mut dropped = 0.0;
    for (part, d) in parts {
        dropped += d;
        for (c, m) in part {
            *cells.entry(c).or_insert(0.0) += m;
        }
    }
    GridMeasure { basis: g1.basis.clone(), delta: g1.delta, box_radius, cells, dropped, smoothed: false }
}

/// `g1 ⊛ g2`: cell centers multiplied in `E`, rebinned.
pub fn mult_convolve_grid(g1: &GridMeasure, g2: &GridMeasure) -> Result<GridMeasure> {
    check_pair(g1, g2)?;
    let table = mult_table(&g1.basis);
    let dd = g1.basis.dim();
    let delta = g1.delta;
    Ok(pushforward(g1, g2, |c1, c2| {
        let mut out = vec![0.0; dd];
        for i in 0..dd {
            if c1[i] == 0 {
                continue;
            }
            for j in 0..dd {
                if c2[j] == 0 {
                    continue;
                }
                let s = (c1[i] * c2[j]) as f64 * delta;
                for (o, t) in out.iter_mut().zip(&table[i * dd + j]) {
                    *o += s * t;
                }
            }
        }
        out.iter().map(|v| v.round() as i64).collect()
    }))
}

/// `g1 ⊟ g2`: exact on cells.
pub fn diff_convolve_grid(g1: &GridMeasure, g2: &GridMeasure) -> Result<GridMeasure> {
    check_pair(g1, g2)?;
    Ok(pushforward(g1, g2, |c1, c2| c1.iter().zip(c2).map(|(a, b)| a - b).collect()))
}

/// `Σ m(c) e(⟨ξ, δc⟩)`.
pub fn fourier_on_e(gm: &GridMeasure, xi: &[f64]) -> Complex64 {
    gm.fourier(xi)
}

/// Parameters of [`flatten_iterate`].
#[derive(Clone, Debug)]
pub struct FlattenParams {
    pub delta: f64,
    pub eps: f64,
    pub k_max: usize,
    /// Particles drawn per stage once the exact recursion is too large.
    pub particles: usize,
    /// Exact recursion while `|supp η_k|^4` stays below this.
    pub exact_cap: usize,
    /// Largest grid (in cells) any stage may build.
    pub cell_budget: usize,
    pub seed: u64,
}

impl Default for FlattenParams {
    fn default() -> Self {
        FlattenParams {
            delta: 2f64.powi(-10),
            eps: 0.05,
            k_max: 3,
            particles: 100_000,
            exact_cap: 1 << 20,
            cell_budget: 50_000_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlattenRecord {
    pub k: usize,
    pub eta_mass: f64,
    /// `‖η_k ⊞ P_δ‖_2`.
    pub l2_eta: f64,
    /// `‖μ_{k+1} ⊞ P_δ‖_2`.
    pub l2_mu_next: f64,
    pub dropped_mass: f64,
    pub exact: bool,
}

#[derive(Clone, Debug)]
pub struct FlattenTrace {
    pub records: Vec<FlattenRecord>,
    pub kernel_normalization: f64,
}

impl FlattenTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,eta_mass,l2_eta,l2_mu_next,dropped_mass\n");
        for r in &self.records {
            s.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", r.k, r.eta_mass, r.l2_eta, r.l2_mu_next, r.dropped_mass));
        }
        s
    }

    pub fn l2_strictly_decreasing(&self) -> bool {
        self.records.windows(2).all(|w| w[1].l2_eta < w[0].l2_eta)
    }
}

type Weighted = Vec<(RealMatrix, f64)>;

fn merge(points: impl IntoIterator<Item = (RealMatrix, f64)>) -> Weighted {
    let mut m: BTreeMap<RealMatrix, f64> = BTreeMap::new();
    for (x, w) in points {
        *m.entry(x).or_insert(0.0) += w;
    }
    m.into_iter().collect()
}

fn mass(points: &Weighted) -> f64 {
    points.iter().fold(0.0, |s, (_, w)| s + w)
}

/// `η ⊛ η ⊟ η ⊛ η` by enumeration.
fn recurse_exact(eta: &Weighted) -> Weighted {
    let prods = merge(eta.iter().flat_map(|(a, wa)| eta.iter().map(move |(b, wb)| (a.mul(b), wa * wb))));
    merge(prods.iter().flat_map(|(x, wx)| prods.iter().map(move |(y, wy)| (x.sub(y), wx * wy))))
}

/// `η ⊛ η ⊟ η ⊛ η` from seeded quadruples `ab − cd`, equal weights.
fn recurse_sampled(eta: &Weighted, particles: usize, seed: u64, k: usize) -> Weighted {
    let total = mass(eta);
    let mut cdf = Vec::with_capacity(eta.len());
    let mut acc = 0.0;
    for (_, w) in eta {
        acc += w;
        cdf.push(acc);
    }
    let chunks = 64usize;
    let per = particles.div_ceil(chunks);
    let weight = total.powi(4) / particles as f64;
    let parts: Vec<Weighted> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = stream_rng(seed, DOMAIN_FLATTEN, ((k as u64) << 32) | ci as u64);
            let count = per.min(particles.saturating_sub(ci * per));
            let mut draw = || {
                let u = rng.random::<f64>() * acc;
                let i = cdf.partition_point(|&c| c <= u).min(eta.len() - 1);
                &eta[i].0
            };
            (0..count)
                .map(|_| {
                    let (a, b, c, d) = (draw(), draw(), draw(), draw());
                    (a.mul(b).sub(&c.mul(d)), weight)
                })
                .collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

fn smoothed_l2(points: &Weighted, basis: &AlgebraBasis, p: &FlattenParams, box_radius: f64, k: usize) -> Result<f64> {
    if points.is_empty() {
        return Ok(0.0);
    }
    let gm = discretize_weighted(points, basis, p.delta, box_radius)?;
    if gm.len() > p.cell_budget {
        return Err(Error::GridBudgetExceeded { k, cells: gm.len() });
    }
    Ok(smoothed_l2_norm_sq(&gm).sqrt())
}

/// The flattening recursion: `μ_1 = μ|_{B(0, δ^{−ε})}` (spectral norm),
/// `η_k = μ_k` off `{|det_E| ≤ δ^{2^k ε}}`, `μ_{k+1} = η_k ⊛ η_k ⊟ η_k ⊛ η_k`.
/// Exact while the supports are small, seeded particles afterwards.
pub fn flatten_iterate(mu: &FiniteMeasure<RealMatrix>, basis: &AlgebraBasis, p: &FlattenParams) -> Result<FlattenTrace> {
    if p.k_max == 0 || p.k_max > 6 {
        return Err(Error::InvalidArgument("k_max must lie in 1..=6".into()));
    }
    if !(p.delta > 0.0 && p.delta < 1.0 && p.eps > 0.0) {
        return Err(Error::InvalidArgument("need 0 < delta < 1 and eps > 0".into()));
    }
    let radius = p.delta.powf(-p.eps);
    let all: Weighted = mu.atoms().map(|(x, w)| (x.clone(), w.to_f64().unwrap_or(0.0))).collect();
    let before = mass(&all);
    let mut current: Weighted = all.into_iter().filter(|(x, _)| x.operator_norm() <= radius).collect();
    let mut dropped = before - mass(&current);
    // coordinate box containing every stage: ‖ab − cd‖ ≤ 2R² per step
    let sqrt_d = (basis.ambient_dim() as f64).sqrt();
    let mut box_radius = sqrt_d * radius;
    let mut records = Vec::with_capacity(p.k_max);
    for k in 1..=p.k_max {
        let threshold = p.delta.powf(2f64.powi(k as i32) * p.eps);
        let mut eta = Vec::with_capacity(current.len());
        for (x, w) in current {
            if crate::algebra::det_e(basis, &x)?.abs() > threshold {
                eta.push((x, w));
            }
        }
        let eta_mass = mass(&eta);
        let l2_eta = smoothed_l2(&eta, basis, p, box_radius, k)?;
        let exact = eta.len().checked_pow(4).is_some_and(|n| n <= p.exact_cap);
        let next = if eta.is_empty() {
            Vec::new()
        } else if exact {
            recurse_exact(&eta)
        } else {
            recurse_sampled(&eta, p.particles, p.seed, k)
        };
        box_radius = 2.0 * box_radius * box_radius;
        let l2_mu_next = smoothed_l2(&next, basis, p, box_radius, k)?;
        records.push(FlattenRecord { k, eta_mass, l2_eta, l2_mu_next, dropped_mass: dropped, exact });
        dropped = 0.0;
        current = next;
    }
    Ok(FlattenTrace { records, kernel_normalization: kernel_normalization(basis.dim()) })
}

/// Empirical `μ̃_n`: `samples` seeded draws of `g_n ⋯ g_1`, each scaled by
/// `e^{−λ̂ n}`.
pub fn rescaled_empirical(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    lambda_hat: f64,
    samples: usize,
    seed: u64,
) -> Result<FiniteMeasure<RealMatrix>> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be positive".into()));
    }
    let sampler = mu.sampler()?;
    let log_factor = -lambda_hat * n as f64;
    let points = crate::mc::par_collect(samples, |i| {
        let mut rng = stream_rng(seed, DOMAIN_RESCALED, i as u64);
        sampler.product(n, &mut rng).to_real_scaled(log_factor)
    });
    FiniteMeasure::empirical(points)
}

/// `e(⟨ξ, x⟩)` with the trace pairing, reduced exactly mod 1.
fn rat_phase(xi: &RatMatrix, x: &RatMatrix) -> Complex64 {
    let t = xi.pairing(x);
    phase_rational(t.numer(), t.denom())
}

/// `μ̂(ξ) = Σ μ(x) e(⟨ξ, x⟩)` for a measure with rational atoms.
pub fn fourier_rat(mu: &FiniteMeasure<RatMatrix>, xi: &RatMatrix) -> Complex64 {
    mu.atoms().map(|(x, w)| rat_phase(xi, x) * w.to_f64().unwrap_or(0.0)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrdreReport {
    pub lhs: f64,
    pub rhs: f64,
    pub rhs_imag: f64,
    pub holds: bool,
}

/// With `μ = ν^{⊞l} ⊟ ν^{⊞l}`: `μ̂^{*m}(ξ)` is real and
/// `|ν̂^{*m}(ξ)|^{(2l)^m} ≤ μ̂^{*m}(ξ)`.
pub fn ordre_check(nu: &FiniteMeasure<RatMatrix>, l: usize, m: usize, xi: &RatMatrix, atom_cap: usize) -> Result<OrdreReport> {
    if l == 0 || m == 0 {
        return Err(Error::InvalidArgument("l and m must be positive".into()));
    }
    let s = nu.add_power(l, atom_cap)?;
    let mu = s.convolve_diff(&s)?;
    let mu_m = mu.power_exact(m, atom_cap)?;
    let nu_m = nu.power_exact(m, atom_cap)?;
    let exponent = (2 * l).pow(m as u32) as i32;
    let lhs = fourier_rat(&nu_m, xi).norm().powi(exponent);
    let r = fourier_rat(&mu_m, xi);
    let holds = r.im.abs() <= CHECK_SLACK && lhs <= r.re + CHECK_SLACK;
    Ok(OrdreReport { lhs, rhs: r.re, rhs_imag: r.im, holds })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpecHolderReport {
    /// `|Σ_g μ(g) ν̂(a_0 g)|`.
    pub hypothesis_value: f64,
    pub applicable: bool,
    pub mass_of_a: f64,
    pub bound: f64,
    /// Vacuously true when the hypothesis fails.
    pub holds: bool,
}

/// `ν̂(b)` for the uniform measure on `points`.
pub fn empirical_transform(points: &[TorusPoint], b: &[i64]) -> Complex64 {
    let s: Complex64 = points.iter().map(|x| character(b, x)).sum();
    s / points.len() as f64
}

fn frequency(a0: &[i64], g: &IntMatrix) -> Result<Vec<i64>> {
    let a: Vec<BigInt> = a0.iter().map(|&v| BigInt::from(v)).collect();
    crate::torus::row_action(&a, g)
        .iter()
        .map(|v| v.to_i64().ok_or_else(|| Error::InvalidArgument("frequency exceeds i64".into())))
        .collect()
}

/// When `|(μ * ν)^(a_0)| ≥ t_0`: `(μ^{⊞k} ⊟ μ^{⊞k})(A) ≥ t_0^{2k}/2` for
/// `A = {g : |ν̂(a_0 g)| ≥ t_0^{2k}/2}`. `ν` is uniform on `nu`.
pub fn specholder_check(
    mu: &FiniteMeasure<IntMatrix>,
    nu: &[TorusPoint],
    a0: &[i64],
    k: usize,
    t0: f64,
    atom_cap: usize,
) -> Result<SpecHolderReport> {
    if nu.is_empty() || k == 0 {
        return Err(Error::InvalidArgument("need nonempty nu and k >= 1".into()));
    }
    let mut hyp = Complex64::zero();
    for (g, w) in mu.atoms() {
        hyp += empirical_transform(nu, &frequency(a0, g)?) * w.to_f64().unwrap_or(0.0);
    }
    let hypothesis_value = hyp.norm();
    let bound = t0.powi(2 * k as i32) / 2.0;
    if hypothesis_value < t0 {
        return Ok(SpecHolderReport { hypothesis_value, applicable: false, mass_of_a: 0.0, bound, holds: true });
    }
    let s = mu.add_power(k, atom_cap)?;
    let rho = s.convolve_diff(&s)?;
    let mut mass_of_a = BigRational::zero();
    for (g, w) in rho.atoms() {
        if empirical_transform(nu, &frequency(a0, g)?).norm() >= bound {
            mass_of_a += w;
        }
    }
    let mass_of_a = mass_of_a.to_f64().unwrap_or(0.0);
    Ok(SpecHolderReport { hypothesis_value, applicable: true, mass_of_a, bound, holds: mass_of_a + CHECK_SLACK >= bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(rows: &[&[f64]]) -> RealMatrix {
        let d = rows.len();
        RealMatrix::new(d, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    fn uniform_real(points: Vec<RealMatrix>) -> FiniteMeasure<RealMatrix> {
        FiniteMeasure::uniform(points).unwrap()
    }

    fn cellset(cells: &[&[i64]]) -> BTreeSet<Cell> {
        cells.iter().map(|c| c.to_vec()).collect()
    }

    #[test]
    fn discretize_examples() {
        let e = AlgebraBasis::full(2);
        let g = discretize(&FiniteMeasure::dirac(RealMatrix::zero(2)), &e, 0.1, 1.0).unwrap();
        assert_eq!(g.cells().len(), 1);
        assert_eq!(g.cells()[&vec![0, 0, 0, 0]], 1.0);
        let mu = uniform_real(vec![
            real(&[&[0.01, 0.0], &[0.0, 0.0]]),
            real(&[&[0.02, 0.0], &[0.0, 0.0]]),
            real(&[&[5.0, 0.0], &[0.0, 0.0]]),
            real(&[&[0.0, 3.0], &[0.0, 0.0]]),
        ]);
        let g = discretize(&mu, &e, 0.1, 1.0).unwrap();
        assert_eq!(g.cells().len(), 1);
        assert_eq!(g.total(), 0.5);
        assert_eq!(g.dropped(), 0.5);
        let diag = AlgebraBasis::full(1);
        assert!(discretize(&mu, &diag, 0.1, 1.0).is_err());
    }

    #[test]
    fn smoothing_conserves_mass_and_shifts() {
        let e = AlgebraBasis::full(2);
        let mut cells = BTreeMap::new();
        cells.insert(vec![0, 0, 0, 0], 0.25);
        cells.insert(vec![2, -1, 0, 3], 0.75);
        let g = GridMeasure::from_cells(e.clone(), 0.5, 3.0, cells.clone()).unwrap();
        let s = smooth_p_delta(&g);
        assert!((s.total() - 1.0).abs() < 1e-12);
        assert!(s.is_smoothed());
        let shifted: BTreeMap<Cell, f64> = cells.iter().map(|(c, &m)| (c.iter().map(|v| v + 1).collect(), m)).collect();
        let gs = smooth_p_delta(&GridMeasure::from_cells(e, 0.5, 4.0, shifted).unwrap());
        for (c, m) in s.cells() {
            let k: Cell = c.iter().map(|v| v + 1).collect();
            assert_eq!(gs.cells()[&k], *m);
        }
    }

    #[test]
    fn point_mass_norm_matches_ball_volume() {
        for (d, delta) in [(1usize, 0.5), (2, 0.25), (3, 0.125)] {
            let e = AlgebraBasis::full(d);
            let dd = d * d;
            let g = discretize(&FiniteMeasure::dirac(RealMatrix::zero(d)), &e, delta, 1.0).unwrap();
            let s = smooth_p_delta(&g);
            let ball = unit_ball_volume(dd) * delta.powi(dd as i32);
            let ratio = l2_norm_sq(&s) * ball;
            assert!((ratio - kernel_normalization(dd)).abs() < 1e-12 * ratio);
        }
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume(4) - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn l2_examples() {
        let e = AlgebraBasis::full(1);
        // uniform density u on [-2.5δ, 2.5δ]: 5 cells of mass uδ
        let (u, delta) = (0.2, 1.0);
        let cells: BTreeMap<Cell, f64> = (-2..=2).map(|i| (vec![i], u * delta)).collect();
        let g = GridMeasure::from_cells(e.clone(), delta, 2.0, cells.clone()).unwrap();
        assert!((l2_norm_sq(&g) - u * u * 5.0 * delta).abs() < 1e-15);
        let doubled: BTreeMap<Cell, f64> = cells.iter().map(|(c, m)| (c.clone(), 2.0 * m)).collect();
        let g2 = GridMeasure::from_cells(e.clone(), delta, 2.0, doubled).unwrap();
        assert!((l2_norm_sq(&g2) - 4.0 * l2_norm_sq(&g)).abs() < 1e-15);
        // two plateaus: density 3 on a width-0.5 interval, density 1 on a width-1 interval
        let delta = 0.25;
        let mut cells = BTreeMap::new();
        for i in 0..2 {
            cells.insert(vec![i], 3.0 * delta);
        }
        for i in 4..8 {
            cells.insert(vec![i], 1.0 * delta);
        }
        let g = GridMeasure::from_cells(e, delta, 2.0, cells).unwrap();
        assert!((l2_norm_sq(&g) - (9.0 * 0.5 + 1.0 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn smoothed_norm_shortcut_matches_explicit() {
        let e = AlgebraBasis::full(2);
        let mut rng = stream_rng(21, 0, 0);
        let mut cells = BTreeMap::new();
        for _ in 0..300 {
            let c: Cell = (0..4).map(|_| rng.random_range(-4..=4)).collect();
            *cells.entry(c).or_insert(0.0) += rng.random::<f64>();
        }
        let g = GridMeasure::from_cells(e, 0.5, 2.0, cells).unwrap();
        let a = smoothed_l2_norm_sq(&g);
        let b = l2_norm_sq(&smooth_p_delta(&g));
        assert!((a - b).abs() < 1e-12 * b);
    }

    fn optimal_cover(points: &[Cell], r2: f64) -> usize {
        let covers = |a: &Cell, b: &Cell| -> bool {
            a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() <= r2
        };
        let n = points.len();
        let ball: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| covers(&points[i], &points[j])).collect()).collect();
        // lower bound: greedily pick uncovered points pairwise beyond 2r
        let lower = |uncovered: &[bool]| -> usize {
            let mut picked: Vec<usize> = Vec::new();
            for i in (0..n).filter(|&i| uncovered[i]) {
                if picked.iter().all(|&j| {
                    points[i].iter().zip(&points[j]).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() > 4.0 * r2
                }) {
                    picked.push(i);
                }
            }
            picked.len()
        };
        fn search(
            uncovered: &mut Vec<bool>,
            used: usize,
            best: &mut usize,
            ball: &[Vec<usize>],
            lower: &dyn Fn(&[bool]) -> usize,
        ) {
            let Some(first) = uncovered.iter().position(|&u| u) else {
                *best = (*best).min(used);
                return;
            };
            if used + lower(uncovered) >= *best {
                return;
            }
            for c in &ball[first] {
                let changed: Vec<usize> = ball[*c].iter().copied().filter(|&j| uncovered[j]).collect();
                for &j in &changed {
                    uncovered[j] = false;
                }
                search(uncovered, used + 1, best, ball, lower);
                for &j in &changed {
                    uncovered[j] = true;
                }
            }
        }
        let mut best = n;
        search(&mut vec![true; n], 0, &mut best, &ball, &lower);
        best
    }

    #[test]
    fn covering_examples() {
        let one = cellset(&[&[3, 4]]);
        assert_eq!(covering_number(&one, 0.1, 0.1), 1);
        let mut rng = stream_rng(22, 0, 0);
        let mut set = BTreeSet::new();
        while set.len() < 100 {
            set.insert(vec![rng.random_range(-10..=10i64), rng.random_range(-10..=10i64)]);
        }
        assert_eq!(covering_number(&set, 0.1, 0.1 * 2.0 * 10.0 * 2f64.sqrt()), 1);
        let rho_cells = 4.0;
        let greedy = covering_number(&set, 1.0, rho_cells);
        let points: Vec<Cell> = set.iter().cloned().collect();
        let opt = optimal_cover(&points, rho_cells * rho_cells);
        assert!(opt <= greedy && greedy <= 5 * opt, "greedy {greedy} opt {opt}");
    }

    fn brute_energy(a: &BTreeSet<Cell>, b: &BTreeSet<Cell>) -> u128 {
        let mut count = 0u128;
        for a1 in a {
            for a2 in a {
                for b1 in b {
                    for b2 in b {
                        if a1.iter().zip(b1).zip(a2.iter().zip(b2)).all(|((x, y), (z, w))| x + y == z + w) {
                            count += 1;
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn energy_examples() {
        for k in [1i64, 2, 5, 16, 32] {
            let ap: BTreeSet<Cell> = (0..k).map(|i| vec![3 * i, -i]).collect();
            let r = additive_energy(&ap, &ap, 1.0);
            let k = k as u128;
            assert_eq!(r.energy, (2 * k * k * k + k) / 3);
            if k <= 16 {
                assert_eq!(r.energy, brute_energy(&ap, &ap));
            }
        }
        // Sidon-like set: powers of two have only the forced coincidences
        let generic: BTreeSet<Cell> = (0..12).map(|i| vec![1i64 << i, 0]).collect();
        let r = additive_energy(&generic, &generic, 1.0);
        assert_eq!(r.energy, brute_energy(&generic, &generic));
        assert_eq!(r.energy, 2 * 144 - 12);
        let single = cellset(&[&[0, 0]]);
        let b: BTreeSet<Cell> = (0..7).map(|i| vec![i, i * i]).collect();
        let r = additive_energy(&single, &b, 1.0);
        assert_eq!(r.energy, 7);
        assert!(r.energy >= r.n_a.max(r.n_b) as u128);
    }

    fn int_real(rows: &[&[i64]]) -> RealMatrix {
        real(&rows.iter().map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()).collect::<Vec<_>>().iter().map(|r| r.as_slice()).collect::<Vec<_>>())
    }

    #[test]
    fn grid_convolutions() {
        let e = AlgebraBasis::full(2);
        let atoms = [
            int_real(&[&[1, 2], &[0, 1]]),
            int_real(&[&[0, -1], &[1, 0]]),
            int_real(&[&[2, 1], &[1, 1]]),
            int_real(&[&[1, 0], &[-3, 1]]),
            int_real(&[&[-1, 1], &[2, 0]]),
        ];
        let mu = uniform_real(atoms.to_vec());
        let nu = uniform_real(atoms.iter().rev().take(3).cloned().collect());
        let gm = discretize(&mu, &e, 1.0, 100.0).unwrap();
        let gn = discretize(&nu, &e, 1.0, 100.0).unwrap();
        let prod = mult_convolve_grid(&gm, &gn).unwrap();
        let oracle = discretize(&mu.convolve_mult(&nu).unwrap(), &e, 1.0, 100.0).unwrap();
        assert_eq!(prod.cells().len(), oracle.cells().len());
        for (c, m) in oracle.cells() {
            assert!((prod.cells()[c] - m).abs() < 1e-15);
        }
        let diff = diff_convolve_grid(&gm, &gn).unwrap();
        let oracle = discretize(&mu.convolve_diff(&nu).unwrap(), &e, 1.0, 100.0).unwrap();
        for (c, m) in oracle.cells() {
            assert!((diff.cells()[c] - m).abs() < 1e-15);
        }
        let id = discretize(&FiniteMeasure::dirac(RealMatrix::identity(2)), &e, 1.0, 100.0).unwrap();
        let left = mult_convolve_grid(&id, &gm).unwrap();
        assert_eq!(left.cells(), gm.cells());
        let self_diff = diff_convolve_grid(&gm, &gm).unwrap();
        let sq: f64 = gm.cells().values().map(|m| m * m).sum();
        assert!(self_diff.cells()[&vec![0, 0, 0, 0]] >= sq - 1e-15);
        // out-of-box mass is reported and conserved
        let small = discretize(&mu, &e, 1.0, 3.0).unwrap();
        let p = mult_convolve_grid(&small, &small).unwrap();
        assert!(p.dropped() > 0.0);
        assert!((p.total() + p.dropped() - small.total().powi(2)).abs() < 1e-12);
        assert!(mult_convolve_grid(&gm, &discretize(&mu, &e, 0.5, 100.0).unwrap()).is_err());
    }

    #[test]
    fn fourier_examples() {
        let e = AlgebraBasis::full(2);
        let mu = uniform_real(vec![int_real(&[&[1, 2], &[0, 1]]), int_real(&[&[-1, -2], &[0, -1]]), RealMatrix::zero(2)]);
        let gm = discretize(&mu, &e, 0.25, 10.0).unwrap();
        assert!((fourier_on_e(&gm, &[0.0; 4]) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let xi = [0.3, -1.7, 0.11, 2.5];
        assert!(fourier_on_e(&gm, &xi).im.abs() < 1e-12);
        let dirac = discretize(&FiniteMeasure::dirac(RealMatrix::zero(2)), &e, 0.25, 1.0).unwrap();
        assert_eq!(fourier_on_e(&dirac, &xi), Complex64::new(1.0, 0.0));
    }

    fn small_params(delta: f64, eps: f64, k_max: usize) -> FlattenParams {
        FlattenParams { delta, eps, k_max, particles: 1000, exact_cap: 1 << 20, cell_budget: 1_000_000, seed: 3 }
    }

    #[test]
    fn flatten_identity_dies_at_two() {
        let e = AlgebraBasis::full(2);
        let t = flatten_iterate(&FiniteMeasure::dirac(RealMatrix::identity(2)), &e, &small_params(0.01, 0.5, 3)).unwrap();
        let masses: Vec<f64> = t.records.iter().map(|r| r.eta_mass).collect();
        assert_eq!(masses, vec![1.0, 0.0, 0.0]);
        assert!(t.records.iter().all(|r| r.exact));
    }

    #[test]
    fn flatten_two_atoms_matches_exact_trace() {
        let e = AlgebraBasis::full(2);
        let a = real(&[&[2.0, 0.0], &[0.0, 3.0]]);
        let b = real(&[&[5.0, 0.0], &[0.0, 7.0]]);
        let mu = uniform_real(vec![a, b]);
        let p = small_params(0.01, 0.5, 3);
        let t = flatten_iterate(&mu, &e, &p).unwrap();
        // oracle: exact rational recursion on FiniteMeasure
        let mut cur = mu.clone();
        for (k, rec) in t.records.iter().enumerate() {
            let thr = p.delta.powf(2f64.powi(k as i32 + 1) * p.eps);
            let eta = cur.restrict(|x| crate::algebra::det_e(&e, x).unwrap().abs() > thr);
            let want = eta.total().to_f64().unwrap();
            assert!((rec.eta_mass - want).abs() < 1e-12, "k={} {} vs {}", k + 1, rec.eta_mass, want);
            let pp = eta.convolve_mult(&eta).unwrap();
            cur = pp.convolve_diff(&pp).unwrap();
        }
        assert_eq!(t.records[0].eta_mass, 1.0);
        assert!((t.records[1].eta_mass - 0.625).abs() < 1e-15);
        assert!(t.to_csv().starts_with("k,eta_mass,l2_eta,l2_mu_next,dropped_mass\n"));
    }

    #[test]
    fn flatten_sampled_is_seeded() {
        let e = AlgebraBasis::full(2);
        let mu = uniform_real(vec![
            real(&[&[1.0, 0.2], &[0.0, 1.0]]),
            real(&[&[0.9, 0.0], &[0.3, 1.1]]),
            real(&[&[1.2, -0.1], &[0.1, 0.8]]),
        ]);
        let mut p = small_params(0.05, 0.3, 2);
        p.exact_cap = 10;
        let t1 = flatten_iterate(&mu, &e, &p).unwrap();
        let t2 = flatten_iterate(&mu, &e, &p).unwrap();
        assert_eq!(t1.records, t2.records);
        assert!(!t1.records[0].exact);
        p.cell_budget = 5;
        assert!(matches!(flatten_iterate(&mu, &e, &p), Err(Error::GridBudgetExceeded { .. })));
    }

    fn rat(d: usize, v: &[(i64, i64)]) -> RatMatrix {
        RatMatrix::from_ratios(d, v).unwrap()
    }

    #[test]
    fn ordre_examples() {
        let a = rat(2, &[(1, 2), (1, 3), (-2, 1), (3, 4)]);
        let xi = rat(2, &[(1, 5), (2, 7), (0, 1), (-1, 3)]);
        for (l, m) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
            let r = ordre_check(&FiniteMeasure::dirac(a.clone()), l, m, &xi, 1 << 20).unwrap();
            assert!((r.lhs - 1.0).abs() < 1e-12);
            assert!((r.rhs - 1.0).abs() < 1e-12);
            assert!(r.holds);
        }
        let nu = FiniteMeasure::new(
            2,
            vec![
                (a.clone(), BigRational::new(1.into(), 2.into())),
                (rat(2, &[(1, 1), (0, 1), (1, 3), (1, 1)]), BigRational::new(1.into(), 3.into())),
                (rat(2, &[(-1, 4), (2, 1), (0, 1), (5, 6)]), BigRational::new(1.into(), 6.into())),
            ],
        )
        .unwrap();
        for l in 1..=2 {
            let r = ordre_check(&nu, l, 1, &xi, 1 << 20).unwrap();
            let direct = fourier_rat(&nu, &xi).norm().powi(2 * l as i32);
            assert!((r.rhs - direct).abs() < 1e-12);
            assert!(r.holds);
        }
        let r = ordre_check(&nu, 2, 2, &xi, 1 << 20).unwrap();
        assert!(r.holds, "{r:?}");
    }

    fn int(rows: &[&[i64]]) -> IntMatrix {
        IntMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn specholder_examples() {
        let w5: Vec<TorusPoint> = (0..5).map(|k| TorusPoint::from_ratios(&[(k, 5), (2 * k % 5, 5)]).unwrap()).collect();
        let id = FiniteMeasure::dirac(IntMatrix::identity(2));
        let r = specholder_check(&id, &w5, &[1, 2], 1, 0.9, 1 << 20).unwrap();
        assert!(r.applicable);
        assert_eq!(r.mass_of_a, 1.0);
        assert!(r.holds);

        // two-atom μ, ν uniform on the line {(k, 2k)/5}: 9-term enumeration
        let mu = FiniteMeasure::uniform(vec![int(&[&[1, 0], &[0, 1]]), int(&[&[1, 5], &[0, 1]])]).unwrap();
        let a0 = [2, -1];
        let r = specholder_check(&mu, &w5, &a0, 1, 0.9, 1 << 20).unwrap();
        assert!(r.applicable);
        let s = mu.add_power(1, 1 << 20).unwrap();
        let rho = s.convolve_diff(&s).unwrap();
        assert_eq!(rho.len(), 3);
        let mut manual = 0.0;
        for (g, w) in rho.atoms() {
            let b = frequency(&a0, g).unwrap();
            let v: Complex64 = w5.iter().map(|x| character(&b, x)).sum::<Complex64>() / 5.0;
            if v.norm() >= r.bound {
                manual += w.to_f64().unwrap();
            }
        }
        assert_eq!(r.mass_of_a, manual);
        assert!(r.holds);

        let haarish: Vec<TorusPoint> = (0..7).map(|k| TorusPoint::from_ratios(&[(k, 7), (3 * k % 7, 7)]).unwrap()).collect();
        let r = specholder_check(&mu, &haarish, &[1, 0], 1, 0.9, 1 << 20).unwrap();
        assert!(!r.applicable && r.holds);
    }
}
