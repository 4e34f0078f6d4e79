//! Reductions mod `p`, the finite image `π_p(Γ)`, the averaging operator
//! `T_μ` on mean-zero functions, and equidistribution times.

use std::collections::{BTreeSet, HashMap, VecDeque};

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::ToPrimitive;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::IntMatrix;
use crate::mc::{linear_fit, stream_rng};
use crate::measure::FiniteMeasure;

const DOMAIN_GAP: u64 = 0x4741_5053;
pub const GAP_TOL: f64 = 1e-10;
pub const GAP_MAX_ITER: usize = 10_000;
pub const DEFAULT_GROUP_CAP: usize = 1_000_000;

/// Trial division.
pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut f = 2u64;
    while f * f <= p {
        if p.is_multiple_of(f) {
            return false;
        }
        f += 1;
    }
    true
}

/// A `d × d` matrix over `Z/p`, entries in `[0, p)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModMatrix {
    p: u64,
    dim: usize,
    entries: Vec<u64>,
}

impl ModMatrix {
    pub fn identity(dim: usize, p: u64) -> Self {
        let mut entries = vec![0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1 % p;
        }
        ModMatrix { p, dim, entries }
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[u64] {
        &self.entries
    }

    pub fn mul(&self, other: &ModMatrix) -> ModMatrix {
        let d = self.dim;
        let p = self.p as u128;
        let mut entries = vec![0u64; d * d];
        for i in 0..d {
            for j in 0..d {
                let s: u128 = (0..d).map(|k| self.entries[i * d + k] as u128 * other.entries[k * d + j] as u128).sum();
                entries[i * d + j] = (s % p) as u64;
            }
        }
        ModMatrix { p: self.p, dim: d, entries }
    }

    /// Determinant by elimination over `F_p`.
    pub fn det(&self) -> u64 {
        let d = self.dim;
        let p = self.p;
        let mut a = self.entries.clone();
        let mut det = 1u64;
        for col in 0..d {
            let Some(piv) = (col..d).find(|&r| a[r * d + col] != 0) else {
                return 0;
            };
            if piv != col {
                for j in 0..d {
                    a.swap(piv * d + j, col * d + j);
                }
                det = (p - det) % p;
            }
            let pv = a[col * d + col];
            det = mulmod(det, pv, p);
            let inv = powmod(pv, p - 2, p);
            for r in col + 1..d {
                let f = mulmod(a[r * d + col], inv, p);
                if f == 0 {
                    continue;
                }
                for j in col..d {
                    let sub = mulmod(f, a[col * d + j], p);
                    a[r * d + j] = (a[r * d + j] + p - sub) % p;
                }
            }
        }
        det
    }

    /// Inverse by Gauss–Jordan over `F_p`.
    pub fn inverse(&self) -> Result<ModMatrix> {
        let d = self.dim;
        let p = self.p;
        let w = 2 * d;
        let mut a = vec![0u64; d * w];
        for i in 0..d {
            a[i * w..i * w + d].copy_from_slice(&self.entries[i * d..(i + 1) * d]);
            a[i * w + d + i] = 1 % p;
        }
        for col in 0..d {
            let piv = (col..d).find(|&r| a[r * w + col] != 0).ok_or(Error::Singular)?;
            for j in 0..w {
                a.swap(piv * w + j, col * w + j);
            }
            let inv = powmod(a[col * w + col], p - 2, p);
            for j in 0..w {
                a[col * w + j] = mulmod(a[col * w + j], inv, p);
            }
            for r in 0..d {
                if r == col || a[r * w + col] == 0 {
                    continue;
                }
                let f = a[r * w + col];
                for j in 0..w {
                    let sub = mulmod(f, a[col * w + j], p);
                    a[r * w + j] = (a[r * w + j] + p - sub) % p;
                }
            }
        }
        let entries = (0..d).flat_map(|i| a[i * w + d..(i + 1) * w].to_vec()).collect();
        Ok(ModMatrix { p, dim: d, entries })
    }
}

fn mulmod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

fn powmod(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut r = 1 % p;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            r = mulmod(r, b, p);
        }
        b = mulmod(b, b, p);
        e >>= 1;
    }
    r
}

/// `π_p(g)`.
pub fn reduce_mod(g: &IntMatrix, p: u64) -> Result<ModMatrix> {
    if !is_prime(p) {
        return Err(Error::NotPrime { p });
    }
    let pb = BigInt::from(p);
    let entries = g
        .entries()
        .iter()
        .map(|e| e.mod_floor(&pb).to_u64().expect("residue fits"))
        .collect();
    Ok(ModMatrix { p, dim: g.dim(), entries })
}

/// The finite group generated by some matrices mod `p`, elements sorted.
#[derive(Clone, Debug)]
pub struct FiniteGroupTable {
    p: u64,
    elements: Vec<ModMatrix>,
    index: HashMap<ModMatrix, usize>,
    gen_action: Vec<Vec<u32>>,
}

impl FiniteGroupTable {
    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[ModMatrix] {
        &self.elements
    }

    pub fn position(&self, g: &ModMatrix) -> Option<usize> {
        self.index.get(g).copied()
    }

    /// `gen_action[i][j]` is the position of `s_i · elements[j]`.
    pub fn gen_action(&self) -> &[Vec<u32>] {
        &self.gen_action
    }

    pub fn identity_position(&self) -> usize {
        let d = self.elements[0].dim;
        self.index[&ModMatrix::identity(d, self.p)]
    }

    /// Left multiplication by `g` as a permutation of positions.
    pub fn action(&self, g: &ModMatrix) -> Result<Vec<u32>> {
        self.elements
            .iter()
            .map(|x| {
                self.position(&g.mul(x))
                    .map(|i| i as u32)
                    .ok_or_else(|| Error::InvalidArgument("matrix does not act on the table".into()))
            })
            .collect()
    }
}

/// BFS closure of `gens ∪ gens^{-1}` from the identity.
pub fn closure(gens: &[ModMatrix], p: u64, cap: usize) -> Result<FiniteGroupTable> {
    if !is_prime(p) {
        return Err(Error::NotPrime { p });
    }
    let d = gens.first().map(ModMatrix::dim).ok_or_else(|| Error::InvalidArgument("no generators".into()))?;
    if gens.iter().any(|g| g.p != p || g.dim != d) {
        return Err(Error::InvalidArgument("generators disagree on p or dimension".into()));
    }
    let mut moves: Vec<ModMatrix> = gens.to_vec();
    for g in gens {
        moves.push(g.inverse()?);
    }
    let id = ModMatrix::identity(d, p);
    let mut seen: BTreeSet<ModMatrix> = BTreeSet::from([id.clone()]);
    let mut queue = VecDeque::from([id]);
    while let Some(x) = queue.pop_front() {
        for s in &moves {
            let y = s.mul(&x);
            if !seen.contains(&y) {
                if seen.len() >= cap {
                    return Err(Error::CapExceeded { cap });
                }
                seen.insert(y.clone());
                queue.push_back(y);
            }
        }
    }
    let elements: Vec<ModMatrix> = seen.into_iter().collect();
    let index: HashMap<ModMatrix, usize> = elements.iter().cloned().enumerate().map(|(i, g)| (g, i)).collect();
    let mut table = FiniteGroupTable { p, elements, index, gen_action: Vec::new() };
    table.gen_action = gens.iter().map(|g| table.action(g)).collect::<Result<_>>()?;
    Ok(table)
}

/// `π_p(Γ_μ)` for the support of `μ`.
pub fn group_of(mu: &FiniteMeasure<IntMatrix>, p: u64, cap: usize) -> Result<FiniteGroupTable> {
    let gens: Vec<ModMatrix> = mu.points().map(|g| reduce_mod(g, p)).collect::<Result<_>>()?;
    closure(&gens, p, cap)
}

/// `(μ + μ̌)/2`, where `μ̌` is the pushforward under inversion. For `μ`
/// uniform on `S` with `S ∩ S^{-1} = ∅` this is uniform on `S ∪ S^{-1}`.
pub fn symmetrize(mu: &FiniteMeasure<IntMatrix>) -> Result<FiniteMeasure<IntMatrix>> {
    let half = num_rational::BigRational::new(1.into(), 2.into());
    let mut atoms = Vec::with_capacity(2 * mu.len());
    for (g, w) in mu.atoms() {
        atoms.push((g.clone(), w * &half));
        atoms.push((g.inverse()?, w * &half));
    }
    FiniteMeasure::new(mu.dim(), atoms)
}

/// Step permutations and weights of `μ` acting on the table.
fn steps(mu: &FiniteMeasure<IntMatrix>, table: &FiniteGroupTable) -> Result<Vec<(Vec<u32>, f64)>> {
    mu.atoms()
        .map(|(g, w)| Ok((table.action(&reduce_mod(g, table.p)?)?, w.to_f64().unwrap_or(0.0))))
        .collect()
}

/// `(Tf)(x) = Σ μ(g) f(g x)`.
fn apply_t(steps: &[(Vec<u32>, f64)], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for (perm, w) in steps {
        for (x, &gx) in perm.iter().enumerate() {
            out[x] += w * f[gx as usize];
        }
    }
    out
}

/// `(T*f)(y) = Σ μ(g) f(g^{-1} y)`.
fn apply_t_adjoint(steps: &[(Vec<u32>, f64)], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for (perm, w) in steps {
        for (x, &gx) in perm.iter().enumerate() {
            out[gx as usize] += w * f[x];
        }
    }
    out
}

fn deflate_and_normalize(v: &mut [f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    /// `‖T_μ‖` on `l²_0`.
    pub norm: f64,
    pub gap: f64,
    pub iterations: usize,
}

/// Power iteration for the top singular value of `T_μ` on mean-zero
/// functions, through `T*T`.
pub fn operator_gap(mu: &FiniteMeasure<IntMatrix>, table: &FiniteGroupTable, seed: u64) -> Result<GapReport> {
    let n = table.order();
    if n == 1 {
        return Ok(GapReport { norm: 0.0, gap: 1.0, iterations: 0 });
    }
    let st = steps(mu, table)?;
    let mut rng = stream_rng(seed, DOMAIN_GAP, table.p);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    deflate_and_normalize(&mut v);
    let mut last = f64::NAN;
    for it in 1..=GAP_MAX_ITER {
        let mut w = apply_t_adjoint(&st, &apply_t(&st, &v));
        let sigma_sq = deflate_and_normalize(&mut w);
        if sigma_sq == 0.0 {
            return Ok(GapReport { norm: 0.0, gap: 1.0, iterations: it });
        }
        if (sigma_sq - last).abs() <= GAP_TOL * sigma_sq.max(1e-300) {
            let norm = sigma_sq.sqrt();
            return Ok(GapReport { norm, gap: 1.0 - norm, iterations: it });
        }
        last = sigma_sq;
        v = w;
    }
    Err(Error::NonConvergence { iterations: GAP_MAX_ITER, last: last.sqrt() })
}

/// Largest order [`dense_norm`] accepts.
pub const DENSE_ORDER_CAP: usize = 4096;

/// `‖T_μ‖` on mean-zero functions from a full SVD of the projected operator.
/// Cross-check for [`operator_gap`] on small groups.
pub fn dense_norm(mu: &FiniteMeasure<IntMatrix>, table: &FiniteGroupTable) -> Result<f64> {
    let n = table.order();
    if n > DENSE_ORDER_CAP {
        return Err(Error::CapExceeded { cap: DENSE_ORDER_CAP });
    }
    let st = steps(mu, table)?;
    let mut t = DMatrix::<f64>::zeros(n, n);
    for (perm, w) in &st {
        for (x, &gx) in perm.iter().enumerate() {
            t[(x, gx as usize)] += w;
        }
    }
    let proj = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let restricted = &proj * t * &proj;
    Ok(restricted.singular_values().iter().copied().fold(0.0, f64::max))
}

/// Exact law of `π_p(X_n)` with `X_0 = I`.
#[derive(Clone, Debug)]
pub struct DistributionTrace {
    pub max_atom: Vec<f64>,
    /// `|Σ mass − 1|` after each step.
    pub sum_error: Vec<f64>,
}

pub fn distribution_trace(mu: &FiniteMeasure<IntMatrix>, table: &FiniteGroupTable, n: usize) -> Result<DistributionTrace> {
    let st = steps(mu, table)?;
    let mut dist = vec![0.0; table.order()];
    dist[table.identity_position()] = 1.0;
    let mut max_atom = vec![1.0];
    let mut sum_error = vec![0.0];
    for _ in 0..n {
        let mut next = vec![0.0; dist.len()];
        for (perm, w) in &st {
            for (x, &gx) in perm.iter().enumerate() {
                next[gx as usize] += w * dist[x];
            }
        }
        dist = next;
        max_atom.push(dist.iter().copied().fold(0.0, f64::max));
        sum_error.push((dist.iter().sum::<f64>() - 1.0).abs());
    }
    Ok(DistributionTrace { max_atom, sum_error })
}

/// `max_a μ^{*n}(π_p^{-1}(a))`.
pub fn max_atom_mod_p(mu: &FiniteMeasure<IntMatrix>, table: &FiniteGroupTable, n: usize) -> Result<f64> {
    Ok(*distribution_trace(mu, table, n)?.max_atom.last().expect("n + 1 entries"))
}

/// First `n ≤ n_cap` with max atom `≤ 2/|G|`.
pub fn uniformization_time(mu: &FiniteMeasure<IntMatrix>, table: &FiniteGroupTable, n_cap: usize) -> Result<Option<usize>> {
    let st = steps(mu, table)?;
    let threshold = 2.0 / table.order() as f64;
    let mut dist = vec![0.0; table.order()];
    dist[table.identity_position()] = 1.0;
    for n in 0..=n_cap {
        if dist.iter().copied().fold(0.0, f64::max) <= threshold {
            return Ok(Some(n));
        }
        let mut next = vec![0.0; dist.len()];
        for (perm, w) in &st {
            for (x, &gx) in perm.iter().enumerate() {
                next[gx as usize] += w * dist[x];
            }
        }
        dist = next;
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapRow {
    pub p: u64,
    pub group_order: usize,
    pub gap: f64,
    pub iterations: usize,
    pub uniformization_time: Option<usize>,
    pub max_sum_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapSweep {
    pub rows: Vec<GapRow>,
    /// `max_p T_p / log p`.
    pub c_hat: f64,
    /// Least-squares slope of `T_p` against `log p`.
    pub slope: Option<f64>,
}

impl GapSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("p,group_order,gap,uniformization_time\n");
        for r in &self.rows {
            let t = r.uniformization_time.map_or_else(|| "NA".to_string(), |t| t.to_string());
            s.push_str(&format!("{},{},{:.12},{}\n", r.p, r.group_order, r.gap, t));
        }
        s
    }
}

/// Gap and uniformization time per prime, primes in parallel.
pub fn gap_sweep(mu: &FiniteMeasure<IntMatrix>, primes: &[u64], cap: usize, n_cap: usize, seed: u64) -> Result<GapSweep> {
    let rows: Vec<GapRow> = primes
        .par_iter()
        .map(|&p| {
            let table = group_of(mu, p, cap)?;
            let gap = operator_gap(mu, &table, seed)?;
            let time = uniformization_time(mu, &table, n_cap)?;
            let horizon = time.unwrap_or(n_cap);
            let trace = distribution_trace(mu, &table, horizon)?;
            let max_sum_error = trace.sum_error.iter().copied().fold(0.0, f64::max);
            Ok(GapRow {
                p,
                group_order: table.order(),
                gap: gap.gap,
                iterations: gap.iterations,
                uniformization_time: time,
                max_sum_error,
            })
        })
        .collect::<Result<_>>()?;
    let timed: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.uniformization_time.map(|t| ((r.p as f64).ln(), t as f64)))
        .collect();
    let c_hat = timed.iter().map(|(l, t)| t / l).fold(0.0, f64::max);
    let (x, y): (Vec<f64>, Vec<f64>) = timed.into_iter().unzip();
    let slope = linear_fit(&x, &y).map(|(s, _)| s);
    Ok(GapSweep { rows, c_hat, slope })
}
