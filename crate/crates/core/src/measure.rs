//! Finitely supported measures on matrices.
//!
//! Atoms live in a `BTreeMap` keyed by the matrix, so iteration order is the
//! lexicographic order of entries and every convolution is reproducible.
//! Weights are exact rationals; sub-probability measures are allowed.

use std::collections::BTreeMap;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{log_operator_norm, IntMatrix, MatrixPoint, RealMatrix};

/// Finitely supported (sub-)probability measure on matrices of one dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteMeasure<P: MatrixPoint> {
    dim: usize,
    atoms: BTreeMap<P, BigRational>,
    total: BigRational,
}

impl<P: MatrixPoint> FiniteMeasure<P> {
    /// Builds a measure, merging repeated points. Zero weights are dropped.
    pub fn new(dim: usize, atoms: impl IntoIterator<Item = (P, BigRational)>) -> Result<Self> {
        let mut map: BTreeMap<P, BigRational> = BTreeMap::new();
        for (p, w) in atoms {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.dim() });
            }
            if w.is_negative() {
                return Err(Error::InvalidMeasure(format!("negative weight {w}")));
            }
            if w.is_zero() {
                continue;
            }
            *map.entry(p).or_insert_with(BigRational::zero) += w;
        }
        let total: BigRational = map.values().sum();
        if total > BigRational::one() {
            return Err(Error::InvalidMeasure(format!("total mass {total} exceeds 1")));
        }
        Ok(FiniteMeasure { dim, atoms: map, total })
    }

    fn from_map(dim: usize, atoms: BTreeMap<P, BigRational>) -> Self {
        let total = atoms.values().sum();
        FiniteMeasure { dim, atoms, total }
    }

    pub fn dirac(p: P) -> Self {
        let dim = p.dim();
        let mut atoms = BTreeMap::new();
        atoms.insert(p, BigRational::one());
        FiniteMeasure { dim, atoms, total: BigRational::one() }
    }

    /// Uniform probability on the given points (repeats add weight).
    pub fn uniform(points: Vec<P>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidMeasure("no atoms".into()))?;
        let dim = first.dim();
        let w = BigRational::new(BigInt::one(), BigInt::from(points.len()));
        Self::new(dim, points.into_iter().map(|p| (p, w.clone())))
    }

    /// Empirical measure of a sample: each draw carries weight `1/len`.
    pub fn empirical(samples: Vec<P>) -> Result<Self> {
        Self::uniform(samples)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total(&self) -> &BigRational {
        &self.total
    }

    pub fn is_probability(&self) -> bool {
        self.total.is_one()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Atoms in canonical (lexicographic) order.
    pub fn atoms(&self) -> impl Iterator<Item = (&P, &BigRational)> {
        self.atoms.iter()
    }

    pub fn points(&self) -> impl Iterator<Item = &P> {
        self.atoms.keys()
    }

    pub fn weight(&self, p: &P) -> BigRational {
        self.atoms.get(p).cloned().unwrap_or_else(BigRational::zero)
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        Ok(())
    }

    fn pushforward(&self, other: &Self, f: impl Fn(&P, &P) -> P) -> BTreeMap<P, BigRational> {
        let mut out: BTreeMap<P, BigRational> = BTreeMap::new();
        for (x, wx) in &self.atoms {
            for (y, wy) in &other.atoms {
                *out.entry(f(x, y)).or_insert_with(BigRational::zero) += wx * wy;
            }
        }
        out
    }

    /// `μ * ν`: pushforward of `μ ⊗ ν` under `(x, y) ↦ xy`.
    pub fn convolve_mult(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self::from_map(self.dim, self.pushforward(other, |x, y| x.mul_point(y))))
    }

    /// `μ ⊞ ν`: pushforward under `(x, y) ↦ x + y`.
    pub fn convolve_add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self::from_map(self.dim, self.pushforward(other, |x, y| x.add_point(y))))
    }

    /// `μ ⊟ ν`: pushforward under `(x, y) ↦ x − y`.
    pub fn convolve_diff(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self::from_map(self.dim, self.pushforward(other, |x, y| x.sub_point(y))))
    }

    /// Exact `μ^{*n}`, failing as soon as the support exceeds `atom_cap`.
    pub fn power_exact(&self, n: usize, atom_cap: usize) -> Result<Self> {
        let mut acc = Self::dirac(P::identity_like(self.dim));
        for step in 1..=n {
            acc = self.convolve_mult(&acc)?;
            if acc.len() > atom_cap {
                return Err(Error::AtomCapExceeded { at_step: step, atoms: acc.len() });
            }
        }
        Ok(acc)
    }

    /// Exact additive power `μ^{⊞k}` (`k = 0` gives `δ_0`).
    pub fn add_power(&self, k: usize, atom_cap: usize) -> Result<Self> {
        let mut acc = Self::dirac(P::zero_like(self.dim));
        for step in 1..=k {
            acc = acc.convolve_add(self)?;
            if acc.len() > atom_cap {
                return Err(Error::AtomCapExceeded { at_step: step, atoms: acc.len() });
            }
        }
        Ok(acc)
    }

    /// Restriction to the atoms satisfying `keep` (a sub-probability measure).
    pub fn restrict(&self, keep: impl Fn(&P) -> bool) -> Self {
        let atoms = self
            .atoms
            .iter()
            .filter(|(p, _)| keep(p))
            .map(|(p, w)| (p.clone(), w.clone()))
            .collect();
        Self::from_map(self.dim, atoms)
    }

    /// Pushforward under an arbitrary map of points.
    pub fn map_points<Q: MatrixPoint>(&self, f: impl Fn(&P) -> Q) -> FiniteMeasure<Q> {
        let mut out: BTreeMap<Q, BigRational> = BTreeMap::new();
        let mut dim = self.dim;
        for (p, w) in &self.atoms {
            let q = f(p);
            dim = q.dim();
            *out.entry(q).or_insert_with(BigRational::zero) += w;
        }
        FiniteMeasure::from_map(dim, out)
    }

    /// Sampler over the atoms in canonical order.
    pub fn sampler(&self) -> Result<StepSampler<P>> {
        StepSampler::new(self)
    }
}

impl FiniteMeasure<IntMatrix> {
    /// `μ̃_n`: every atom multiplied entrywise by `e^{−λ̂ n}`.
    pub fn rescale(&self, lambda1_hat: f64, n: usize) -> FiniteMeasure<RealMatrix> {
        let log_factor = -lambda1_hat * n as f64;
        self.map_points(|g| g.to_real_scaled(log_factor))
    }

    /// `Σ w_i ‖g_i‖^ε` with the spectral norm.
    pub fn exponential_moment(&self, eps: f64) -> f64 {
        self.atoms
            .iter()
            .map(|(g, w)| w.to_f64().unwrap_or(0.0) * (eps * log_operator_norm(g)).exp())
            .sum()
    }

    /// Support as a list, in canonical order.
    pub fn support(&self) -> Vec<IntMatrix> {
        self.atoms.keys().cloned().collect()
    }

    /// Parses `{"dim": d, "atoms": [{"matrix": [[...]], "weight": "p/q"}]}`.
    pub fn from_json(value: &Value) -> Result<Self> {
        let dim = value
            .get("dim")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::InvalidMeasure("missing integer field 'dim'".into()))?
            as usize;
        let atoms = value
            .get("atoms")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidMeasure("missing array field 'atoms'".into()))?;
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("measure has no atoms".into()));
        }
        let mut parsed = Vec::with_capacity(atoms.len());
        for atom in atoms {
            let m = atom
                .get("matrix")
                .ok_or_else(|| Error::InvalidMeasure("atom without 'matrix'".into()))?;
            let g = IntMatrix::from_json(m)?;
            let w = match atom.get("weight") {
                Some(Value::String(s)) => parse_weight(s)?,
                Some(Value::Number(n)) if n.as_u64().is_some() => {
                    BigRational::from_integer(BigInt::from(n.as_u64().unwrap()))
                }
                _ => return Err(Error::InvalidMeasure("atom weight must be a \"p/q\" string".into())),
            };
            parsed.push((g, w));
        }
        Self::new(dim, parsed)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "dim": self.dim,
            "atoms": self.atoms.iter().map(|(g, w)| json!({
                "matrix": g.to_json(),
                "weight": w.to_string(),
            })).collect::<Vec<_>>(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&value)
    }

    /// One random product `g_n ⋯ g_1`.
    pub fn sample_product<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<IntMatrix> {
        Ok(self.sampler()?.product(n, rng))
    }
}

/// Parses `"p/q"` or `"p"` into an exact rational.
pub fn parse_weight(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::InvalidMeasure(format!("bad weight '{s}'"));
    match s.split_once('/') {
        Some((p, q)) => {
            let p: BigInt = p.trim().parse().map_err(|_| bad())?;
            let q: BigInt = q.trim().parse().map_err(|_| bad())?;
            if q.is_zero() {
                return Err(bad());
            }
            Ok(BigRational::new(p, q))
        }
        None => Ok(BigRational::from_integer(s.parse().map_err(|_| bad())?)),
    }
}

/// Inverse-CDF sampler over the atoms of a probability measure.
#[derive(Clone, Debug)]
pub struct StepSampler<P: MatrixPoint> {
    points: Vec<P>,
    cdf: Vec<f64>,
}

impl<P: MatrixPoint> StepSampler<P> {
    pub fn new(mu: &FiniteMeasure<P>) -> Result<Self> {
        if !mu.is_probability() {
            return Err(Error::NotProbability { total: mu.total().to_string() });
        }
        let mut points = Vec::with_capacity(mu.len());
        let mut cdf = Vec::with_capacity(mu.len());
        let mut acc = BigRational::zero();
        for (p, w) in mu.atoms() {
            acc += w;
            points.push(p.clone());
            cdf.push(acc.to_f64().expect("weight to f64"));
        }
        *cdf.last_mut().expect("nonempty") = 1.0;
        Ok(StepSampler { points, cdf })
    }

    pub fn points(&self) -> &[P] {
        &self.points
    }

    /// Index of one step drawn by inverse CDF.
    pub fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.points.len() == 1 {
            return 0;
        }
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.points.len() - 1)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> &P {
        &self.points[self.draw_index(rng)]
    }

    /// `g_n ⋯ g_1`, each new step multiplied on the left.
    pub fn product<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> P {
        let dim = self.points[0].dim();
        let mut g = P::identity_like(dim);
        for _ in 0..n {
            g = self.draw(rng).mul_point(&g);
        }
        g
    }
}
