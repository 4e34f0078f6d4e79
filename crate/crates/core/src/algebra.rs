//! The real algebra `E ⊂ Mat_d(R)` generated by the support of a walk.
//!
//! `E` carries the trace pairing `⟨a, b⟩ = tr(aᵀb)` and an orthonormal basis.
//! `det_E(a)` is the determinant of `x ↦ ax` on `E`; the sets `S_E(ρ)` of
//! badly invertible and `G_E(K)` of well invertible elements are tested in
//! those coordinates.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{singular_values, IntMatrix, RealMatrix};
use crate::mc::{par_collect, stream_rng};
use crate::measure::FiniteMeasure;

/// Relative residual below which a matrix counts as a member of `E`.
pub const MEMBERSHIP_TOL: f64 = 1e-6;
/// Default proximality exponent: `σ_i` is large if `σ_i/σ_1 ≥ e^{−nω}`.
pub const DEFAULT_OMEGA: f64 = 0.05;
/// Median gap ratio under which the proximal dimension is flagged.
pub const LOW_CONFIDENCE_RATIO: f64 = 10.0;

const DOMAIN_PROXIMAL: u64 = 0x5052_4f58;

/// Orthonormal basis of `E` under the trace pairing.
#[derive(Clone, Debug)]
pub struct AlgebraBasis {
    ambient_dim: usize,
    basis: Vec<RealMatrix>,
}

/// Gram–Schmidt residual of `x` against an orthonormal family.
fn residual(basis: &[RealMatrix], x: &RealMatrix) -> RealMatrix {
    let mut r = x.clone();
    for _ in 0..2 {
        for b in basis {
            r = r.sub(&b.scale(b.pairing(&r)));
        }
    }
    r
}

/// Spans the algebra generated by `support`: start from `I` and the
/// generators, multiply on the right by generators until no new direction
/// survives Gram–Schmidt at relative tolerance `tol`.
pub fn generate_algebra(support: &[IntMatrix], tol: f64) -> Result<AlgebraBasis> {
    let d = support
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty support".into()))?
        .dim();
    if support.iter().any(|g| g.dim() != d) {
        return Err(Error::InvalidArgument("support dimensions differ".into()));
    }
    let gens: Vec<RealMatrix> = support.iter().map(|g| g.to_real()).collect();
    let mut basis: Vec<RealMatrix> = Vec::new();
    let try_add = |basis: &mut Vec<RealMatrix>, x: &RealMatrix| -> bool {
        let n = x.frobenius();
        if n == 0.0 || basis.len() == d * d {
            return false;
        }
        let x = x.scale(1.0 / n);
        let r = residual(basis, &x);
        let rn = r.frobenius();
        if rn > tol {
            basis.push(r.scale(1.0 / rn));
            true
        } else {
            false
        }
    };
    try_add(&mut basis, &RealMatrix::identity(d));
    for g in &gens {
        try_add(&mut basis, g);
    }
    let mut frontier = 0;
    while frontier < basis.len() && basis.len() < d * d {
        let b = basis[frontier].clone();
        for g in &gens {
            try_add(&mut basis, &b.mul(g));
        }
        frontier += 1;
    }
    let dim_e = basis.len();
    if dim_e == d * d {
        basis = (0..d)
            .flat_map(|i| (0..d).map(move |j| RealMatrix::unit(d, i, j)))
            .collect();
    } else if dim_e == 1 {
        basis = vec![RealMatrix::identity(d).scale(1.0 / (d as f64).sqrt())];
    }
    Ok(AlgebraBasis { ambient_dim: d, basis })
}

impl AlgebraBasis {
    /// The full matrix algebra `Mat_d(R)` with its matrix-unit basis.
    pub fn full(d: usize) -> Self {
        AlgebraBasis {
            ambient_dim: d,
            basis: (0..d)
                .flat_map(|i| (0..d).map(move |j| RealMatrix::unit(d, i, j)))
                .collect(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// `D = dim_R E`.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[RealMatrix] {
        &self.basis
    }

    pub fn is_full(&self) -> bool {
        self.basis.len() == self.ambient_dim * self.ambient_dim
    }

    pub fn coords(&self, x: &RealMatrix) -> Vec<f64> {
        self.basis.iter().map(|b| b.pairing(x)).collect()
    }

    pub fn from_coords(&self, c: &[f64]) -> RealMatrix {
        let mut x = RealMatrix::zero(self.ambient_dim);
        for (b, &ci) in self.basis.iter().zip(c) {
            x = x.add(&b.scale(ci));
        }
        x
    }

    /// Distance from `x` to `E` in Frobenius norm.
    pub fn residual(&self, x: &RealMatrix) -> f64 {
        x.sub(&self.from_coords(&self.coords(x))).frobenius()
    }

    fn check_member(&self, x: &RealMatrix) -> Result<()> {
        if x.dim() != self.ambient_dim {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim, found: x.dim() });
        }
        let res = self.residual(x);
        if res > MEMBERSHIP_TOL * x.frobenius() {
            return Err(Error::NotInAlgebra { residual: res });
        }
        Ok(())
    }

    fn mult_matrix(&self, a: &RealMatrix, left: bool) -> DMatrix<f64> {
        let dd = self.dim();
        let mut m = DMatrix::zeros(dd, dd);
        for (j, b) in self.basis.iter().enumerate() {
            let prod = if left { a.mul(b) } else { b.mul(a) };
            for (k, c) in self.coords(&prod).into_iter().enumerate() {
                m[(k, j)] = c;
            }
        }
        m
    }

    /// `D × D` matrix of `x ↦ ax` in basis coordinates.
    pub fn left_mult_matrix(&self, a: &RealMatrix) -> Result<DMatrix<f64>> {
        self.check_member(a)?;
        Ok(self.mult_matrix(a, true))
    }

    /// `D × D` matrix of `x ↦ xa`.
    pub fn right_mult_matrix(&self, a: &RealMatrix) -> Result<DMatrix<f64>> {
        self.check_member(a)?;
        Ok(self.mult_matrix(a, false))
    }

    /// Largest residual of `b_i b_j` off the span of the basis.
    pub fn closure_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in &self.basis {
            for b in &self.basis {
                worst = worst.max(self.residual(&a.mul(b)));
            }
        }
        worst
    }

    /// `{"dim_E": D, "ambient_dim": d, "basis": [...]}`.
    pub fn to_json(&self) -> Value {
        json!({
            "dim_E": self.dim(),
            "ambient_dim": self.ambient_dim,
            "basis": self.basis.iter().map(|b| {
                (0..self.ambient_dim)
                    .map(|i| (0..self.ambient_dim).map(|j| b.entry(i, j)).collect::<Vec<_>>())
                    .collect::<Vec<_>>()
            }).collect::<Vec<_>>(),
        })
    }
}

/// `det_E(a)`: determinant of left multiplication by `a` on `E`.
pub fn det_e(basis: &AlgebraBasis, a: &RealMatrix) -> Result<f64> {
    Ok(basis.left_mult_matrix(a)?.determinant())
}

/// Membership in `S_E(ρ) = {x ∈ E : |det_E x| ≤ ρ}`.
pub fn in_s_e(basis: &AlgebraBasis, x: &RealMatrix, rho: f64) -> Result<bool> {
    Ok(det_e(basis, x)?.abs() <= rho)
}

/// Inverse of `x` inside `E`, if it exists.
pub fn inverse_in_e(basis: &AlgebraBasis, x: &RealMatrix) -> Option<RealMatrix> {
    let l = basis.left_mult_matrix(x).ok()?;
    let rhs = DVector::from_vec(basis.coords(&RealMatrix::identity(basis.ambient_dim())));
    let lu = l.lu();
    if !lu.is_invertible() {
        return None;
    }
    let c = lu.solve(&rhs)?;
    if c.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let inv = basis.from_coords(c.as_slice());
    let check = x.mul(&inv).sub(&RealMatrix::identity(basis.ambient_dim())).frobenius();
    (check <= 1e-8 * (1.0 + inv.frobenius() * x.frobenius())).then_some(inv)
}

/// Membership in `G_E(K) = {x ∈ E^× : ‖x‖, ‖x^{-1}‖ ≤ K}`.
pub fn in_g_e(basis: &AlgebraBasis, x: &RealMatrix, k: f64) -> bool {
    match inverse_in_e(basis, x) {
        Some(inv) => x.operator_norm() <= k && inv.operator_norm() <= k,
        None => false,
    }
}

/// Smallest singular value of the rows `coords(g − I)`, `g` in `sample`.
/// Zero whenever there are fewer rows than `dim E`.
pub fn affine_span_defect(basis: &AlgebraBasis, sample: &[IntMatrix]) -> f64 {
    let dd = basis.dim();
    if sample.len() < dd {
        return 0.0;
    }
    let id = RealMatrix::identity(basis.ambient_dim());
    let rows: Vec<f64> = sample
        .iter()
        .flat_map(|g| basis.coords(&g.to_real().sub(&id)))
        .collect();
    let m = DMatrix::from_row_slice(sample.len(), dd, &rows);
    m.svd(false, false).singular_values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Empirical proximal dimension of the walk.
#[derive(Clone, Debug)]
pub struct ProximalityReport {
    pub r_estimate: usize,
    /// `histogram[r - 1]`: number of samples with `r` large singular values.
    pub histogram: Vec<usize>,
    pub modal_fraction: f64,
    /// Per-sample `σ_r/σ_{r+1}` at the modal `r` (`inf` when `r = d`).
    pub gap_ratios: Vec<f64>,
    pub median_gap_ratio: f64,
    pub low_confidence: bool,
    pub confidence_note: String,
}

struct ProximalSample {
    count: usize,
    kappa: Vec<f64>,
}

fn proximal_samples(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    samples: usize,
    seed: u64,
    omega: f64,
) -> Result<Vec<(ProximalSample, IntMatrix)>> {
    let sampler = mu.sampler()?;
    let out = par_collect(samples, |i| {
        let mut rng = stream_rng(seed, DOMAIN_PROXIMAL, i as u64);
        let g = sampler.product(n, &mut rng);
        let kappa = singular_values(&g).kappa.expect("group elements are invertible");
        let cut = kappa[0] - n as f64 * omega;
        let count = kappa.iter().filter(|&&k| k >= cut).count();
        (ProximalSample { count, kappa }, g)
    });
    Ok(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn report_from(samples: &[ProximalSample], d: usize) -> ProximalityReport {
    let mut histogram = vec![0usize; d];
    for s in samples {
        histogram[s.count - 1] += 1;
    }
    let (r_idx, &top) = histogram
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("d >= 1");
    let r = r_idx + 1;
    let gap_ratios: Vec<f64> = samples
        .iter()
        .map(|s| if r < d { (s.kappa[r - 1] - s.kappa[r]).exp() } else { f64::INFINITY })
        .collect();
    let median_gap_ratio = median(gap_ratios.clone());
    let low_confidence = median_gap_ratio < LOW_CONFIDENCE_RATIO;
    let modal_fraction = top as f64 / samples.len().max(1) as f64;
    let confidence_note = if low_confidence {
        format!("median gap ratio {median_gap_ratio:.3} below {LOW_CONFIDENCE_RATIO}; increase n")
    } else {
        format!("modal fraction {modal_fraction:.3}, median gap ratio {median_gap_ratio:.3e}")
    };
    ProximalityReport {
        r_estimate: r,
        histogram,
        modal_fraction,
        gap_ratios,
        median_gap_ratio,
        low_confidence,
        confidence_note,
    }
}

/// Counts singular values with `σ_i/σ_1 ≥ e^{−nω}` over sampled products;
/// the estimate is the modal count.
pub fn proximal_dimension(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    samples: usize,
    seed: u64,
    omega: f64,
) -> Result<ProximalityReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be positive".into()));
    }
    let s = proximal_samples(mu, n, samples, seed, omega)?;
    let stats: Vec<ProximalSample> = s.into_iter().map(|(p, _)| p).collect();
    Ok(report_from(&stats, mu.dim()))
}

/// Rank-`r` truncation of the first sampled product whose count equals the
/// modal `r`, normalized by its top singular value.
pub fn limit_projector(
    mu: &FiniteMeasure<IntMatrix>,
    n: usize,
    samples: usize,
    seed: u64,
    omega: f64,
) -> Result<RealMatrix> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be positive".into()));
    }
    let s = proximal_samples(mu, n, samples, seed, omega)?;
    let (stats, mats): (Vec<ProximalSample>, Vec<IntMatrix>) = s.into_iter().unzip();
    let report = report_from(&stats, mu.dim());
    if report.low_confidence {
        return Err(Error::LowConfidence(report.confidence_note));
    }
    let r = report.r_estimate;
    let i = stats.iter().position(|s| s.count == r).expect("modal count occurs");
    let g = mats[i].to_real_scaled(-stats[i].kappa[0]);
    Ok(g.truncate_rank(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::exact_rank;
    use crate::mc::stream_rng;
    use num_bigint::BigInt;
    use rand::Rng;

    fn m(rows: &[&[i64]]) -> IntMatrix {
        IntMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn sl2() -> Vec<IntMatrix> {
        vec![m(&[&[1, 1], &[0, 1]]), m(&[&[1, 0], &[1, 1]])]
    }

    /// Exact rank of the vectorized words of length ≤ `len` (including `I`).
    fn word_rank(gens: &[IntMatrix], len: usize) -> usize {
        let d = gens[0].dim();
        let mut words = vec![IntMatrix::identity(d)];
        let mut layer = words.clone();
        for _ in 0..len {
            layer = layer
                .iter()
                .flat_map(|w| gens.iter().map(move |g| w.mat_mul(g).unwrap()))
                .collect();
            words.extend(layer.iter().cloned());
        }
        let entries: Vec<BigInt> = words.iter().flat_map(|w| w.entries().to_vec()).collect();
        exact_rank(&entries, words.len(), d * d)
    }

    #[test]
    fn dimension_examples() {
        assert_eq!(generate_algebra(&[IntMatrix::identity(2)], 1e-9).unwrap().dim(), 1);
        let rot3 = vec![m(&[&[0, -1], &[1, -1]])];
        let e = generate_algebra(&rot3, 1e-9).unwrap();
        assert_eq!(e.dim(), word_rank(&rot3, 3));
        assert_eq!(e.dim(), 2);
        let e = generate_algebra(&sl2(), 1e-9).unwrap();
        assert_eq!(e.dim(), word_rank(&sl2(), 3));
        assert!(e.is_full());
    }

    #[test]
    fn closure_and_unit() {
        for gens in [vec![m(&[&[0, -1], &[1, -1]])], sl2(), vec![m(&[&[2, 1], &[1, 1]])]] {
            let e = generate_algebra(&gens, 1e-9).unwrap();
            assert!(e.closure_residual() <= 1e-9);
            assert!(e.residual(&RealMatrix::identity(2)) <= 1e-12);
        }
    }

    #[test]
    fn det_e_examples() {
        let e = AlgebraBasis::full(2);
        assert!((det_e(&e, &RealMatrix::identity(2)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(det_e(&e, &RealMatrix::zero(2)).unwrap(), 0.0);
        // explicit 4x4 oracle: vec(aX) = (a ⊗ I) vec(X) in row-major order
        let a = RealMatrix::from_rows(&[vec![1.5, -0.3], vec![0.7, 2.0]]).unwrap();
        let mut k = DMatrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                for l in 0..2 {
                    k[(i * 2 + l, j * 2 + l)] = a.entry(i, j);
                }
            }
        }
        let oracle = k.determinant();
        let det_a = 1.5 * 2.0 + 0.3 * 0.7;
        let got = det_e(&e, &a).unwrap();
        assert!((got - oracle).abs() < 1e-12 && (got - det_a * det_a).abs() < 1e-12);
    }

    #[test]
    fn not_in_algebra_is_error() {
        let e = generate_algebra(&[m(&[&[0, -1], &[1, -1]])], 1e-9).unwrap();
        let x = RealMatrix::unit(2, 0, 0);
        assert!(matches!(det_e(&e, &x), Err(Error::NotInAlgebra { .. })));
    }

    #[test]
    fn s_e_and_g_e_examples() {
        let e = AlgebraBasis::full(2);
        assert!(!in_s_e(&e, &RealMatrix::identity(2), 0.5).unwrap());
        assert!(in_s_e(&e, &RealMatrix::zero(2), 0.0).unwrap());
        let eps: f64 = 0.5;
        assert!(in_s_e(&e, &RealMatrix::identity(2).scale(eps), eps.powi(4)).unwrap());
        assert!(in_g_e(&e, &RealMatrix::identity(2), 1.0));
        let diag = RealMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.5]]).unwrap();
        assert!(!in_g_e(&e, &diag, 1.9));
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!(in_g_e(&e, &m(&[&[1, 1], &[0, 1]]).to_real(), phi + 1e-6));
        assert!(!in_g_e(&e, &RealMatrix::unit(2, 0, 1), 10.0));
    }

    #[test]
    fn det_e_multiplicative_and_left_right() {
        let e = AlgebraBasis::full(2);
        let mut rng = stream_rng(4, 0, 0);
        for _ in 0..100 {
            let mut rnd = || {
                RealMatrix::new(2, (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
            };
            let a = rnd();
            let b = rnd();
            let lhs = det_e(&e, &a.mul(&b)).unwrap();
            let rhs = det_e(&e, &a).unwrap() * det_e(&e, &b).unwrap();
            assert!((lhs - rhs).abs() <= 1e-7 * (1.0 + rhs.abs()));
            let right = e.right_mult_matrix(&a).unwrap().determinant();
            let left = det_e(&e, &a).unwrap();
            assert!((left - right).abs() <= 1e-7 * (1.0 + left.abs()));
        }
        // same on a 2-dimensional commutative algebra
        let e2 = generate_algebra(&[m(&[&[0, -1], &[1, -1]])], 1e-9).unwrap();
        let g = m(&[&[0, -1], &[1, -1]]).to_real();
        let x = g.add(&RealMatrix::identity(2).scale(0.3));
        let lhs = det_e(&e2, &x.mul(&g)).unwrap();
        let rhs = det_e(&e2, &x).unwrap() * det_e(&e2, &g).unwrap();
        assert!((lhs - rhs).abs() <= 1e-7 * (1.0 + rhs.abs()));
    }

    #[test]
    fn affine_span_examples() {
        let e = AlgebraBasis::full(2);
        assert_eq!(affine_span_defect(&e, &[IntMatrix::identity(2)]), 0.0);
        let gens = sl2();
        let mut words = vec![];
        let mut layer = vec![IntMatrix::identity(2)];
        for _ in 0..3 {
            layer = layer
                .iter()
                .flat_map(|w| gens.iter().map(move |g| w.mat_mul(g).unwrap()))
                .collect();
            words.extend(layer.iter().cloned());
        }
        let id = IntMatrix::identity(2);
        let shifted: Vec<BigInt> =
            words.iter().flat_map(|w| w.sub(&id).entries().to_vec()).collect();
        assert_eq!(exact_rank(&shifted, words.len(), 4), 4);
        assert!(affine_span_defect(&e, &words) > 1e-3);

        let g = m(&[&[0, -1], &[1, -1]]);
        let line = vec![id.clone(), g.clone(), g.mat_mul(&g).unwrap()];
        assert_eq!(affine_span_defect(&e, &line), 0.0);
        let repeated: Vec<IntMatrix> = line.iter().cycle().take(9).cloned().collect();
        assert!(affine_span_defect(&e, &repeated) < 1e-12);
    }

    #[test]
    fn proximal_dimension_examples() {
        let sl = FiniteMeasure::uniform(sl2()).unwrap();
        let rep = proximal_dimension(&sl, 60, 200, 1, DEFAULT_OMEGA).unwrap();
        assert_eq!(rep.r_estimate, 1);

        let rot = m(&[&[0, -1], &[1, 0]]);
        let orth = FiniteMeasure::uniform(vec![rot.clone(), rot.inverse().unwrap()]).unwrap();
        let rep = proximal_dimension(&orth, 30, 50, 1, DEFAULT_OMEGA).unwrap();
        assert_eq!(rep.r_estimate, 2);
        assert!(!rep.low_confidence);

        let block: Vec<IntMatrix> = sl2().iter().map(|g| g.direct_sum(g)).collect();
        let mu = FiniteMeasure::uniform(block).unwrap();
        let rep = proximal_dimension(&mu, 60, 200, 1, DEFAULT_OMEGA).unwrap();
        assert_eq!(rep.r_estimate, 2);
    }

    #[test]
    fn limit_projector_examples() {
        let g = m(&[&[2, 1], &[1, 1]]);
        let mu = FiniteMeasure::dirac(g.clone());
        let p = limit_projector(&mu, 40, 1, 0, DEFAULT_OMEGA).unwrap();
        // power-method oracle on gᵀg (symmetric g: expanding eigenvector)
        let mut v = [1.0f64, 0.0];
        for _ in 0..200 {
            let w = [5.0 * v[0] + 3.0 * v[1], 3.0 * v[0] + 2.0 * v[1]];
            let n = (w[0] * w[0] + w[1] * w[1]).sqrt();
            v = [w[0] / n, w[1] / n];
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((p.entry(i, j) - v[i] * v[j]).abs() < 1e-6);
            }
        }
        assert!((p.entry(0, 0) * p.entry(1, 1) - p.entry(0, 1) * p.entry(1, 0)).abs() < 1e-12);

        let rot = m(&[&[0, -1], &[1, 0]]);
        let orth = FiniteMeasure::dirac(rot.clone());
        let p = limit_projector(&orth, 3, 1, 0, DEFAULT_OMEGA).unwrap();
        let g3 = rot.mat_mul(&rot).unwrap().mat_mul(&rot).unwrap().to_real();
        assert!(p.max_abs_diff(&g3) < 1e-12);
    }

    #[test]
    fn basis_json_header() {
        let e = generate_algebra(&sl2(), 1e-9).unwrap();
        let v = e.to_json();
        assert_eq!(v["dim_E"], 4);
        assert_eq!(v["basis"].as_array().unwrap().len(), 4);
    }
}
