//! Standard instances: the dense `SL_2(Z)` walk and its relatives, and the
//! starting points used by the equidistribution and witness experiments.

use num_bigint::BigInt;

use crate::linalg::IntMatrix;
use crate::measure::FiniteMeasure;
use crate::torus::{golden_fixed, sqrt2_fixed, TorusPoint};

fn m(rows: &[&[i64]]) -> IntMatrix {
    IntMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).expect("square fixture")
}

/// `A = [[1,1],[0,1]]`, `B = [[1,0],[1,1]]`.
pub fn sl2_generators() -> [IntMatrix; 2] {
    [m(&[&[1, 1], &[0, 1]]), m(&[&[1, 0], &[1, 1]])]
}

/// Uniform on `{A, A^{-1}, B, B^{-1}}`.
pub fn sl2_dense() -> FiniteMeasure<IntMatrix> {
    FiniteMeasure::uniform(vec![
        m(&[&[1, 1], &[0, 1]]),
        m(&[&[1, -1], &[0, 1]]),
        m(&[&[1, 0], &[1, 1]]),
        m(&[&[1, 0], &[-1, 1]]),
    ])
    .expect("four atoms")
}

/// `g ⊕ g` on `R^4` for `g` in the dense `SL_2` support.
pub fn nonproximal_block() -> FiniteMeasure<IntMatrix> {
    FiniteMeasure::uniform(sl2_dense().points().map(|g| g.direct_sum(g)).collect()).expect("four atoms")
}

/// Uniform on the quarter turn and a coordinate reflection; every product
/// is orthogonal.
pub fn orthogonal() -> FiniteMeasure<IntMatrix> {
    FiniteMeasure::uniform(vec![m(&[&[0, -1], &[1, 0]]), m(&[&[1, 0], &[0, -1]])]).expect("two atoms")
}

/// Dirac mass at the cat map `[[2,1],[1,1]]`, top exponent `log((3+√5)/2)`.
pub fn cat_map() -> FiniteMeasure<IntMatrix> {
    FiniteMeasure::dirac(m(&[&[2, 1], &[1, 1]]))
}

/// `(φ − 1, √2 − 1) mod 1` in 128-bit fixed point.
pub fn golden_sqrt2_start() -> TorusPoint {
    TorusPoint::Fixed(vec![golden_fixed(), sqrt2_fixed()])
}

/// `(1/5, 2/5)`.
pub fn rational_start() -> TorusPoint {
    TorusPoint::from_ratios(&[(1, 5), (2, 5)]).expect("valid ratios")
}

/// `(1/7 + 2^{-40}, 3/7 + 2^{-40})`, stored exactly.
pub fn perturbed_rational_start() -> TorusPoint {
    let den = BigInt::from(7) << 40usize;
    let shift = BigInt::from(7);
    TorusPoint::exact(
        vec![(BigInt::from(1) << 40usize) + &shift, (BigInt::from(3) << 40usize) + &shift],
        den,
    )
    .expect("valid point")
}
