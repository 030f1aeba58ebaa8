//! Reductions of concrete nearness problems to the oracle, with their fast
//! paths, plus a few standard test matrices and structures.

pub mod gcd;
pub mod instability;
pub mod nullity;
pub mod polynomial;
pub mod sparse;

use crate::error::Result;
use crate::linalg::{re, CMat, Field};
use crate::oracle::PerturbationBasis;

/// Grcar matrix: `-1` on the subdiagonal, `1` on the diagonal and the first
/// three superdiagonals.
pub fn grcar(n: usize) -> CMat {
    CMat::from_fn(n, n, |i, j| {
        if j + 1 == i {
            re(-1.0)
        } else if j >= i && j - i <= 3 {
            re(1.0)
        } else {
            re(0.0)
        }
    })
}

/// Positions of the nonzero entries, column by column.
pub fn nonzero_pattern(a: &CMat) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if a[(i, j)] != re(0.0) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Basis of all `n x n` Toeplitz matrices: each diagonal `k = -(n-1)..=n-1`
/// with unit Frobenius norm.
pub fn toeplitz_basis(n: usize, field: Field) -> Result<PerturbationBasis> {
    let mut elems = Vec::with_capacity(2 * n - 1);
    for k in -(n as isize - 1)..=(n as isize - 1) {
        let len = n - k.unsigned_abs();
        let w = re(1.0 / (len as f64).sqrt());
        let diag = (0..len)
            .map(|t| if k >= 0 { (t, t + k as usize, w) } else { (t + k.unsigned_abs(), t, w) })
            .collect();
        elems.push(diag);
    }
    PerturbationBasis::from_triplets(n, n, field, elems)
}
