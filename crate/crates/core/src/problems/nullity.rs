//! Nearest matrix with nullity at least `l`, optimized over the Grassmannian
//! with the stacked system `M(V) = [M(v_1); ...; M(v_l)]`.

use crate::error::Result;
use crate::linalg::{fro_norm, singular_values, CMat};
use crate::oracle::{NearnessProblem, PerturbationBasis};

pub fn nullity_problem(a: CMat, basis: PerturbationBasis, l: usize) -> Result<NearnessProblem> {
    NearnessProblem::with_nullity(a, basis, l)
}

/// Whether `A + Delta` has at least `l` singular values below `tol * ||A||_F`.
pub fn nullity_certificate(a: &CMat, perturbation: &CMat, l: usize, tol: f64) -> bool {
    let s = singular_values(&(a + perturbation));
    let cutoff = tol * fro_norm(a);
    s.iter().filter(|&&x| x <= cutoff).count() >= l
}
