//! Dense complex linear algebra helpers shared by the oracle and the solvers.
//!
//! Every quantity is stored as a complex matrix. Real problems keep zero
//! imaginary parts throughout; the manifold layer enforces this on iterates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Scalar field of the problem data and of the manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    #[default]
    Real,
    Complex,
}

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Real Frobenius inner product `Re tr(a* b)`.
pub fn real_inner(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn real_inner_vec(a: &CVec, b: &CVec) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn fro_norm(a: &CMat) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_norm(a: &CVec) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn is_finite(a: &CMat) -> bool {
    a.iter().all(|x| x.re.is_finite() && x.im.is_finite())
}

/// Lift a real matrix into the complex storage type.
pub fn from_real(a: &DMatrix<f64>) -> CMat {
    a.map(re)
}

pub fn from_rows(rows: &[&[f64]]) -> CMat {
    let m = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    CMat::from_fn(m, n, |i, j| re(rows[i][j]))
}

/// Drop imaginary parts.
pub fn realify(a: &mut CMat) {
    for x in a.iter_mut() {
        x.im = 0.0;
    }
}

pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, field: Field, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = match field {
            Field::Real => 0.0,
            Field::Complex => rng.sample(StandardNormal),
        };
        c64(re, im)
    })
}

pub fn random_vector<R: Rng + ?Sized>(len: usize, field: Field, rng: &mut R) -> CVec {
    let m = random_matrix(len, 1, field, rng);
    CVec::from_column_slice(m.as_slice())
}

/// Thin SVD `M = U diag(s) V*` kept around so that every shifted solve with
/// `M M* + eps I` and every pseudoinverse application reuses one factorization.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v_t: CMat,
    rows: usize,
}

impl ThinSvd {
    pub fn new(m: &CMat) -> Self {
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return ThinSvd {
                u: CMat::zeros(rows, 0),
                s: Vec::new(),
                v_t: CMat::zeros(0, cols),
                rows,
            };
        }
        let (u, s, v_t) = dense_svd(m);
        ThinSvd { u, s, v_t, rows }
    }

    pub fn sigma_max(&self) -> f64 {
        self.s.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest singular value of the `rows x cols` matrix, counting the
    /// implicit zeros when there are more rows than singular values.
    pub fn sigma_min_rows(&self) -> f64 {
        if self.s.len() < self.rows {
            0.0
        } else {
            self.s.iter().copied().fold(f64::INFINITY, f64::min)
        }
    }

    /// Component of `r` orthogonal to the column space of `U`, projected twice.
    fn complement(&self, r: &CVec) -> CVec {
        let mut perp = r - &self.u * (self.u.adjoint() * r);
        let correction = &self.u * (self.u.adjoint() * &perp);
        perp -= correction;
        perp
    }

    /// `(M M* + eps I)^{-1} r`.
    pub fn shifted_solve(&self, eps: f64, r: &CVec) -> CVec {
        let coeffs = self.u.adjoint() * r;
        let scaled = CVec::from_iterator(
            coeffs.len(),
            coeffs
                .iter()
                .zip(&self.s)
                .map(|(c, s)| c / (s * s + eps)),
        );
        let mut z = &self.u * scaled;
        if self.s.len() < self.rows {
            z += self.complement(r) / re(eps);
        }
        z
    }

    /// `M^† r`, treating singular values at or below `rank_tol * sigma_max` as zero.
    pub fn pinv_apply(&self, r: &CVec, rank_tol: f64) -> CVec {
        let cutoff = rank_tol * self.sigma_max();
        let coeffs = self.u.adjoint() * r;
        let scaled = CVec::from_iterator(
            coeffs.len(),
            coeffs
                .iter()
                .zip(&self.s)
                .map(|(c, &s)| if s > cutoff && s > 0.0 { c / s } else { C64::new(0.0, 0.0) }),
        );
        self.v_t.adjoint() * scaled
    }
}

fn to_faer(m: &CMat) -> faer::Mat<faer::c64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| {
        let x = m[(i, j)];
        faer::c64::new(x.re, x.im)
    })
}

/// Thin SVD `(U, s, V^*)`. nalgebra's bidiagonal SVD occasionally stops at a
/// reconstruction error near 1e-10, which is too coarse for feasibility tests,
/// so the factorization is delegated to faer.
fn dense_svd(m: &CMat) -> (CMat, Vec<f64>, CMat) {
    let svd = to_faer(m).thin_svd().expect("SVD of a finite matrix converges");
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let k = m.nrows().min(m.ncols());
    let s: Vec<f64> = (0..k).map(|i| s[i].re).collect();
    let u = CMat::from_fn(m.nrows(), k, |i, j| c64(u[(i, j)].re, u[(i, j)].im));
    let v_t = CMat::from_fn(k, m.ncols(), |i, j| c64(v[(j, i)].re, -v[(j, i)].im));
    (u, s, v_t)
}

/// Least-squares solution of `a x = b` through the pseudoinverse.
pub fn lstsq(a: &CMat, b: &CVec, rank_tol: f64) -> CVec {
    ThinSvd::new(a).pinv_apply(b, rank_tol)
}

/// Singular values in descending order.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s = dense_svd(a).1;
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Thin QR with `R` having a nonnegative real diagonal. Returns `(Q, R)`.
pub fn qr_positive(a: &CMat) -> (CMat, CMat) {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for k in 0..r.nrows().min(r.ncols()) {
        let d = r[(k, k)];
        let mag = d.norm();
        if mag > 0.0 {
            let phase = d / mag;
            let conj = phase.conj();
            // Q D^{-1} and D R with D = diag(phase) unitary.
            for i in 0..q.nrows() {
                q[(i, k)] *= phase;
            }
            for j in 0..r.ncols() {
                r[(k, j)] *= conj;
            }
        }
    }
    (q, r)
}
