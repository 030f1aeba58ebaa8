//! Nearest singular matrix polynomial of fixed grade.
//!
//! `A(x) v(x) = 0` with `deg v <= d` is the linear condition
//! `T_d(A) vec(v) = 0` on the block Toeplitz lift, so the polynomial problem is
//! a structured singular-matrix problem on `T_d(A)` with lifted basis
//! `T_d(P_i) / sqrt(d + 1)`. For unstructured perturbations the lifted `M`
//! is a Kronecker product and the oracle works with a small Gram matrix.

use crate::error::{Error, Result};
use crate::linalg::{fro_norm, re, vec_norm, CMat, CVec, Field, ThinSvd, C64};
use crate::oracle::{unvec, vec_of, ExactSolve, InnerEvaluation, NearnessProblem, Oracle, PerturbationBasis, FEAS_TOL, RANK_TOL};
use crate::outer::{self, Solution, SolverConfig};

/// `A_0 + A_1 x + ... + A_k x^k` with `m x n` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPolynomial {
    coeffs: Vec<CMat>,
}

impl MatrixPolynomial {
    pub fn new(coeffs: Vec<CMat>) -> Result<Self> {
        let first = coeffs
            .first()
            .ok_or_else(|| Error::InvalidInput("matrix polynomial needs at least one coefficient".into()))?;
        let shape = first.shape();
        for (i, c) in coeffs.iter().enumerate() {
            if c.shape() != shape {
                return Err(Error::dim("matrix polynomial coefficient", format!("{shape:?}"), format!("{i}: {:?}", c.shape())));
            }
        }
        Ok(MatrixPolynomial { coeffs })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coeffs[0].shape()
    }

    pub fn grade(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[CMat] {
        &self.coeffs
    }

    /// `[A_0 A_1 ... A_k]`.
    pub fn stacked(&self) -> CMat {
        let (m, n) = self.shape();
        let mut out = CMat::zeros(m, n * self.coeffs.len());
        for (c, a) in self.coeffs.iter().enumerate() {
            out.columns_mut(c * n, n).copy_from(a);
        }
        out
    }

    pub fn from_stacked(s: &CMat, n: usize) -> Self {
        let k1 = s.ncols() / n;
        MatrixPolynomial { coeffs: (0..k1).map(|c| s.columns(c * n, n).into_owned()).collect() }
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| fro_norm(c).powi(2)).sum::<f64>().sqrt()
    }

    /// Coefficient-wise transpose, used for left kernels.
    pub fn transpose(&self) -> Self {
        MatrixPolynomial { coeffs: self.coeffs.iter().map(|c| c.transpose()).collect() }
    }

    pub fn evaluate(&self, x: C64) -> CMat {
        let (m, n) = self.shape();
        let mut acc = CMat::zeros(m, n);
        for c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }
}

/// Block Toeplitz lift `T_d(A)` of size `m(k+d+1) x n(d+1)`: block column `j`
/// holds `A_0, ..., A_k` starting at block row `j`.
pub fn toeplitz_lift(a: &MatrixPolynomial, d: usize) -> CMat {
    let (m, n) = a.shape();
    let k = a.grade();
    let mut out = CMat::zeros(m * (k + d + 1), n * (d + 1));
    for j in 0..=d {
        for (c, coeff) in a.coeffs.iter().enumerate() {
            out.view_mut(((j + c) * m, j * n), (m, n)).copy_from(coeff);
        }
    }
    out
}

/// Structure of the admissible perturbations `Delta(x)`.
#[derive(Debug, Clone)]
pub enum PolyStructure {
    Unstructured,
    /// Basis polynomials with the same shape and grade as `A(x)`; they are
    /// orthonormalized in the stacked-coefficient inner product.
    Basis(Vec<MatrixPolynomial>),
}

/// Generic lifted formulation. Values and perturbations reported by
/// [`Oracle::exact`] are in the polynomial metric `||Delta(x)||_F`.
#[derive(Debug, Clone)]
pub struct PolynomialProblem {
    lifted: NearnessProblem,
    /// Orthonormal coefficient basis, in stacked layout.
    coeff_basis: Vec<CMat>,
    d: usize,
}

pub fn polynomial_problem(a: &MatrixPolynomial, structure: &PolyStructure, d: usize, field: Field) -> Result<PolynomialProblem> {
    let (m, n) = a.shape();
    let k = a.grade();
    let stacked_basis = match structure {
        PolyStructure::Unstructured => {
            let full = PerturbationBasis::full(m, n * (k + 1), field);
            (0..full.len()).map(|i| full.element_dense(i)).collect::<Vec<_>>()
        }
        PolyStructure::Basis(list) => {
            let mut out = Vec::with_capacity(list.len());
            for (i, p) in list.iter().enumerate() {
                if p.shape() != (m, n) || p.grade() != k {
                    return Err(Error::dim(
                        "polynomial basis element",
                        format!("{m}x{n} of grade {k}"),
                        format!("{i}: {:?} of grade {}", p.shape(), p.grade()),
                    ));
                }
                out.push(p.stacked());
            }
            out
        }
    };
    let ortho = PerturbationBasis::new(m, n * (k + 1), field, &stacked_basis)?;
    let coeff_basis: Vec<CMat> = (0..ortho.len()).map(|i| ortho.element_dense(i)).collect();
    let scale = re(1.0 / ((d + 1) as f64).sqrt());
    let lifted_blocks: Vec<CMat> = coeff_basis
        .iter()
        .map(|s| toeplitz_lift(&MatrixPolynomial::from_stacked(s, n), d) * scale)
        .collect();
    let lifted_a = toeplitz_lift(a, d);
    let (lm, ln) = lifted_a.shape();
    let lifted_basis = PerturbationBasis::new(lm, ln, field, &lifted_blocks)?;
    let lifted = NearnessProblem::new(lifted_a, lifted_basis)?;
    Ok(PolynomialProblem { lifted, coeff_basis, d })
}

impl PolynomialProblem {
    pub fn lifted(&self) -> &NearnessProblem {
        &self.lifted
    }

    pub fn degree(&self) -> usize {
        self.d
    }

    /// `Delta(x) = sum_i P_i delta_i / sqrt(d + 1)` in stacked layout.
    pub fn perturbation(&self, delta: &CVec) -> CMat {
        let mut out = CMat::zeros(self.coeff_basis[0].nrows(), self.coeff_basis[0].ncols());
        for (b, &x) in self.coeff_basis.iter().zip(delta.iter()) {
            out += b * x;
        }
        out / re(((self.d + 1) as f64).sqrt())
    }
}

impl Oracle for PolynomialProblem {
    type Eval = InnerEvaluation;

    fn point_shape(&self) -> (usize, usize) {
        self.lifted.point_shape()
    }

    fn field(&self) -> Field {
        self.lifted.field()
    }

    fn constraint_len(&self) -> usize {
        self.lifted.constraint_len()
    }

    fn regularized(&self, v: &CMat, eps: f64, y: &CVec) -> InnerEvaluation {
        self.lifted.regularized(v, eps, y)
    }

    fn value(&self, eval: &InnerEvaluation) -> f64 {
        eval.value
    }

    fn gradient(&self, v: &CMat, eval: &InnerEvaluation) -> CMat {
        self.lifted.gradient(v, eval)
    }

    fn hessian_vector(&self, v: &CMat, eval: &InnerEvaluation, w: &CMat) -> Option<CMat> {
        Oracle::hessian_vector(&self.lifted, v, eval, w)
    }

    fn constraint(&self, v: &CMat, eval: &InnerEvaluation) -> CVec {
        self.lifted.constraint(v, eval)
    }

    fn sigma_min(&self, eval: &InnerEvaluation) -> f64 {
        eval.sigma_min()
    }

    fn exact(&self, v: &CMat) -> ExactSolve {
        let mut ex = self.lifted.inner_solve_exact(v);
        ex.value /= (self.d + 1) as f64;
        ex.perturbation = self.perturbation(&ex.delta);
        ex
    }
}

/// Unstructured polynomial problem evaluated through the Kronecker form
/// `M(v) = (C^T kron I_n) / sqrt(d + 1)`, where column `i` of `C` stacks
/// `v_{i-c}` over `c = 0..k`.
#[derive(Debug, Clone)]
pub struct KroneckerProblem {
    a: MatrixPolynomial,
    d: usize,
    field: Field,
}

#[derive(Debug, Clone)]
pub struct KroneckerEval {
    pub c: CMat,
    /// Factorization of `C^T / sqrt(d + 1)`, whose Gram matrix is `G`.
    svd: ThinSvd,
    pub z: CMat,
    /// `A_all + Delta_all` in stacked layout.
    pub b: CMat,
    pub delta: CMat,
    pub value: f64,
    pub eps: f64,
}

impl KroneckerProblem {
    pub fn new(a: MatrixPolynomial, d: usize, field: Field) -> Result<Self> {
        if field == Field::Real && a.coeffs.iter().any(|c| c.iter().any(|x| x.im != 0.0)) {
            return Err(Error::InvalidInput("complex polynomial with a real field".into()));
        }
        Ok(KroneckerProblem { a, d, field })
    }

    pub fn polynomial(&self) -> &MatrixPolynomial {
        &self.a
    }

    fn rows(&self) -> usize {
        self.a.shape().0
    }

    fn cols(&self) -> usize {
        self.a.shape().1
    }

    fn blocks(&self) -> usize {
        self.a.grade() + self.d + 1
    }

    fn scale(&self) -> f64 {
        ((self.d + 1) as f64).sqrt()
    }

    /// `C(v)`: `n(k+1) x (k+d+1)`, block `c` of column `i` is `v_{i-c}`.
    pub fn shift_matrix(&self, v: &CMat) -> CMat {
        let n = self.cols();
        let k = self.a.grade();
        let mut c = CMat::zeros(n * (k + 1), self.blocks());
        for i in 0..self.blocks() {
            for cc in 0..=k {
                if i >= cc && i - cc <= self.d {
                    let l = i - cc;
                    for t in 0..n {
                        c[(cc * n + t, i)] = v[(l * n + t, 0)];
                    }
                }
            }
        }
        c
    }

    /// Block rows of `T_d(B) w` as columns: column `i` is `sum_c B_c w_{i-c}`.
    fn lift_apply(&self, b: &CMat, w: &CMat) -> CMat {
        b * self.shift_matrix(w)
    }

    /// Block `l` of `T_d(B)^* Z` is `sum_c B_c^* Z_{l+c}`.
    fn lift_adjoint_apply(&self, b: &CMat, z: &CMat) -> CMat {
        let n = self.cols();
        let k = self.a.grade();
        let mut out = CMat::zeros(n * (self.d + 1), 1);
        for l in 0..=self.d {
            let mut acc = CVec::zeros(n);
            for cc in 0..=k {
                let bc = b.columns(cc * n, n);
                acc += bc.adjoint() * z.column(l + cc);
            }
            out.view_mut((l * n, 0), (n, 1)).copy_from(&acc);
        }
        out
    }

    /// Applies `(G + eps I)^{-1}` from the right: `X ((G + eps I)^{-1})^T`.
    fn right_solve(svd: &ThinSvd, eps: f64, x: &CMat) -> CMat {
        let mut out = CMat::zeros(x.nrows(), x.ncols());
        for row in 0..x.nrows() {
            let col = x.row(row).transpose();
            let sol = svd.shifted_solve(eps, &col);
            out.row_mut(row).copy_from(&sol.transpose());
        }
        out
    }

    pub fn evaluate(&self, v: &CMat, eps: f64, y: &CVec) -> KroneckerEval {
        let m = self.rows();
        let c = self.shift_matrix(v);
        let svd = ThinSvd::new(&(c.transpose() / re(self.scale())));
        let a_all = self.a.stacked();
        let r0 = -(&a_all * &c) - unvec(y, m, self.blocks()) * re(eps);
        let z = Self::right_solve(&svd, eps, &r0);
        let value = r0.iter().zip(z.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        let delta = &z * c.adjoint() / re((self.d + 1) as f64);
        let b = &a_all + &delta;
        KroneckerEval { c, svd, z, b, delta, value, eps }
    }

    pub fn gradient_of(&self, eval: &KroneckerEval) -> CMat {
        self.lift_adjoint_apply(&eval.b, &eval.z) * re(-2.0)
    }

    pub fn hessian_of(&self, eval: &KroneckerEval, w: &CMat) -> CMat {
        let cdot = self.shift_matrix(w);
        let scale2 = (self.d + 1) as f64;
        let rhs = &eval.z * cdot.adjoint() * &eval.c / re(scale2) + self.lift_apply(&eval.b, w);
        let zdot = -Self::right_solve(&eval.svd, eval.eps, &rhs);
        let deltadot = (&eval.z * cdot.adjoint() + &zdot * eval.c.adjoint()) / re(scale2);
        (self.lift_adjoint_apply(&deltadot, &eval.z) + self.lift_adjoint_apply(&eval.b, &zdot)) * re(-2.0)
    }

    /// Minimum-norm `Delta_all` with `(A + Delta)(x) v(x) = 0`, if feasible.
    pub fn exact_of(&self, v: &CMat) -> ExactSolve {
        let c = self.shift_matrix(v);
        let k_mat = c.transpose() / re(self.scale());
        let svd = ThinSvd::new(&k_mat);
        let a_all = self.a.stacked();
        let r0 = -(&a_all * &c);
        // D (C / s) = R0 row by row: D^T = (K)^dagger R0^T with K = C^T / s.
        let mut dmat = CMat::zeros(r0.nrows(), c.nrows());
        for row in 0..r0.nrows() {
            let rhs = r0.row(row).transpose();
            let sol = svd.pinv_apply(&rhs, RANK_TOL);
            dmat.row_mut(row).copy_from(&sol.transpose());
        }
        let miss = fro_norm(&(&dmat * &c / re(self.scale()) - &r0));
        let feasible = miss <= FEAS_TOL * fro_norm(&r0);
        let delta_all = &dmat / re(self.scale());
        let residual = fro_norm(&((&a_all + &delta_all) * &c));
        ExactSolve {
            value: fro_norm(&delta_all).powi(2),
            feasible,
            delta: vec_of(&dmat),
            perturbation: delta_all,
            residual,
            lambda: None,
        }
    }
}

impl Oracle for KroneckerProblem {
    type Eval = KroneckerEval;

    fn point_shape(&self) -> (usize, usize) {
        (self.cols() * (self.d + 1), 1)
    }

    fn field(&self) -> Field {
        self.field
    }

    fn constraint_len(&self) -> usize {
        self.rows() * self.blocks()
    }

    fn regularized(&self, v: &CMat, eps: f64, y: &CVec) -> KroneckerEval {
        self.evaluate(v, eps, y)
    }

    fn value(&self, eval: &KroneckerEval) -> f64 {
        eval.value
    }

    fn gradient(&self, _v: &CMat, eval: &KroneckerEval) -> CMat {
        self.gradient_of(eval)
    }

    fn hessian_vector(&self, _v: &CMat, eval: &KroneckerEval, w: &CMat) -> Option<CMat> {
        Some(self.hessian_of(eval, w))
    }

    fn constraint(&self, _v: &CMat, eval: &KroneckerEval) -> CVec {
        vec_of(&(&eval.b * &eval.c))
    }

    fn sigma_min(&self, eval: &KroneckerEval) -> f64 {
        eval.svd.s.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn exact(&self, v: &CMat) -> ExactSolve {
        self.exact_of(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelSide {
    /// `(A + Delta)(x) v(x) = 0`.
    Right,
    /// `v(x)^* (A + Delta)(x) = 0`, solved on the coefficient-wise transpose.
    Left,
}

#[derive(Debug, Clone)]
pub struct PolynomialSolution {
    pub solution: Solution,
    pub side: KernelSide,
    pub degree: usize,
    /// `Delta(x)` for the original (untransposed) polynomial.
    pub perturbation: MatrixPolynomial,
}

/// Default kernel degree bound `floor(k (n - 1) / 2)`.
pub fn kernel_degree(n: usize, k: usize) -> usize {
    k * n.saturating_sub(1) / 2
}

fn run_side(a: &MatrixPolynomial, structure: &PolyStructure, d: usize, field: Field, cfg: &SolverConfig) -> Result<Solution> {
    match structure {
        PolyStructure::Unstructured => outer::solve(&KroneckerProblem::new(a.clone(), d, field)?, cfg),
        PolyStructure::Basis(_) => outer::solve(&polynomial_problem(a, structure, d, field)?, cfg),
    }
}

/// Nearest singular polynomial of the same grade: solves for right and left
/// kernels of degree `floor(k (n - 1) / 2)` and keeps the better result.
pub fn polynomial_distance(a: &MatrixPolynomial, structure: &PolyStructure, field: Field, cfg: &SolverConfig) -> Result<PolynomialSolution> {
    let (m, n) = a.shape();
    if m != n {
        return Err(Error::InvalidInput("singular matrix polynomials are defined for square coefficients".into()));
    }
    if a.grade() == 0 {
        return Err(Error::InvalidInput("grade must be at least 1".into()));
    }
    polynomial_distance_with_degree(a, structure, field, kernel_degree(n, a.grade()), cfg)
}

pub fn polynomial_distance_with_degree(
    a: &MatrixPolynomial,
    structure: &PolyStructure,
    field: Field,
    d: usize,
    cfg: &SolverConfig,
) -> Result<PolynomialSolution> {
    let n = a.shape().1;
    let right = run_side(a, structure, d, field, cfg)?;
    let transposed_structure = match structure {
        PolyStructure::Unstructured => PolyStructure::Unstructured,
        PolyStructure::Basis(list) => PolyStructure::Basis(list.iter().map(MatrixPolynomial::transpose).collect()),
    };
    let left = run_side(&a.transpose(), &transposed_structure, d, field, cfg)?;
    let left_better = (left.feasible && !right.feasible) || (left.feasible == right.feasible && left.value < right.value);
    let (best, side) = if left_better { (left, KernelSide::Left) } else { (right, KernelSide::Right) };
    let mut perturbation = MatrixPolynomial::from_stacked(&best.perturbation, n);
    if side == KernelSide::Left {
        perturbation = perturbation.transpose();
    }
    Ok(PolynomialSolution { solution: best, side, degree: d, perturbation })
}

/// Residual `||vec((A + Delta)(x) v(x))||` of a candidate kernel vector.
pub fn kernel_residual(a: &MatrixPolynomial, delta: &MatrixPolynomial, v: &CMat, d: usize) -> f64 {
    let sum = MatrixPolynomial::new(a.coeffs.iter().zip(&delta.coeffs).map(|(x, y)| x + y).collect())
        .expect("matching shapes");
    let col = vec_of(v);
    vec_norm(&(toeplitz_lift(&sum, d) * col))
}
