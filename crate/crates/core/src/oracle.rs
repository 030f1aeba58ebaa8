//! Inner oracle for structured nearness problems.
//!
//! For a point `V` (a unit vector, or an orthonormal `n x l` frame) the
//! constraint `(A + Delta) V = 0` with `Delta = sum_i P_i delta_i` is linear in
//! `delta`: `M(V) delta = r(V)` where column `i` of `M` stacks `P_i v_k` over
//! the columns of `V` and `r = -vec(A V)`. The exact oracle takes the minimum
//! norm solution; the regularized oracle minimizes
//! `||delta||^2 + ||M delta - r||^2 / eps`, shifted by a multiplier `y`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{fro_norm, qr_positive, re, vec_norm, CMat, CVec, Field, ThinSvd, C64};

/// Singular values at or below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-12;
/// Relative residual below which `r` is considered to lie in the range of `M`.
pub const FEAS_TOL: f64 = 1e-8;

const ORTHO_TOL: f64 = 1e-12;
const DEPENDENCE_TOL: f64 = 1e-10;

pub type Triplets = Vec<(usize, usize, C64)>;

/// Orthonormal basis `P_1, ..., P_p` of the structure space, stored sparsely.
#[derive(Debug, Clone)]
pub struct PerturbationBasis {
    rows: usize,
    cols: usize,
    field: Field,
    elems: Vec<Triplets>,
    reorthonormalized: bool,
}

fn to_triplets(m: &CMat) -> Triplets {
    let mut t = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let x = m[(i, j)];
            if x.re != 0.0 || x.im != 0.0 {
                t.push((i, j, x));
            }
        }
    }
    t
}

impl PerturbationBasis {
    /// Builds a basis from dense blocks, re-orthonormalizing with a thin QR if
    /// the blocks are not already orthonormal.
    pub fn new(rows: usize, cols: usize, field: Field, mats: &[CMat]) -> Result<Self> {
        for (i, m) in mats.iter().enumerate() {
            if m.shape() != (rows, cols) {
                return Err(Error::InvalidInput(format!(
                    "basis block {i} has shape {:?}, expected {:?}",
                    m.shape(),
                    (rows, cols)
                )));
            }
        }
        Self::from_triplets(rows, cols, field, mats.iter().map(to_triplets).collect())
    }

    pub fn from_triplets(rows: usize, cols: usize, field: Field, elems: Vec<Triplets>) -> Result<Self> {
        if elems.is_empty() {
            return Err(Error::InvalidInput("perturbation basis is empty".into()));
        }
        for (i, e) in elems.iter().enumerate() {
            for &(r, c, x) in e {
                if r >= rows || c >= cols {
                    return Err(Error::InvalidInput(format!(
                        "basis block {i} has entry ({r}, {c}) outside {rows}x{cols}"
                    )));
                }
                if !(x.re.is_finite() && x.im.is_finite()) {
                    return Err(Error::NonFinite(format!("basis block {i}")));
                }
                if field == Field::Real && x.im != 0.0 {
                    return Err(Error::InvalidInput(format!("basis block {i} is complex but the field is real")));
                }
            }
        }
        let mut basis = PerturbationBasis { rows, cols, field, elems, reorthonormalized: false };
        if !basis.is_orthonormal() {
            basis.orthonormalize()?;
        }
        Ok(basis)
    }

    /// Unit matrices `e_i e_j^*` for every position in `pattern`.
    pub fn from_pattern(rows: usize, cols: usize, field: Field, pattern: &[(usize, usize)]) -> Result<Self> {
        let elems = pattern.iter().map(|&(i, j)| vec![(i, j, re(1.0))]).collect();
        Self::from_triplets(rows, cols, field, elems)
    }

    /// All unit matrices: unstructured perturbations.
    pub fn full(rows: usize, cols: usize, field: Field) -> Self {
        let elems = (0..cols)
            .flat_map(|j| (0..rows).map(move |i| vec![(i, j, re(1.0))]))
            .collect();
        PerturbationBasis { rows, cols, field, elems, reorthonormalized: false }
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn elements(&self) -> &[Triplets] {
        &self.elems
    }

    /// Whether construction had to re-orthonormalize the given blocks.
    pub fn was_reorthonormalized(&self) -> bool {
        self.reorthonormalized
    }

    pub fn element_dense(&self, i: usize) -> CMat {
        let mut m = CMat::zeros(self.rows, self.cols);
        for &(r, c, x) in &self.elems[i] {
            m[(r, c)] += x;
        }
        m
    }

    /// `sum_i P_i delta_i`.
    pub fn combine(&self, delta: &CVec) -> CMat {
        let mut m = CMat::zeros(self.rows, self.cols);
        for (e, &d) in self.elems.iter().zip(delta.iter()) {
            for &(r, c, x) in e {
                m[(r, c)] += x * d;
            }
        }
        m
    }

    /// Coordinates `<P_i, a>` of the orthogonal projection of `a` onto the span.
    pub fn coordinates(&self, a: &CMat) -> CVec {
        CVec::from_iterator(
            self.len(),
            self.elems.iter().map(|e| e.iter().map(|&(r, c, x)| x.conj() * a[(r, c)]).sum()),
        )
    }

    /// Gram matrix of the vectorized blocks.
    pub fn gram(&self) -> CMat {
        let p = self.len();
        let mut by_pos: HashMap<(usize, usize), Vec<(usize, C64)>> = HashMap::new();
        for (i, e) in self.elems.iter().enumerate() {
            for &(r, c, x) in e {
                by_pos.entry((r, c)).or_default().push((i, x));
            }
        }
        let mut g = CMat::zeros(p, p);
        for list in by_pos.values() {
            for &(i, xi) in list {
                for &(j, xj) in list {
                    g[(i, j)] += xi.conj() * xj;
                }
            }
        }
        g
    }

    fn is_orthonormal(&self) -> bool {
        let g = self.gram();
        let p = self.len();
        (0..p).all(|i| (0..p).all(|j| (g[(i, j)] - re(if i == j { 1.0 } else { 0.0 })).norm() <= ORTHO_TOL))
    }

    fn orthonormalize(&mut self) -> Result<()> {
        let (m, n, p) = (self.rows, self.cols, self.len());
        let mut stacked = CMat::zeros(m * n, p);
        for (i, e) in self.elems.iter().enumerate() {
            for &(r, c, x) in e {
                stacked[(c * m + r, i)] += x;
            }
        }
        if p > m * n {
            return Err(Error::RankDeficientBasis { index: m * n });
        }
        let (q, rr) = qr_positive(&stacked);
        let scale = (0..p).map(|k| rr[(k, k)].norm()).fold(0.0, f64::max);
        for k in 0..p {
            if !(rr[(k, k)].norm() > DEPENDENCE_TOL * scale) {
                return Err(Error::RankDeficientBasis { index: k });
            }
        }
        self.elems = (0..p)
            .map(|k| {
                let col = q.column(k);
                let mut t = Triplets::new();
                for c in 0..n {
                    for r in 0..m {
                        let x = col[c * m + r];
                        if x.norm() > 1e-300 {
                            t.push((r, c, x));
                        }
                    }
                }
                t
            })
            .collect();
        self.reorthonormalized = true;
        Ok(())
    }

    /// `M(V)`: row block `k` holds `[P_1 v_k, ..., P_p v_k]`.
    pub fn assemble_m(&self, v: &CMat) -> CMat {
        let (m, l) = (self.rows, v.ncols());
        let mut out = CMat::zeros(m * l, self.len());
        for (i, e) in self.elems.iter().enumerate() {
            for k in 0..l {
                for &(r, c, x) in e {
                    out[(k * m + r, i)] += x * v[(c, k)];
                }
            }
        }
        out
    }
}

/// Stacked columns of a matrix as one vector.
pub fn vec_of(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &CVec, rows: usize, cols: usize) -> CMat {
    CMat::from_column_slice(rows, cols, v.as_slice())
}

/// Output of the exact (unregularized) inner solve.
#[derive(Debug, Clone)]
pub struct ExactSolve {
    /// `||delta||^2` if feasible, otherwise the least-squares value `g`.
    pub value: f64,
    pub feasible: bool,
    pub delta: CVec,
    /// The perturbation in the problem's natural layout.
    pub perturbation: CMat,
    /// `||(A + Delta) V||_F`.
    pub residual: f64,
    /// Destabilizing eigenvalue, for instability problems.
    pub lambda: Option<C64>,
}

/// One regularized oracle evaluation at `(V, eps, y)`.
#[derive(Debug, Clone)]
pub struct InnerEvaluation {
    pub m: CMat,
    pub r: CVec,
    pub z: CVec,
    pub delta_star: CVec,
    pub delta_mat: CMat,
    pub value: f64,
    pub eps: f64,
    svd: ThinSvd,
}

impl InnerEvaluation {
    /// `(M M^* + eps I)^{-1} x`, reusing the factorization.
    pub fn shifted_solve(&self, x: &CVec) -> CVec {
        self.svd.shifted_solve(self.eps, x)
    }

    pub fn sigma_min(&self) -> f64 {
        self.svd.s.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Common interface of the generic oracle and the specialized fast paths,
/// consumed by the outer loop.
pub trait Oracle: Sync {
    type Eval: Send;

    /// Shape of the optimization variable (`n x l`).
    fn point_shape(&self) -> (usize, usize);

    fn field(&self) -> Field;

    /// Length of the multiplier `y`.
    fn constraint_len(&self) -> usize;

    fn regularized(&self, v: &CMat, eps: f64, y: &CVec) -> Self::Eval;

    fn value(&self, eval: &Self::Eval) -> f64;

    fn gradient(&self, v: &CMat, eval: &Self::Eval) -> CMat;

    fn has_hessian(&self) -> bool {
        true
    }

    fn hessian_vector(&self, v: &CMat, eval: &Self::Eval, w: &CMat) -> Option<CMat>;

    /// `vec((A + Delta_*) V)` at the regularized solution.
    fn constraint(&self, v: &CMat, eval: &Self::Eval) -> CVec;

    fn sigma_min(&self, eval: &Self::Eval) -> f64;

    fn exact(&self, v: &CMat) -> ExactSolve;

    /// Optional post-processing of a converged point.
    fn refine(&self, _v: &CMat) -> Option<CMat> {
        None
    }
}

/// Structured nearest-singular (or nullity) problem with a dense matrix.
#[derive(Debug, Clone)]
pub struct NearnessProblem {
    a: CMat,
    basis: PerturbationBasis,
    /// Coordinates of `A` in the basis when `A` lies in the structure space.
    alpha: Option<CVec>,
    l: usize,
}

impl NearnessProblem {
    pub fn new(a: CMat, basis: PerturbationBasis) -> Result<Self> {
        Self::with_nullity(a, basis, 1)
    }

    /// Problem over `n x l` frames: nearest matrix with nullity at least `l`.
    pub fn with_nullity(a: CMat, basis: PerturbationBasis, l: usize) -> Result<Self> {
        if a.shape() != basis.shape() {
            return Err(Error::dim("NearnessProblem", format!("{:?}", basis.shape()), format!("{:?}", a.shape())));
        }
        if l == 0 || l > a.ncols() {
            return Err(Error::dim("NearnessProblem nullity", format!("1..={}", a.ncols()), l));
        }
        if !crate::linalg::is_finite(&a) {
            return Err(Error::NonFinite("matrix A".into()));
        }
        if basis.field() == Field::Real && a.iter().any(|x| x.im != 0.0) {
            return Err(Error::InvalidInput("complex matrix with a real field".into()));
        }
        let coords = basis.coordinates(&a);
        let norm_a = fro_norm(&a);
        let resid = fro_norm(&(&a - basis.combine(&coords)));
        let alpha = (resid <= 1e-12 * norm_a.max(f64::MIN_POSITIVE)).then_some(coords);
        Ok(NearnessProblem { a, basis, alpha, l })
    }

    pub fn a(&self) -> &CMat {
        &self.a
    }

    pub fn basis(&self) -> &PerturbationBasis {
        &self.basis
    }

    pub fn nullity(&self) -> usize {
        self.l
    }

    pub fn contains_a(&self) -> bool {
        self.alpha.is_some()
    }

    pub fn alpha(&self) -> Option<&CVec> {
        self.alpha.as_ref()
    }

    fn check_point(&self, v: &CMat) {
        assert_eq!(v.shape(), (self.a.ncols(), self.l), "point has the wrong shape");
    }

    pub fn assemble_m(&self, v: &CMat) -> CMat {
        self.basis.assemble_m(v)
    }

    /// `r = -vec(A V)`.
    pub fn rhs(&self, v: &CMat) -> CVec {
        -vec_of(&(&self.a * v))
    }

    /// Minimum-norm solution of `M delta = r` via the pseudoinverse.
    pub fn inner_solve_exact(&self, v: &CMat) -> ExactSolve {
        self.check_point(v);
        let m = self.assemble_m(v);
        let r = self.rhs(v);
        exact_from_parts(&self.a, &self.basis, v, &m, &r)
    }

    pub fn inner_solve_regularized(&self, v: &CMat, eps: f64, y: &CVec) -> Result<InnerEvaluation> {
        if !(eps > 0.0) {
            return Err(Error::InvalidInput(format!("regularization must be positive, got {eps}")));
        }
        self.check_point(v);
        if y.len() != self.a.nrows() * self.l {
            return Err(Error::dim("multiplier", self.a.nrows() * self.l, y.len()));
        }
        Ok(self.regularized_unchecked(v, eps, y))
    }

    fn regularized_unchecked(&self, v: &CMat, eps: f64, y: &CVec) -> InnerEvaluation {
        let m = self.assemble_m(v);
        let r = self.rhs(v) - y * re(eps);
        regularized_from_parts(&self.basis, m, r, eps)
    }

    /// `-2 (A + Delta_*)^* Z`, with `Z` the reshaped `z`.
    pub fn euclidean_gradient(&self, eval: &InnerEvaluation) -> CMat {
        let b = &self.a + &eval.delta_mat;
        let z = unvec(&eval.z, self.a.nrows(), self.l);
        b.adjoint() * z * re(-2.0)
    }

    pub fn hessian_vector(&self, eval: &InnerEvaluation, w: &CMat) -> CMat {
        hessian_from_parts(&self.a, &self.basis, self.l, eval, w)
    }

    /// Checks `delta_* = -M^dagger M alpha`, which holds when `A` is in the
    /// structure space.
    pub fn projection_identity_check(&self, v: &CMat) -> Result<bool> {
        let alpha = self
            .alpha
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("A does not lie in the structure space".into()))?;
        let ex = self.inner_solve_exact(v);
        let m = self.assemble_m(v);
        let proj = ThinSvd::new(&m).pinv_apply(&(&m * alpha), RANK_TOL);
        let tol = 1e-10 * vec_norm(alpha).max(1.0);
        let ok1 = vec_norm(&(&ex.delta + &proj)) <= tol;
        let ok2 = vec_norm(&((alpha + &ex.delta) - (alpha - &proj))) <= tol;
        Ok(ok1 && ok2)
    }

    /// Stacks `M(v)^*` on `(I - v v^*)(A + Delta_*)^*`; full column rank is
    /// the constraint qualification at `v`. Only defined for vector points.
    pub fn licq_matrix(&self, v: &CMat, eval: &InnerEvaluation) -> Result<CMat> {
        if v.ncols() != 1 {
            return Err(Error::Unsupported("constraint qualification matrix for frames".into()));
        }
        let n = self.a.ncols();
        let proj = CMat::identity(n, n) - v * v.adjoint();
        let lower = proj * (&self.a + &eval.delta_mat).adjoint();
        let upper = eval.m.adjoint();
        let mut out = CMat::zeros(upper.nrows() + lower.nrows(), upper.ncols());
        out.rows_mut(0, upper.nrows()).copy_from(&upper);
        out.rows_mut(upper.nrows(), lower.nrows()).copy_from(&lower);
        Ok(out)
    }
}

pub(crate) fn exact_from_parts(a: &CMat, basis: &PerturbationBasis, v: &CMat, m: &CMat, r: &CVec) -> ExactSolve {
    let svd = ThinSvd::new(m);
    let delta = svd.pinv_apply(r, RANK_TOL);
    let miss = vec_norm(&(m * &delta - r));
    let feasible = miss <= FEAS_TOL * vec_norm(r);
    let perturbation = basis.combine(&delta);
    let residual = fro_norm(&((a + &perturbation) * v));
    ExactSolve {
        value: vec_norm(&delta).powi(2),
        feasible,
        delta,
        perturbation,
        residual,
        lambda: None,
    }
}

pub(crate) fn regularized_from_parts(basis: &PerturbationBasis, m: CMat, r: CVec, eps: f64) -> InnerEvaluation {
    let svd = ThinSvd::new(&m);
    let z = svd.shifted_solve(eps, &r);
    let value = r.iter().zip(z.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
    let delta_star = m.adjoint() * &z;
    let delta_mat = basis.combine(&delta_star);
    InnerEvaluation { m, r, z, delta_star, delta_mat, value, eps, svd }
}

/// Directional derivative of the gradient:
/// `zdot = -X^{-1}(M Mdot^* z + vec((A + Delta) W))`,
/// `deltadot = Mdot^* z + M^* zdot`, output `-2 Deltadot^* Z - 2 (A + Delta)^* Zdot`.
pub(crate) fn hessian_from_parts(a: &CMat, basis: &PerturbationBasis, l: usize, eval: &InnerEvaluation, w: &CMat) -> CMat {
    let rows = a.nrows();
    let b = a + &eval.delta_mat;
    let mdot = basis.assemble_m(w);
    let mdot_z = mdot.adjoint() * &eval.z;
    let rhs = &eval.m * &mdot_z + vec_of(&(&b * w));
    let zdot = -eval.shifted_solve(&rhs);
    let deltadot = mdot_z + eval.m.adjoint() * &zdot;
    let deltadot_mat = basis.combine(&deltadot);
    let zm = unvec(&eval.z, rows, l);
    let zdm = unvec(&zdot, rows, l);
    (deltadot_mat.adjoint() * zm + b.adjoint() * zdm) * re(-2.0)
}

impl Oracle for NearnessProblem {
    type Eval = InnerEvaluation;

    fn point_shape(&self) -> (usize, usize) {
        (self.a.ncols(), self.l)
    }

    fn field(&self) -> Field {
        self.basis.field()
    }

    fn constraint_len(&self) -> usize {
        self.a.nrows() * self.l
    }

    fn regularized(&self, v: &CMat, eps: f64, y: &CVec) -> InnerEvaluation {
        self.regularized_unchecked(v, eps, y)
    }

    fn value(&self, eval: &InnerEvaluation) -> f64 {
        eval.value
    }

    fn gradient(&self, _v: &CMat, eval: &InnerEvaluation) -> CMat {
        self.euclidean_gradient(eval)
    }

    fn hessian_vector(&self, _v: &CMat, eval: &InnerEvaluation, w: &CMat) -> Option<CMat> {
        Some(NearnessProblem::hessian_vector(self, eval, w))
    }

    fn constraint(&self, v: &CMat, eval: &InnerEvaluation) -> CVec {
        vec_of(&((&self.a + &eval.delta_mat) * v))
    }

    fn sigma_min(&self, eval: &InnerEvaluation) -> f64 {
        eval.sigma_min()
    }

    fn exact(&self, v: &CMat) -> ExactSolve {
        self.inner_solve_exact(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, from_rows, random_matrix, random_vector, real_inner, singular_values};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diagonal_example() -> NearnessProblem {
        let a = from_rows(&[&[1.0, 1.0], &[0.0, 2.0]]);
        let basis = PerturbationBasis::from_pattern(2, 2, Field::Real, &[(0, 0), (1, 1)]).unwrap();
        NearnessProblem::new(a, basis).unwrap()
    }

    fn unit(t: f64) -> CMat {
        CMat::from_column_slice(2, 1, &[re(t.cos()), re(t.sin())])
    }

    fn random_problem(rng: &mut ChaCha8Rng, m: usize, n: usize, p: usize, field: Field, l: usize) -> NearnessProblem {
        let blocks: Vec<CMat> = (0..p).map(|_| random_matrix(m, n, field, rng)).collect();
        let basis = PerturbationBasis::new(m, n, field, &blocks).unwrap();
        NearnessProblem::with_nullity(random_matrix(m, n, field, rng), basis, l).unwrap()
    }

    fn value_at(p: &NearnessProblem, v: &CMat, eps: f64, y: &CVec) -> f64 {
        p.inner_solve_regularized(v, eps, y).unwrap().value
    }

    /// Relative distance of `x` to `y`, measured against the size of `y`.
    fn rel(x: f64, y: f64) -> f64 {
        (x - y).abs() / y.abs().max(1e-300)
    }

    fn rel_mat(x: &CMat, y: &CMat) -> f64 {
        fro_norm(&(x - y)) / fro_norm(y).max(1e-300)
    }

    #[test]
    fn assemble_m_examples() {
        let basis = PerturbationBasis::new(2, 2, Field::Real, &[CMat::identity(2, 2) / re(2f64.sqrt())]).unwrap();
        let m = basis.assemble_m(&CMat::from_column_slice(2, 1, &[re(1.0), re(0.0)]));
        assert!((m[(0, 0)].re - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(m[(1, 0)], re(0.0));

        let t = 0.7;
        let m = diagonal_example().assemble_m(&unit(t));
        let expected = from_rows(&[&[t.cos(), 0.0], &[0.0, t.sin()]]);
        assert!(fro_norm(&(m - expected)) < 1e-15);
    }

    #[test]
    fn assemble_m_matches_direct_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for field in [Field::Real, Field::Complex] {
            let p = random_problem(&mut rng, 4, 3, 5, field, 1);
            let v = random_matrix(3, 1, field, &mut rng);
            let m = p.assemble_m(&v);
            for _ in 0..20 {
                let delta = random_vector(5, field, &mut rng);
                let lhs = &m * &delta;
                let rhs = vec_of(&(p.basis().combine(&delta) * &v));
                assert!(vec_norm(&(lhs - &rhs)) <= 1e-12 * vec_norm(&rhs));
            }
        }
    }

    #[test]
    fn exact_solve_diagonal_example() {
        let p = diagonal_example();
        let ex = p.inner_solve_exact(&unit(0.0));
        assert!(ex.feasible);
        assert!((ex.value - 1.0).abs() < 1e-15);
        let fixed = p.a() + &ex.perturbation;
        assert!(fro_norm(&(&fixed - from_rows(&[&[0.0, 1.0], &[0.0, 2.0]]))) < 1e-15);
        assert!(singular_values(&fixed)[1] < 1e-15);

        let ex = p.inner_solve_exact(&unit(std::f64::consts::FRAC_PI_4));
        assert!(ex.feasible);
        assert!((ex.value - 8.0).abs() < 1e-12, "{}", ex.value);

        let ex = p.inner_solve_exact(&unit(std::f64::consts::FRAC_PI_2));
        assert!(!ex.feasible);
    }

    #[test]
    fn exact_solve_closed_form_along_the_circle() {
        let p = diagonal_example();
        for k in 1..20 {
            let t = 0.15 * k as f64;
            if (t - std::f64::consts::FRAC_PI_2).abs() < 1e-3 {
                continue;
            }
            let ex = p.inner_solve_exact(&unit(t));
            let expected = 4.0 + (1.0 + t.tan()).powi(2);
            assert!(ex.feasible);
            assert!(rel(ex.value, expected) < 1e-12, "t={t}: {} vs {expected}", ex.value);
            assert!(ex.residual <= 1e-10 * (fro_norm(p.a()) + fro_norm(&ex.perturbation)));
        }
    }

    #[test]
    fn regularized_examples() {
        let p = diagonal_example();
        let y = CVec::zeros(2);
        let ev = p.inner_solve_regularized(&unit(0.0), 0.1, &y).unwrap();
        assert!((ev.value - 1.0 / 1.1).abs() < 1e-15);

        // closed form (cos+sin)^2/(cos^2+eps) + 4 sin^2/(sin^2+eps)
        for &(t, eps) in &[(0.3f64, 0.1), (1.1, 1e-3), (2.0, 5.0)] {
            let (c, s) = (t.cos(), t.sin());
            let expected = (c + s).powi(2) / (c * c + eps) + 4.0 * s * s / (s * s + eps);
            assert!(rel(value_at(&p, &unit(t), eps, &y), expected) < 1e-13);
        }

        let bad = p.inner_solve_regularized(&unit(0.0), 0.0, &y);
        assert!(matches!(bad, Err(Error::InvalidInput(_))));
        let bad = p.inner_solve_regularized(&unit(0.0), 1.0, &CVec::zeros(3));
        assert!(matches!(bad, Err(Error::Dimension { .. })));
    }

    #[test]
    fn regularized_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for field in [Field::Real, Field::Complex] {
            let p = random_problem(&mut rng, 5, 4, 6, field, 1);
            let v = random_matrix(4, 1, field, &mut rng);
            let y = random_vector(5, field, &mut rng);
            let ev = p.inner_solve_regularized(&v, 0.3, &y).unwrap();
            let lhs = &ev.m * ev.m.adjoint() * &ev.z + &ev.z * re(0.3);
            assert!(vec_norm(&(lhs - &ev.r)) <= 1e-10 * vec_norm(&ev.r));
            assert!(ev.value >= 0.0);
            let r_expected = -vec_of(&(p.a() * &v)) - &y * re(0.3);
            assert!(vec_norm(&(&ev.r - r_expected)) < 1e-14);
            // delta = (M^*M + eps I)^{-1} M^* r
            let gram = ev.m.adjoint() * &ev.m + CMat::identity(6, 6) * re(0.3);
            let delta = gram.lu().solve(&(ev.m.adjoint() * &ev.r)).unwrap();
            assert!(vec_norm(&(delta - &ev.delta_star)) <= 1e-10 * vec_norm(&ev.delta_star));
        }
    }

    #[test]
    fn zero_residual_gives_zero() {
        // A e1 = 0
        let a = from_rows(&[&[0.0, 1.0], &[0.0, 3.0]]);
        let p = NearnessProblem::new(a, PerturbationBasis::full(2, 2, Field::Real)).unwrap();
        let v = unit(0.0);
        let ev = p.inner_solve_regularized(&v, 0.5, &CVec::zeros(2)).unwrap();
        assert_eq!(ev.value, 0.0);
        assert_eq!(vec_norm(&ev.delta_star), 0.0);
        assert_eq!(fro_norm(&p.euclidean_gradient(&ev)), 0.0);
        assert_eq!(fro_norm(&p.hessian_vector(&ev, &CMat::zeros(2, 1))), 0.0);
    }

    #[test]
    fn companion_example() {
        // top row a^T = [a2, a1, a0], perturbations of the top row only
        let (a2, a1, a0) = (0.4, -1.3, 2.1);
        let a = from_rows(&[&[a2, a1, a0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let basis = PerturbationBasis::from_pattern(3, 3, Field::Real, &[(0, 0), (0, 1), (0, 2)]).unwrap();
        let p = NearnessProblem::new(a, basis).unwrap();
        assert!(!p.contains_a());
        let y = CVec::zeros(3);
        let e3 = CMat::from_column_slice(3, 1, &[re(0.0), re(0.0), re(1.0)]);
        for eps in [1.0, 0.1, 1e-4] {
            assert!(rel(value_at(&p, &e3, eps, &y), a0 * a0 / (1.0 + eps)) < 1e-14);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let v = random_matrix(3, 1, Field::Real, &mut rng);
            let v = &v / re(fro_norm(&v));
            let eps = 0.2;
            let atv = a2 * v[0].re + a1 * v[1].re + a0 * v[2].re;
            let expected = atv * atv / (1.0 + eps) + (v[0].norm_sqr() + v[1].norm_sqr()) / eps;
            assert!(rel(value_at(&p, &v, eps, &y), expected) < 1e-12);
        }
        let ex = p.inner_solve_exact(&e3);
        assert!(ex.feasible && rel(ex.value, a0 * a0) < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = diagonal_example();
        let v = unit(0.3);
        let y = CVec::zeros(2);
        let ev = p.inner_solve_regularized(&v, 0.1, &y).unwrap();
        let g = p.euclidean_gradient(&ev);
        let h = 1e-6;
        // tangent direction of the circle
        let w = CMat::from_column_slice(2, 1, &[re(-0.3f64.sin()), re(0.3f64.cos())]);
        let fd = (value_at(&p, &(&v + &w * re(h)), 0.1, &y) - value_at(&p, &(&v - &w * re(h)), 0.1, &y)) / (2.0 * h);
        assert!(rel(real_inner(&g, &w), fd) < 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for field in [Field::Real, Field::Complex] {
            for l in [1, 2] {
                let p = random_problem(&mut rng, 5, 4, 6, field, l);
                let v = random_matrix(4, l, field, &mut rng);
                let y = random_vector(5 * l, field, &mut rng);
                let ev = p.inner_solve_regularized(&v, 0.5, &y).unwrap();
                let g = p.euclidean_gradient(&ev);
                for _ in 0..5 {
                    let w = random_matrix(4, l, field, &mut rng);
                    let h = 1e-5;
                    let fd = (value_at(&p, &(&v + &w * re(h)), 0.5, &y) - value_at(&p, &(&v - &w * re(h)), 0.5, &y))
                        / (2.0 * h);
                    assert!(rel(real_inner(&g, &w), fd) < 1e-6, "{field:?} l={l}");
                }
            }
        }
    }

    #[test]
    fn gradient_hermitian_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for field in [Field::Real, Field::Complex] {
            let p = random_problem(&mut rng, 4, 4, 5, field, 1);
            let v = random_matrix(4, 1, field, &mut rng);
            let eps = 0.25;
            let ev = p.inner_solve_regularized(&v, eps, &CVec::zeros(4)).unwrap();
            let x_inv = (&ev.m * ev.m.adjoint() + CMat::identity(4, 4) * re(eps)).try_inverse().unwrap();
            let z = CMat::from_column_slice(4, 1, ev.z.as_slice());
            let mut h = p.a().adjoint() * x_inv * p.a();
            for i in 0..p.basis().len() {
                let pi = p.basis().element_dense(i);
                h -= pi.adjoint() * &z * z.adjoint() * pi;
            }
            let expected = h * &v * re(2.0);
            assert!(rel_mat(&p.euclidean_gradient(&ev), &expected) < 1e-11);
        }
    }

    #[test]
    fn hessian_matches_gradient_differences_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for field in [Field::Real, Field::Complex] {
            for l in [1, 2] {
                let p = random_problem(&mut rng, 5, 4, 6, field, l);
                let v = random_matrix(4, l, field, &mut rng);
                let y = random_vector(5 * l, field, &mut rng);
                let eps = 0.4;
                let ev = p.inner_solve_regularized(&v, eps, &y).unwrap();
                let grad_at = |x: &CMat| p.euclidean_gradient(&p.inner_solve_regularized(x, eps, &y).unwrap());
                for _ in 0..5 {
                    let w = random_matrix(4, l, field, &mut rng);
                    let hw = p.hessian_vector(&ev, &w);
                    let h = 1e-5;
                    let fd = (grad_at(&(&v + &w * re(h))) - grad_at(&(&v - &w * re(h)))) / re(2.0 * h);
                    assert!(rel_mat(&hw, &fd) < 1e-5, "{field:?} l={l}: {}", rel_mat(&hw, &fd));
                }
                for _ in 0..20 {
                    let w1 = random_matrix(4, l, field, &mut rng);
                    let w2 = random_matrix(4, l, field, &mut rng);
                    let a = real_inner(&p.hessian_vector(&ev, &w1), &w2);
                    let b = real_inner(&w1, &p.hessian_vector(&ev, &w2));
                    assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0));
                }
                assert_eq!(fro_norm(&p.hessian_vector(&ev, &CMat::zeros(4, l))), 0.0);
            }
        }
    }

    fn symmetric_toeplitz_basis() -> Vec<CMat> {
        let s2 = 2f64.sqrt();
        vec![
            CMat::identity(3, 3) / re(3f64.sqrt()),
            from_rows(&[&[0.0, 0.5, 0.0], &[0.5, 0.0, 0.5], &[0.0, 0.5, 0.0]]),
            from_rows(&[&[0.0, 0.0, 1.0 / s2], &[0.0, 0.0, 0.0], &[1.0 / s2, 0.0, 0.0]]),
        ]
    }

    #[test]
    fn projection_identity_on_symmetric_toeplitz() {
        let basis = PerturbationBasis::new(3, 3, Field::Real, &symmetric_toeplitz_basis()).unwrap();
        assert!(!basis.was_reorthonormalized());
        let a = from_rows(&[&[2.0, -1.0, 0.5], &[-1.0, 2.0, -1.0], &[0.5, -1.0, 2.0]]);
        let p = NearnessProblem::new(a, basis.clone()).unwrap();
        assert!(p.contains_a());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let v = random_matrix(3, 1, Field::Real, &mut rng);
            assert!(p.projection_identity_check(&v).unwrap());
        }

        let zero = NearnessProblem::new(CMat::zeros(3, 3), basis).unwrap();
        let v = random_matrix(3, 1, Field::Real, &mut rng);
        assert!(zero.projection_identity_check(&v).unwrap());
        assert_eq!(vec_norm(&zero.inner_solve_exact(&v).delta), 0.0);

        assert!(matches!(diagonal_example().projection_identity_check(&unit(0.2)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn kernel_of_all_blocks_is_infeasible() {
        // every block vanishes on e2
        let basis = PerturbationBasis::from_pattern(2, 2, Field::Real, &[(0, 0), (1, 0)]).unwrap();
        let p = NearnessProblem::new(from_rows(&[&[1.0, 1.0], &[0.0, 2.0]]), basis).unwrap();
        let ex = p.inner_solve_exact(&CMat::from_column_slice(2, 1, &[re(0.0), re(1.0)]));
        assert_eq!(vec_norm(&ex.delta), 0.0);
        assert!(!ex.feasible);
    }

    #[test]
    fn licq_examples() {
        let p = diagonal_example();
        let v = unit(0.0);
        let ev = p.inner_solve_regularized(&v, 1e-8, &CVec::zeros(2)).unwrap();
        let licq = p.licq_matrix(&v, &ev).unwrap();
        assert_eq!(licq.shape(), (4, 2));
        assert!(*singular_values(&licq).last().unwrap() > 1e-3);

        let full = NearnessProblem::new(CMat::zeros(3, 3), PerturbationBasis::full(3, 3, Field::Real)).unwrap();
        let v = CMat::from_column_slice(3, 1, &[re(1.0), re(0.0), re(0.0)]);
        let ev = full.inner_solve_regularized(&v, 0.1, &CVec::zeros(3)).unwrap();
        let s = singular_values(&full.licq_matrix(&v, &ev).unwrap());
        assert!(s[2] > 1e-12);

        // M = 0 and (I - vv^*) A^* = 0
        let basis = PerturbationBasis::from_pattern(2, 2, Field::Real, &[(0, 1)]).unwrap();
        let p = NearnessProblem::new(from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]), basis).unwrap();
        let v = unit(0.0);
        let ev = p.inner_solve_regularized(&v, 0.1, &CVec::zeros(2)).unwrap();
        let s = singular_values(&p.licq_matrix(&v, &ev).unwrap());
        assert!(s[1] < 1e-15);

        let frame = NearnessProblem::with_nullity(CMat::zeros(3, 3), PerturbationBasis::full(3, 3, Field::Real), 2).unwrap();
        let v = CMat::identity(3, 2);
        let ev = frame.inner_solve_regularized(&v, 0.1, &CVec::zeros(6)).unwrap();
        assert!(matches!(frame.licq_matrix(&v, &ev), Err(Error::Unsupported(_))));
    }

    #[test]
    fn regularization_is_monotone_and_converges() {
        let p = diagonal_example();
        let y = CVec::zeros(2);
        let v = unit(0.0);
        let mut prev = 0.0;
        for k in 2..=10 {
            let eps = 10f64.powi(-k);
            let f = value_at(&p, &v, eps, &y);
            assert!(f >= prev);
            assert!((f - 1.0).abs() <= 2.0 * eps);
            prev = f;
        }
        // infeasible point: f_eps grows like c / eps
        let e2 = unit(std::f64::consts::FRAC_PI_2);
        let c = value_at(&p, &e2, 1e-2, &y) * 1e-2;
        assert!(c > 0.0);
        for k in 3..=10 {
            let eps = 10f64.powi(-k);
            assert!(value_at(&p, &e2, eps, &y) >= 0.5 * c / eps);
        }
    }

    #[test]
    fn regularized_delta_converges_to_exact() {
        let p = diagonal_example();
        let v = unit(0.4);
        let exact = p.inner_solve_exact(&v).delta;
        let ev = p.inner_solve_regularized(&v, 1e-10, &CVec::zeros(2)).unwrap();
        assert!(vec_norm(&(ev.delta_star - &exact)) < 1e-6);
    }

    #[test]
    fn exact_value_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng, 4, 4, 10, Field::Complex, 1);
        let v = random_matrix(4, 1, Field::Complex, &mut rng);
        let base = p.inner_solve_exact(&v).value;
        for beta in [c64(0.3, -2.0), c64(-5.0, 0.1), re(1e-3)] {
            assert!(rel(p.inner_solve_exact(&(&v * beta)).value, base) < 1e-10);
        }
    }

    #[test]
    fn basis_validation() {
        let i2 = CMat::identity(2, 2) / re(2f64.sqrt());
        let dup = PerturbationBasis::new(2, 2, Field::Real, &[i2.clone(), i2.clone()]);
        assert!(matches!(dup, Err(Error::RankDeficientBasis { index: 1 })));

        let raw = [from_rows(&[&[2.0, 0.0], &[0.0, 0.0]]), from_rows(&[&[1.0, 3.0], &[0.0, 0.0]])];
        let b = PerturbationBasis::new(2, 2, Field::Real, &raw).unwrap();
        assert!(b.was_reorthonormalized());
        let g = b.gram();
        assert!(fro_norm(&(g - CMat::identity(2, 2))) < 1e-12);
        // same span
        for m in &raw {
            assert!(fro_norm(&(b.combine(&b.coordinates(m)) - m)) < 1e-12);
        }

        assert!(PerturbationBasis::new(2, 2, Field::Real, &[]).is_err());
        assert!(PerturbationBasis::new(2, 2, Field::Real, &[CMat::identity(3, 3)]).is_err());
        assert!(PerturbationBasis::new(2, 2, Field::Real, &[CMat::identity(2, 2) * c64(0.0, 1.0)]).is_err());
        assert!(PerturbationBasis::from_pattern(2, 2, Field::Real, &[(2, 0)]).is_err());
        assert!(NearnessProblem::new(CMat::zeros(3, 2), PerturbationBasis::full(2, 2, Field::Real)).is_err());
        assert!(NearnessProblem::with_nullity(CMat::zeros(2, 2), PerturbationBasis::full(2, 2, Field::Real), 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn regularized_value_bounded_by_residual(seed in any::<u64>(), eps in 1e-6f64..10.0) {
            // f_eps(v) <= ||r||^2 / eps and decreases in eps
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng, 4, 3, 4, Field::Complex, 1);
            let v = random_matrix(3, 1, Field::Complex, &mut rng);
            let y = CVec::zeros(4);
            let f1 = value_at(&p, &v, eps, &y);
            let f2 = value_at(&p, &v, 2.0 * eps, &y);
            let r2 = vec_norm(&p.rhs(&v)).powi(2);
            prop_assert!(f1 >= 0.0);
            prop_assert!(f1 <= r2 / eps * (1.0 + 1e-12));
            prop_assert!(f2 <= f1 * (1.0 + 1e-12));
        }

        #[test]
        fn exact_feasible_points_annihilate(seed in any::<u64>()) {
            // with p >= m the system is generically solvable
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_problem(&mut rng, 3, 3, 6, Field::Real, 1);
            let v = random_matrix(3, 1, Field::Real, &mut rng);
            let ex = p.inner_solve_exact(&v);
            prop_assert!(ex.feasible);
            prop_assert!(ex.residual <= 1e-10 * (fro_norm(p.a()) + fro_norm(&ex.perturbation)) * fro_norm(&v));
            prop_assert!((vec_norm(&ex.delta) - fro_norm(&ex.perturbation)).abs() <= 1e-12 * vec_norm(&ex.delta).max(1.0));
        }
    }
}
