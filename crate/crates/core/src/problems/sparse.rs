//! Nearest singular matrix with a prescribed sparsity pattern.
//!
//! With unit basis matrices `e_i e_j^*` the Gram matrix `M M^*` is diagonal,
//! `d_i = sum_{(i,j) in J} |v_j|^2`, so every oracle quantity costs
//! `O(|J| + nnz(A))`.

use crate::error::{Error, Result};
use crate::linalg::{re, vec_norm, CMat, CVec, Field, C64};
use crate::oracle::{ExactSolve, NearnessProblem, Oracle, PerturbationBasis, FEAS_TOL, RANK_TOL};

/// Rows of `d` at or below this threshold are treated as numerically null
/// by [`SparseProblem::feasibility_refine`].
pub const REFINE_THRESHOLD: f64 = 1e-16;

/// Coordinate-format sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize, mut entries: Vec<(usize, usize, C64)>) -> Result<Self> {
        for &(i, j, x) in &entries {
            if i >= rows || j >= cols {
                return Err(Error::InvalidInput(format!("entry ({i}, {j}) outside {rows}x{cols}")));
            }
            if !(x.re.is_finite() && x.im.is_finite()) {
                return Err(Error::NonFinite(format!("entry ({i}, {j})")));
            }
        }
        entries.sort_by_key(|&(i, j, _)| (i, j));
        Ok(SparseMatrix { rows, cols, entries })
    }

    pub fn from_dense(a: &CMat) -> Self {
        let mut entries = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != re(0.0) {
                    entries.push((i, j, a[(i, j)]));
                }
            }
        }
        SparseMatrix { rows: a.nrows(), cols: a.ncols(), entries }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn pattern(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|&(i, j, _)| (i, j)).collect()
    }

    pub fn mul_vec(&self, v: &CVec) -> CVec {
        let mut out = CVec::zeros(self.rows);
        for &(i, j, x) in &self.entries {
            out[i] += x * v[j];
        }
        out
    }

    pub fn adjoint_mul_vec(&self, z: &CVec) -> CVec {
        let mut out = CVec::zeros(self.cols);
        for &(i, j, x) in &self.entries {
            out[j] += x.conj() * z[i];
        }
        out
    }

    pub fn to_dense(&self) -> CMat {
        let mut a = CMat::zeros(self.rows, self.cols);
        for &(i, j, x) in &self.entries {
            a[(i, j)] += x;
        }
        a
    }
}

#[derive(Debug, Clone)]
pub struct SparseProblem {
    a: SparseMatrix,
    field: Field,
    pattern: Vec<(usize, usize)>,
    /// Column indices of the pattern in each row.
    by_row: Vec<Vec<usize>>,
}

/// Per-evaluation workspace of the sparse fast path.
#[derive(Debug, Clone)]
pub struct SparseEval {
    pub av: CVec,
    /// `A v + eps y`, i.e. `-r`.
    pub s: CVec,
    pub d: Vec<f64>,
    pub z: CVec,
    pub value: f64,
    pub eps: f64,
}

impl SparseProblem {
    pub fn new(a: SparseMatrix, pattern: &[(usize, usize)], field: Field) -> Result<Self> {
        if pattern.is_empty() {
            return Err(Error::InvalidInput("sparsity pattern is empty".into()));
        }
        if field == Field::Real && a.entries.iter().any(|e| e.2.im != 0.0) {
            return Err(Error::InvalidInput("complex matrix with a real field".into()));
        }
        let (m, n) = a.shape();
        let mut by_row = vec![Vec::new(); m];
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in pattern {
            if i >= m || j >= n {
                return Err(Error::InvalidInput(format!("pattern index ({i}, {j}) outside {m}x{n}")));
            }
            if !seen.insert((i, j)) {
                return Err(Error::InvalidInput(format!("pattern index ({i}, {j}) repeated")));
            }
            by_row[i].push(j);
        }
        Ok(SparseProblem { a, field, pattern: pattern.to_vec(), by_row })
    }

    /// Pattern equal to the nonzeros of `A`.
    pub fn with_own_pattern(a: SparseMatrix, field: Field) -> Result<Self> {
        let pattern = a.pattern();
        Self::new(a, &pattern, field)
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.a
    }

    pub fn pattern(&self) -> &[(usize, usize)] {
        &self.pattern
    }

    /// The same problem through the generic oracle, with the basis ordered
    /// like the pattern.
    pub fn to_generic(&self) -> Result<NearnessProblem> {
        let (m, n) = self.a.shape();
        let basis = PerturbationBasis::from_pattern(m, n, self.field, &self.pattern)?;
        NearnessProblem::new(self.a.to_dense(), basis)
    }

    fn gram_diagonal(&self, v: &CVec) -> Vec<f64> {
        self.by_row.iter().map(|cols| cols.iter().map(|&j| v[j].norm_sqr()).sum()).collect()
    }

    pub fn evaluate(&self, v: &CVec, eps: f64, y: &CVec) -> SparseEval {
        let av = self.a.mul_vec(v);
        let s = &av + y * re(eps);
        let d = self.gram_diagonal(v);
        let mut value = 0.0;
        let z = CVec::from_iterator(
            s.len(),
            s.iter().zip(&d).map(|(&si, &di)| {
                value += si.norm_sqr() / (di + eps);
                -si / (di + eps)
            }),
        );
        SparseEval { av, s, d, z, value, eps }
    }

    /// `sum_{i: (i,j) in J} |z_i|^2` for each column `j`.
    fn column_weights(&self, z: &CVec) -> Vec<f64> {
        let mut f = vec![0.0; self.a.cols];
        for &(i, j) in &self.pattern {
            f[j] += z[i].norm_sqr();
        }
        f
    }

    /// `-2 A^* z - 2 f .* v`.
    pub fn gradient(&self, v: &CVec, eval: &SparseEval) -> CVec {
        let f = self.column_weights(&eval.z);
        let az = self.a.adjoint_mul_vec(&eval.z);
        CVec::from_iterator(v.len(), (0..v.len()).map(|j| (az[j] + v[j] * re(f[j])) * re(-2.0)))
    }

    pub fn hessian_vector(&self, v: &CVec, eval: &SparseEval, w: &CVec) -> CVec {
        let aw = self.a.mul_vec(w);
        // e_i = sum_{j in J_i} v_j conj(w_j); zdot_i = -((A w)_i + 2 Re(e_i) z_i) / (d_i + eps)
        let zdot = CVec::from_iterator(
            aw.len(),
            (0..aw.len()).map(|i| {
                let e: f64 = self.by_row[i].iter().map(|&j| (v[j] * w[j].conj()).re).sum();
                -(aw[i] + eval.z[i] * re(2.0 * e)) / (eval.d[i] + eval.eps)
            }),
        );
        let f = self.column_weights(&eval.z);
        let mut cross = vec![0.0; v.len()];
        for &(i, j) in &self.pattern {
            cross[j] += (eval.z[i].conj() * zdot[i]).re;
        }
        let az = self.a.adjoint_mul_vec(&zdot);
        CVec::from_iterator(
            v.len(),
            (0..v.len()).map(|j| -(w[j] * re(2.0 * f[j]) + v[j] * re(4.0 * cross[j]) + az[j] * re(2.0))),
        )
    }

    pub fn exact_vec(&self, v: &CVec) -> ExactSolve {
        let (m, n) = self.a.shape();
        let r = -self.a.mul_vec(v);
        let d = self.gram_diagonal(v);
        let dmax = d.iter().copied().fold(0.0, f64::max);
        let cutoff = RANK_TOL * RANK_TOL * dmax;
        let kept = |i: usize| d[i] > cutoff && d[i] > 0.0;
        let delta = CVec::from_iterator(
            self.pattern.len(),
            self.pattern.iter().map(|&(i, j)| if kept(i) { v[j].conj() * r[i] / d[i] } else { re(0.0) }),
        );
        let miss: f64 = (0..m).filter(|&i| !kept(i)).map(|i| r[i].norm_sqr()).sum::<f64>().sqrt();
        let feasible = miss <= FEAS_TOL * vec_norm(&r);
        let mut perturbation = CMat::zeros(m, n);
        for (&(i, j), &x) in self.pattern.iter().zip(delta.iter()) {
            perturbation[(i, j)] += x;
        }
        let mut resid = self.a.mul_vec(v);
        for (&(i, j), &x) in self.pattern.iter().zip(delta.iter()) {
            resid[i] += x * v[j];
        }
        ExactSolve {
            value: vec_norm(&delta).powi(2),
            feasible,
            delta,
            perturbation,
            residual: vec_norm(&resid),
            lambda: None,
        }
    }

    /// Drops the components of `r = -A v` on rows whose Gram entry `d_i` is
    /// numerically zero, maps back through `A^{-1}` and renormalizes. Returns
    /// the refined point and its exact evaluation.
    pub fn feasibility_refine(&self, v: &CVec) -> Result<(CVec, ExactSolve)> {
        let (m, n) = self.a.shape();
        if m != n {
            return Err(Error::InvalidInput("feasibility refinement needs a square matrix".into()));
        }
        let lu = self.a.to_dense().lu();
        let r = -self.a.mul_vec(v);
        let d = self.gram_diagonal(v);
        let r_reg = CVec::from_iterator(m, (0..m).map(|i| if d[i] > REFINE_THRESHOLD { r[i] } else { re(0.0) }));
        let sol = lu
            .solve(&(-r_reg))
            .filter(|x| x.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
            .ok_or_else(|| Error::InvalidInput("feasibility refinement needs a nonsingular matrix".into()))?;
        let norm = vec_norm(&sol);
        if !(norm > 0.0) {
            return Err(Error::InvalidInput("refined point vanishes".into()));
        }
        let v_reg = sol / re(norm);
        let exact = self.exact_vec(&v_reg);
        Ok((v_reg, exact))
    }
}

fn column(v: &CMat) -> CVec {
    CVec::from_column_slice(v.as_slice())
}

fn as_mat(v: CVec) -> CMat {
    let n = v.len();
    CMat::from_column_slice(n, 1, v.as_slice())
}

impl Oracle for SparseProblem {
    type Eval = SparseEval;

    fn point_shape(&self) -> (usize, usize) {
        (self.a.cols, 1)
    }

    fn field(&self) -> Field {
        self.field
    }

    fn constraint_len(&self) -> usize {
        self.a.rows
    }

    fn regularized(&self, v: &CMat, eps: f64, y: &CVec) -> SparseEval {
        self.evaluate(&column(v), eps, y)
    }

    fn value(&self, eval: &SparseEval) -> f64 {
        eval.value
    }

    fn gradient(&self, v: &CMat, eval: &SparseEval) -> CMat {
        as_mat(SparseProblem::gradient(self, &column(v), eval))
    }

    fn hessian_vector(&self, v: &CMat, eval: &SparseEval, w: &CMat) -> Option<CMat> {
        Some(as_mat(SparseProblem::hessian_vector(self, &column(v), eval, &column(w))))
    }

    /// `(A + Delta_*) v = A v + M M^* z` with `M M^* = diag(d)`.
    fn constraint(&self, _v: &CMat, eval: &SparseEval) -> CVec {
        CVec::from_iterator(
            eval.av.len(),
            (0..eval.av.len()).map(|i| eval.av[i] + eval.z[i] * re(eval.d[i])),
        )
    }

    fn sigma_min(&self, eval: &SparseEval) -> f64 {
        eval.d.iter().copied().fold(f64::INFINITY, f64::min).sqrt()
    }

    fn exact(&self, v: &CMat) -> ExactSolve {
        self.exact_vec(&column(v))
    }

    fn refine(&self, v: &CMat) -> Option<CMat> {
        self.feasibility_refine(&column(v)).ok().map(|(x, _)| as_mat(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{fro_norm, from_rows, random_matrix, random_vector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, field: Field) -> SparseProblem {
        let m = rng.random_range(2..7);
        let n = rng.random_range(2..7);
        let dense = random_matrix(m, n, field, rng);
        let mut entries = Vec::new();
        let mut pattern = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if rng.random_bool(0.5) {
                    entries.push((i, j, dense[(i, j)]));
                }
                if rng.random_bool(0.6) || (i == 0 && j == 0) {
                    pattern.push((i, j));
                }
            }
        }
        SparseProblem::new(SparseMatrix::new(m, n, entries).unwrap(), &pattern, field).unwrap()
    }

    fn rel(x: f64, y: f64) -> f64 {
        (x - y).abs() / y.abs().max(1e-300)
    }

    fn rel_vec(x: &CVec, y: &CVec) -> f64 {
        vec_norm(&(x - y)) / vec_norm(y).max(1e-300)
    }

    #[test]
    fn matches_generic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for k in 0..50 {
            let field = if k % 2 == 0 { Field::Real } else { Field::Complex };
            let sp = random_instance(&mut rng, field);
            let gen = sp.to_generic().unwrap();
            let (m, n) = sp.matrix().shape();
            let v = random_matrix(n, 1, field, &mut rng);
            let y = random_vector(m, field, &mut rng);
            let eps = 10f64.powf(rng.random_range(-4.0..0.5));
            let fast = Oracle::regularized(&sp, &v, eps, &y);
            let slow = gen.inner_solve_regularized(&v, eps, &y).unwrap();
            assert!(rel(fast.value, slow.value) < 1e-11, "value {k}");
            let g_fast = Oracle::gradient(&sp, &v, &fast);
            let g_slow = gen.euclidean_gradient(&slow);
            assert!(fro_norm(&(&g_fast - &g_slow)) <= 1e-11 * fro_norm(&g_slow).max(1e-300), "gradient {k}");
            let w = random_matrix(n, 1, field, &mut rng);
            let h_fast = Oracle::hessian_vector(&sp, &v, &fast, &w).unwrap();
            let h_slow = gen.hessian_vector(&slow, &w);
            assert!(fro_norm(&(&h_fast - &h_slow)) <= 1e-10 * fro_norm(&h_slow).max(1e-300), "hessian {k}");
            let c_fast = Oracle::constraint(&sp, &v, &fast);
            let c_slow = Oracle::constraint(&gen, &v, &slow);
            assert!(vec_norm(&(&c_fast - &c_slow)) <= 1e-11 * vec_norm(&c_slow).max(1.0), "constraint {k}");

            let e_fast = sp.exact_vec(&CVec::from_column_slice(v.as_slice()));
            let e_slow = gen.inner_solve_exact(&v);
            assert_eq!(e_fast.feasible, e_slow.feasible);
            if e_slow.feasible {
                assert!(rel(e_fast.value, e_slow.value) < 1e-10, "exact {k}");
            }
        }
    }

    #[test]
    fn sparse_products() {
        let a = SparseMatrix::new(2, 3, vec![(1, 2, re(4.0)), (0, 0, re(1.0)), (0, 1, crate::linalg::c64(0.0, 2.0))]).unwrap();
        assert_eq!(a.entries()[0], (0, 0, re(1.0)));
        assert_eq!(a.nnz(), 3);
        let dense = a.to_dense();
        let v = CVec::from_vec(vec![re(1.0), re(2.0), re(3.0)]);
        assert_eq!(a.mul_vec(&v), &dense * &v);
        let z = CVec::from_vec(vec![re(1.0), re(-1.0)]);
        assert_eq!(a.adjoint_mul_vec(&z), dense.adjoint() * &z);
        assert_eq!(SparseMatrix::from_dense(&dense), a);
        assert!(SparseMatrix::new(2, 2, vec![(2, 0, re(1.0))]).is_err());
        assert!(SparseMatrix::new(2, 2, vec![(0, 0, re(f64::NAN))]).is_err());
    }

    #[test]
    fn pattern_validation() {
        let a = SparseMatrix::from_dense(&from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
        assert!(SparseProblem::new(a.clone(), &[], Field::Real).is_err());
        assert!(SparseProblem::new(a.clone(), &[(0, 0), (0, 0)], Field::Real).is_err());
        assert!(SparseProblem::new(a.clone(), &[(0, 2)], Field::Real).is_err());
        let own = SparseProblem::with_own_pattern(a, Field::Real).unwrap();
        assert_eq!(own.pattern(), &[(0, 0), (1, 1)]);
    }

    #[test]
    fn refinement_trivial_case() {
        let a = SparseMatrix::from_dense(&from_rows(&[&[2.0, 1.0, 0.0], &[0.0, 3.0, 1.0], &[1.0, 0.0, 4.0]]));
        let sp = SparseProblem::with_own_pattern(a, Field::Real).unwrap();
        let v = CVec::from_vec(vec![re(0.6), re(-0.8), re(0.5)]);
        let (v_reg, exact) = sp.feasibility_refine(&v).unwrap();
        let scaled = &v / re(vec_norm(&v));
        assert!(rel_vec(&v_reg, &scaled) < 1e-14);
        assert!(rel(exact.value, sp.exact_vec(&v).value) < 1e-12);
    }

    #[test]
    fn refinement_removes_negligible_rows() {
        // upper triangular, diagonal pattern; near e1 the second Gram entry is 1e-40
        let a = SparseMatrix::from_dense(&from_rows(&[&[1.0, 1.0, 0.0], &[0.0, 2.0, 1.0], &[0.0, 0.0, 3.0]]));
        let sp = SparseProblem::new(a, &[(0, 0), (1, 1), (2, 2)], Field::Real).unwrap();
        let mut v = CVec::from_vec(vec![re(1.0), re(1e-20), re(0.0)]);
        v /= re(vec_norm(&v));
        let eps = 1e-10;
        let f_eps = sp.evaluate(&v, eps, &CVec::zeros(3)).value;
        assert!(sp.evaluate(&v, eps, &CVec::zeros(3)).d[1] < 1e-39);
        let (v_reg, exact) = sp.feasibility_refine(&v).unwrap();
        assert!(exact.feasible);
        assert!((exact.value - f_eps).abs() < 1e-8, "{} vs {f_eps}", exact.value);
        assert!((v_reg[0].norm() - 1.0).abs() < 1e-15);

        let singular = SparseMatrix::from_dense(&from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]));
        let sp = SparseProblem::with_own_pattern(singular, Field::Real).unwrap();
        assert!(sp.feasibility_refine(&CVec::from_vec(vec![re(1.0), re(0.0)])).is_err());
    }

    #[test]
    fn refined_solve_keeps_the_better_point() {
        let a = SparseMatrix::from_dense(&from_rows(&[&[1.0, 1.0], &[0.0, 2.0]]));
        let sp = SparseProblem::with_own_pattern(a, Field::Real).unwrap();
        let cfg = crate::outer::SolverConfig { mu: 0.5, multistart: 3, refine: true, ..Default::default() };
        let sol = crate::outer::solve(&sp, &cfg).unwrap();
        assert!(sol.feasible);
        assert!(sol.distance <= 1.0 + 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn sparse_value_is_a_sum_of_row_terms(seed in any::<u64>(), eps in 1e-5f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sp = random_instance(&mut rng, Field::Complex);
            let (m, n) = sp.matrix().shape();
            let v = random_vector(n, Field::Complex, &mut rng);
            let ev = sp.evaluate(&v, eps, &CVec::zeros(m));
            prop_assert!(ev.value >= 0.0);
            prop_assert!(ev.value <= vec_norm(&ev.av).powi(2) / eps * (1.0 + 1e-12));
            let total: f64 = ev.d.iter().sum();
            let direct: f64 = sp.pattern().iter().map(|&(_, j)| v[j].norm_sqr()).sum();
            prop_assert!((total - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }
}
