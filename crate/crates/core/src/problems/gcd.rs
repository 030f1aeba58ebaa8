//! Approximate GCD of two polynomials as a structured singular-matrix problem.
//!
//! `gcd(p, q)` has degree at least `d` iff the scaled Sylvester-type matrix
//! `S_d(p, q) = [T_{n-d}(p) / sqrt(n-d+1), T_{m-d}(q) / sqrt(m-d+1)]` is
//! singular (`m = deg p`, `n = deg q`). The scaling makes
//! `||S_d(dp, dq)||_F = ||(dp, dq)||`, so the unit-coefficient matrices form an
//! orthonormal basis of the structure space.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{lstsq, re, vec_norm, CMat, CVec, Field, C64};
use crate::oracle::{NearnessProblem, PerturbationBasis, RANK_TOL};
use crate::outer::{self, Solution, SolverConfig};

/// Relative size below which the leading coefficient of an extracted `g`
/// counts as zero.
pub const DEGREE_DEFICIENCY_TOL: f64 = 1e-8;

/// Coefficient vectors are stored lowest degree first.
#[derive(Debug, Clone)]
pub struct GcdProblem {
    p: CVec,
    q: CVec,
    d: usize,
    field: Field,
}

/// Scalar Toeplitz (convolution) matrix: `T_k(c) x = c * x` for `deg x <= k`.
pub fn convolution_matrix(c: &CVec, k: usize) -> CMat {
    let len = c.len();
    let mut t = CMat::zeros(len + k, k + 1);
    for j in 0..=k {
        for i in 0..len {
            t[(i + j, j)] = c[i];
        }
    }
    t
}

pub fn poly_mul(a: &CVec, b: &CVec) -> CVec {
    convolution_matrix(a, b.len() - 1) * b
}

/// Coefficients of the derivative.
pub fn derivative(p: &CVec) -> CVec {
    if p.len() <= 1 {
        return CVec::zeros(1);
    }
    CVec::from_iterator(p.len() - 1, (1..p.len()).map(|i| p[i] * re(i as f64)))
}

/// Monic polynomial `prod (x - r_i)`, lowest degree first.
pub fn from_roots(roots: &[C64]) -> CVec {
    let mut p = CVec::from_element(1, re(1.0));
    for &r in roots {
        p = poly_mul(&p, &CVec::from_vec(vec![-r, re(1.0)]));
    }
    p
}

fn normalized(p: &CVec) -> CVec {
    p / re(vec_norm(p))
}

impl GcdProblem {
    /// Both polynomials are scaled to unit coefficient norm.
    pub fn new(p: CVec, q: CVec, d: usize, field: Field) -> Result<Self> {
        for (name, c) in [("p", &p), ("q", &q)] {
            if c.len() < 2 {
                return Err(Error::InvalidInput(format!("{name} must have degree at least 1")));
            }
            if c[c.len() - 1].norm() == 0.0 {
                return Err(Error::InvalidInput(format!("{name} has a zero leading coefficient")));
            }
            if c.iter().any(|x| !(x.re.is_finite() && x.im.is_finite())) {
                return Err(Error::NonFinite(format!("coefficients of {name}")));
            }
            if field == Field::Real && c.iter().any(|x| x.im != 0.0) {
                return Err(Error::InvalidInput(format!("{name} is complex but the field is real")));
            }
        }
        let (m, n) = (p.len() - 1, q.len() - 1);
        if d == 0 || d > m.min(n) {
            return Err(Error::config("degree", format!("must lie in 1..={}, got {d}", m.min(n))));
        }
        Ok(GcdProblem { p: normalized(&p), q: normalized(&q), d, field })
    }

    pub fn p(&self) -> &CVec {
        &self.p
    }

    pub fn q(&self) -> &CVec {
        &self.q
    }

    pub fn degree(&self) -> usize {
        self.d
    }

    fn degrees(&self) -> (usize, usize) {
        (self.p.len() - 1, self.q.len() - 1)
    }

    /// `S_d(a, b)` for coefficient vectors shaped like `p` and `q`.
    pub fn sylvester(&self, a: &CVec, b: &CVec) -> CMat {
        let (m, n) = self.degrees();
        let d = self.d;
        let left = convolution_matrix(a, n - d) / re(((n - d + 1) as f64).sqrt());
        let right = convolution_matrix(b, m - d) / re(((m - d + 1) as f64).sqrt());
        let mut s = CMat::zeros(m + n - d + 1, left.ncols() + right.ncols());
        s.columns_mut(0, left.ncols()).copy_from(&left);
        s.columns_mut(left.ncols(), right.ncols()).copy_from(&right);
        s
    }

    /// `S_d` of every unit coefficient of `p`, then of `q`.
    pub fn basis(&self) -> Result<PerturbationBasis> {
        let (m, n) = self.degrees();
        let mut blocks = Vec::with_capacity(m + n + 2);
        for i in 0..=m {
            let mut e = CVec::zeros(m + 1);
            e[i] = re(1.0);
            blocks.push(self.sylvester(&e, &CVec::zeros(n + 1)));
        }
        for i in 0..=n {
            let mut e = CVec::zeros(n + 1);
            e[i] = re(1.0);
            blocks.push(self.sylvester(&CVec::zeros(m + 1), &e));
        }
        let (rows, cols) = blocks[0].shape();
        PerturbationBasis::new(rows, cols, self.field, &blocks)
    }

    pub fn nearness_problem(&self) -> Result<NearnessProblem> {
        NearnessProblem::new(self.sylvester(&self.p, &self.q), self.basis()?)
    }

    /// Splits a kernel vector `[u; w]` of `S_d` into cofactors and fits `g` by
    /// least squares so that `p ~ g * cp` and `q ~ g * cq`.
    pub fn extract(&self, v: &CVec) -> GcdFactors {
        let (m, n) = self.degrees();
        let d = self.d;
        let split = n - d + 1;
        // p u / sqrt(n-d+1) + q w / sqrt(m-d+1) = 0, so p ~ w and q ~ -u up to scaling.
        let cp = CVec::from_iterator(m - d + 1, (0..m - d + 1).map(|i| v[split + i]));
        let cq = CVec::from_iterator(split, (0..split).map(|i| -v[i]));
        let top = convolution_matrix(&cp, d);
        let bottom = convolution_matrix(&cq, d);
        let mut sys = CMat::zeros(top.nrows() + bottom.nrows(), d + 1);
        sys.rows_mut(0, top.nrows()).copy_from(&top);
        sys.rows_mut(top.nrows(), bottom.nrows()).copy_from(&bottom);
        let mut rhs = CVec::zeros(m + n + 2);
        rhs.rows_mut(0, m + 1).copy_from(&self.p);
        rhs.rows_mut(m + 1, n + 1).copy_from(&self.q);
        let g = lstsq(&sys, &rhs, RANK_TOL);
        let fitted_p = poly_mul(&g, &cp);
        let fitted_q = poly_mul(&g, &cq);
        let delta_p = &fitted_p - &self.p;
        let delta_q = &fitted_q - &self.q;
        let certified = (vec_norm(&delta_p).powi(2) + vec_norm(&delta_q).powi(2)).sqrt();
        let degree_deficient = !(g[d].norm() > DEGREE_DEFICIENCY_TOL * vec_norm(&g));
        GcdFactors { g, cp, cq, delta_p, delta_q, certified, degree_deficient }
    }
}

#[derive(Debug, Clone)]
pub struct GcdFactors {
    pub g: CVec,
    /// Cofactor of `p`: `p + delta_p = g * cp`.
    pub cp: CVec,
    /// Cofactor of `q`: `q + delta_q = g * cq`.
    pub cq: CVec,
    pub delta_p: CVec,
    pub delta_q: CVec,
    /// `||(p - g cp, q - g cq)||`.
    pub certified: f64,
    /// The leading coefficient of `g` vanished, so `g` has degree below `d`.
    pub degree_deficient: bool,
}

#[derive(Debug, Clone)]
pub struct GcdSolution {
    pub factors: GcdFactors,
    /// Certified distance, equal to `factors.certified`.
    pub distance: f64,
    /// Distance of the structured singular-matrix solve.
    pub structured_distance: f64,
    pub solution: Solution,
}

/// Recomputes `||(p - g cp, q - g cq)||` from the returned polynomials.
pub fn certified_residual(p: &CVec, q: &CVec, g: &CVec, cp: &CVec, cq: &CVec) -> f64 {
    let dp = poly_mul(g, cp) - p;
    let dq = poly_mul(g, cq) - q;
    (vec_norm(&dp).powi(2) + vec_norm(&dq).powi(2)).sqrt()
}

/// Multistart solve; each replica is extracted and the smallest certified
/// residual wins (ties go to the lower seed).
pub fn gcd_solve(problem: &GcdProblem, cfg: &SolverConfig) -> Result<GcdSolution> {
    cfg.validate()?;
    let nearness = problem.nearness_problem()?;
    let manifold = outer::manifold_for(&nearness)?;
    let results: Vec<Result<GcdSolution>> = (0..cfg.multistart as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i);
            let x0 = outer::starting_point(&manifold, seed);
            let solution = outer::solve_from(&nearness, &manifold, &x0, cfg, seed)?;
            let factors = problem.extract(&CVec::from_column_slice(solution.point.as_slice()));
            Ok(GcdSolution {
                distance: factors.certified,
                structured_distance: solution.distance,
                factors,
                solution,
            })
        })
        .collect();
    let mut best: Option<GcdSolution> = None;
    let mut first_err = None;
    for res in results {
        match res {
            Ok(sol) => {
                if best.as_ref().is_none_or(|b| sol.distance < b.distance) {
                    best = Some(sol);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| Error::SolverFailed(first_err.map_or_else(|| "no replicas".to_string(), |e| e.to_string())))
}
