//! Distance to instability: the nearest `A + Delta` with an eigenvalue in a
//! closed target region.
//!
//! For fixed `v` the optimal eigenvalue has a closed form. With
//! `X = M M^* + eps I`, `s = A v + eps y`, `a = v^* X^{-1} v`,
//! `b = v^* X^{-1} s` and `c = s^* X^{-1} s`, the regularized value at shift
//! `lambda` is `a |lambda - lambda_0|^2 + c - |b|^2 / a` with
//! `lambda_0 = b / a`, minimized over the region by projecting `lambda_0`.

use nalgebra::Schur;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, fro_norm, re, singular_values, CMat, CVec, Field, ThinSvd, C64};
use crate::oracle::{
    exact_from_parts, regularized_from_parts, vec_of, ExactSolve, InnerEvaluation, NearnessProblem, Oracle,
    PerturbationBasis, RANK_TOL,
};
use crate::outer::{self, Solution, SolverConfig};

/// Closed target set for the destabilizing eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    /// `Re z >= c`.
    HalfPlaneComplement { c: f64 },
    /// `|z| >= rho`.
    DiscComplement { rho: f64 },
    /// `|z| <= rho`.
    ClosedDisc { rho: f64 },
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Region::HalfPlaneComplement { c } => c.is_finite(),
            Region::DiscComplement { rho } | Region::ClosedDisc { rho } => rho.is_finite() && rho >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("region", format!("invalid parameters in {self:?}")))
        }
    }

    pub fn contains(&self, z: C64) -> bool {
        match *self {
            Region::HalfPlaneComplement { c } => z.re >= c,
            Region::DiscComplement { rho } => z.norm() >= rho,
            Region::ClosedDisc { rho } => z.norm() <= rho,
        }
    }

    /// Nearest point of the region. On the medial axis of the disc
    /// complement (`z = 0`) the result is `+rho`.
    pub fn project(&self, z: C64) -> C64 {
        if self.contains(z) {
            return z;
        }
        match *self {
            Region::HalfPlaneComplement { c } => c64(c, z.im),
            Region::DiscComplement { rho } => {
                let r = z.norm();
                if r == 0.0 {
                    re(rho)
                } else {
                    z * (rho / r)
                }
            }
            Region::ClosedDisc { rho } => z * (rho / z.norm()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InstabilityEvaluation {
    pub a: f64,
    pub b: C64,
    pub c: f64,
    pub lambda0: C64,
    pub lambda_star: C64,
    pub value: f64,
    /// Regularized inner solve at the shifted matrix `A - lambda_* I`.
    pub inner: InnerEvaluation,
}

#[derive(Debug, Clone)]
pub struct InstabilityProblem {
    inner: NearnessProblem,
    region: Region,
}

fn dot(x: &CVec, y: &CVec) -> C64 {
    x.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum()
}

impl InstabilityProblem {
    /// The field must be complex; real-restricted perturbations change the
    /// problem and are rejected.
    pub fn new(a: CMat, basis: PerturbationBasis, region: Region) -> Result<Self> {
        region.validate()?;
        if a.nrows() != a.ncols() {
            return Err(Error::dim("instability", "square matrix", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if basis.field() != Field::Complex {
            return Err(Error::Unsupported("distance to instability needs complex perturbations".into()));
        }
        Ok(InstabilityProblem { inner: NearnessProblem::new(a, basis)?, region })
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn matrix(&self) -> &CMat {
        self.inner.a()
    }

    pub fn basis(&self) -> &PerturbationBasis {
        self.inner.basis()
    }

    pub fn evaluate(&self, v: &CMat, eps: f64, y: &CVec) -> InstabilityEvaluation {
        let a_mat = self.inner.a();
        let m = self.inner.assemble_m(v);
        let vv = vec_of(v);
        let s = vec_of(&(a_mat * v)) + y * re(eps);
        let svd = ThinSvd::new(&m);
        let xv = svd.shifted_solve(eps, &vv);
        let xs = svd.shifted_solve(eps, &s);
        let a = dot(&vv, &xv).re;
        let b = dot(&vv, &xs);
        let c = dot(&s, &xs).re;
        let lambda0 = b / a;
        let lambda_star = self.region.project(lambda0);
        let value = a * (lambda_star - lambda0).norm_sqr() + c - b.norm_sqr() / a;
        let r = &vv * lambda_star - &s;
        let inner = regularized_from_parts(self.inner.basis(), m, r, eps);
        InstabilityEvaluation { a, b, c, lambda0, lambda_star, value, inner }
    }

    /// `-2 (A - lambda_* I + Delta_*)^* z`, treating `lambda_*` as a constant.
    pub fn gradient_of(&self, eval: &InstabilityEvaluation) -> CMat {
        let n = self.inner.a().nrows();
        let shifted = self.inner.a() - CMat::identity(n, n) * eval.lambda_star + &eval.inner.delta_mat;
        let z = CMat::from_column_slice(n, 1, eval.inner.z.as_slice());
        shifted.adjoint() * z * re(-2.0)
    }

    /// Exact value: the pseudoinverse version of the same closed form picks
    /// `lambda_*`, then the exact oracle runs on `A - lambda_* I`.
    pub fn exact_of(&self, v: &CMat) -> ExactSolve {
        let a_mat = self.inner.a();
        let n = a_mat.nrows();
        let m = self.inner.assemble_m(v);
        let vv = vec_of(v);
        let av = vec_of(&(a_mat * v));
        let svd = ThinSvd::new(&m);
        let pv = svd.pinv_apply(&vv, RANK_TOL);
        let pav = svd.pinv_apply(&av, RANK_TOL);
        let a = dot(&pv, &pv).re;
        let lambda0 = if a > 0.0 { dot(&pv, &pav) / a } else { dot(&vv, &av) };
        let lambda_star = self.region.project(lambda0);
        let shifted = a_mat - CMat::identity(n, n) * lambda_star;
        let r = -vec_of(&(&shifted * v));
        let mut ex = exact_from_parts(&shifted, self.inner.basis(), v, &m, &r);
        ex.lambda = Some(lambda_star);
        ex
    }
}

impl Oracle for InstabilityProblem {
    type Eval = InstabilityEvaluation;

    fn point_shape(&self) -> (usize, usize) {
        (self.inner.a().ncols(), 1)
    }

    fn field(&self) -> Field {
        Field::Complex
    }

    fn constraint_len(&self) -> usize {
        self.inner.a().nrows()
    }

    fn regularized(&self, v: &CMat, eps: f64, y: &CVec) -> InstabilityEvaluation {
        self.evaluate(v, eps, y)
    }

    fn value(&self, eval: &InstabilityEvaluation) -> f64 {
        eval.value
    }

    fn gradient(&self, _v: &CMat, eval: &InstabilityEvaluation) -> CMat {
        self.gradient_of(eval)
    }

    fn has_hessian(&self) -> bool {
        false
    }

    fn hessian_vector(&self, _v: &CMat, _eval: &InstabilityEvaluation, _w: &CMat) -> Option<CMat> {
        None
    }

    fn constraint(&self, v: &CMat, eval: &InstabilityEvaluation) -> CVec {
        let n = self.inner.a().nrows();
        let shifted = self.inner.a() - CMat::identity(n, n) * eval.lambda_star + &eval.inner.delta_mat;
        vec_of(&(shifted * v))
    }

    fn sigma_min(&self, eval: &InstabilityEvaluation) -> f64 {
        eval.inner.sigma_min()
    }

    fn exact(&self, v: &CMat) -> ExactSolve {
        self.exact_of(v)
    }
}

pub fn eigenvalues(a: &CMat) -> Result<Vec<C64>> {
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::SolverFailed("Schur decomposition did not converge".into()))?;
    let (_, t) = schur.unpack();
    Ok(t.diagonal().iter().copied().collect())
}

#[derive(Debug, Clone)]
pub struct InstabilitySolution {
    pub solution: Solution,
    pub lambda_star: C64,
    /// `sigma_min(A + Delta - lambda_* I) <= 1e-8 max(1, ||A||_F)`.
    pub certified: bool,
    pub already_unstable: bool,
}

/// Solves with the first-order inner method. A matrix that already has an
/// eigenvalue in the region is returned unchanged at distance zero.
pub fn instability_solve(problem: &InstabilityProblem, cfg: &SolverConfig) -> Result<InstabilitySolution> {
    let a = problem.matrix();
    let n = a.nrows();
    let eig = eigenvalues(a)?;
    if let Some(&lambda) = eig.iter().find(|&&z| problem.region.contains(z)) {
        let shifted = a - CMat::identity(n, n) * lambda;
        let svd = ThinSvd::new(&shifted);
        let k = (0..n).min_by(|&i, &j| svd.s[i].total_cmp(&svd.s[j])).unwrap_or(0);
        let point = CMat::from_iterator(n, 1, svd.v_t.row(k).iter().map(|x| x.conj()));
        let solution = Solution {
            perturbation: CMat::zeros(n, n),
            residual: fro_norm(&(&shifted * &point)),
            point,
            delta: CVec::zeros(problem.basis().len()),
            distance: 0.0,
            value: 0.0,
            feasible: true,
            lambda_star: Some(lambda),
            refined: false,
            last_status: crate::trust_region::Status::GradTol,
            seed: cfg.seed,
            trace: Vec::new(),
        };
        return Ok(InstabilitySolution { solution, lambda_star: lambda, certified: true, already_unstable: true });
    }
    let solution = outer::solve(problem, cfg)?;
    let lambda_star = solution.lambda_star.unwrap_or(re(0.0));
    let shifted = a + &solution.perturbation - CMat::identity(n, n) * lambda_star;
    let smin = singular_values(&shifted).last().copied().unwrap_or(0.0);
    let certified = smin <= 1e-8 * fro_norm(a).max(1.0);
    Ok(InstabilitySolution { solution, lambda_star, certified, already_unstable: false })
}
