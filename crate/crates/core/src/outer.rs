//! Outer loops: penalty and augmented Lagrangian continuation in the
//! regularization parameter, with an optional adaptive decrease rule and
//! parallel multistart.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{re, vec_norm, CMat, CVec, C64};
use crate::manifolds::Manifold;
use crate::oracle::{ExactSolve, Oracle};
use crate::trust_region::{self, Objective, Status, TRConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Penalty,
    AugLag,
}

/// Parameters of the adaptive regularization decrease.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adaptive {
    pub rho1: f64,
    pub rho2: f64,
    pub c_f: f64,
    pub c_rho: f64,
}

impl Default for Adaptive {
    fn default() -> Self {
        Adaptive { rho1: 0.1, rho2: 2.0, c_f: 2.0, c_rho: 4.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub eps0: f64,
    pub mu: f64,
    /// Final inner gradient tolerance.
    pub grad_tol: f64,
    pub max_outer: usize,
    pub mode: Mode,
    pub adaptive: Option<Adaptive>,
    /// Inner tolerance at outer step `k` is `max(grad_tol, eta0 * eta_decay^k)`.
    /// `eta0 = 0` keeps it fixed at `grad_tol`. The loose early stages of the
    /// default schedule are cheaper but change which basin a start ends up in.
    pub eta0: f64,
    pub eta_decay: f64,
    pub multistart: usize,
    pub seed: u64,
    /// Disabling this turns the augmented Lagrangian into the penalty method.
    pub update_multiplier: bool,
    /// Apply the problem's feasibility refinement to the final point.
    pub refine: bool,
    pub inner: TRConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps0: 1.0,
            mu: 0.7,
            grad_tol: 1e-10,
            max_outer: 80,
            mode: Mode::AugLag,
            adaptive: None,
            eta0: 1e-2,
            eta_decay: 0.5,
            multistart: 1,
            seed: 0,
            update_multiplier: true,
            refine: false,
            inner: TRConfig { max_iter: 5000, ..TRConfig::default() },
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return Err(Error::config("eps0", "must be positive"));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::config("mu", "must lie in (0, 1)"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::config("grad_tol", "must be positive"));
        }
        if self.max_outer == 0 {
            return Err(Error::config("max_outer", "must be at least 1"));
        }
        if self.multistart == 0 {
            return Err(Error::config("multistart", "must be at least 1"));
        }
        if !(self.eta0 >= 0.0 && self.eta0.is_finite() && self.eta_decay > 0.0 && self.eta_decay < 1.0) {
            return Err(Error::config("eta_decay", "schedule must decrease to zero"));
        }
        if let Some(a) = &self.adaptive {
            if !(a.rho1 > 0.0 && a.rho1 < 1.0 && a.rho2 > 1.0) {
                return Err(Error::config("adaptive", "need 0 < rho1 < 1 < rho2"));
            }
            if !(a.c_f > 1.0 && a.c_rho > 1.0) {
                return Err(Error::config("adaptive", "need C_f > 1 and C_rho > 1"));
            }
        }
        self.inner.validate()
    }

    /// Fixed inner tolerance `tol` at every outer step.
    pub fn with_fixed_tolerance(self, tol: f64) -> Self {
        SolverConfig { grad_tol: tol, eta0: 0.0, ..self }
    }

    pub fn inner_tolerance(&self, k: usize) -> f64 {
        (self.eta0 * self.eta_decay.powi(k.min(i32::MAX as usize) as i32)).max(self.grad_tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub outer_iter: usize,
    pub eps: f64,
    pub y_norm: f64,
    pub f_eps: f64,
    /// Exact value if feasible, otherwise the least-squares value.
    pub f_exact: f64,
    pub constraint_norm: f64,
    pub inner_iters: usize,
    pub sigma_min_m: f64,
    pub wall_time_ms: f64,
}

impl TraceRecord {
    /// The record without its timing field, for reproducibility comparisons.
    pub fn untimed(&self) -> TraceRecord {
        TraceRecord { wall_time_ms: 0.0, ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub perturbation: CMat,
    pub point: CMat,
    pub delta: CVec,
    pub distance: f64,
    /// Exact value at the returned point (least-squares value if infeasible).
    pub value: f64,
    pub residual: f64,
    pub feasible: bool,
    pub lambda_star: Option<C64>,
    pub refined: bool,
    pub last_status: Status,
    pub seed: u64,
    pub trace: Vec<TraceRecord>,
}

/// Oracle with `eps` and `y` frozen, as a trust-region objective.
pub struct Stage<'a, O: Oracle> {
    pub oracle: &'a O,
    pub eps: f64,
    pub y: &'a CVec,
}

impl<O: Oracle> Objective for Stage<'_, O> {
    type Eval = O::Eval;

    fn evaluate(&self, x: &CMat) -> O::Eval {
        self.oracle.regularized(x, self.eps, self.y)
    }

    fn value(&self, eval: &O::Eval) -> f64 {
        self.oracle.value(eval)
    }

    fn egrad(&self, x: &CMat, eval: &O::Eval) -> CMat {
        self.oracle.gradient(x, eval)
    }

    fn ehess_vec(&self, x: &CMat, eval: &O::Eval, w: &CMat) -> Option<CMat> {
        self.oracle.hessian_vector(x, eval, w)
    }

    fn has_hessian(&self) -> bool {
        self.oracle.has_hessian()
    }
}

/// Sphere for vector problems, Grassmannian for frames.
pub fn manifold_for<O: Oracle>(oracle: &O) -> Result<Manifold> {
    let (n, l) = oracle.point_shape();
    if l == 1 {
        Manifold::sphere(n, oracle.field())
    } else {
        Manifold::grassmann(n, l, oracle.field())
    }
}

/// Adaptive regularization decrease. Starts from `eps * rho1`; while the
/// regularized value at `v` exceeds `C_f * f_k`, backs off by accumulated
/// powers of `rho2`, giving up once the accumulated factor exceeds `C_rho`.
pub fn adapt_epsilon<O: Oracle>(oracle: &O, v: &CMat, y: &CVec, eps: f64, f_k: f64, params: &Adaptive) -> f64 {
    let mut candidate = eps * params.rho1;
    let mut f_bar = oracle.value(&oracle.regularized(v, candidate, y));
    let mut factor = 1.0;
    while f_bar > params.c_f * f_k {
        factor *= params.rho2;
        candidate = eps * params.rho1 * factor;
        if factor > params.c_rho {
            return candidate;
        }
        f_bar = oracle.value(&oracle.regularized(v, candidate, y));
    }
    candidate
}

/// One replica of the outer loop from `x0`.
pub fn solve_from<O: Oracle>(oracle: &O, manifold: &Manifold, x0: &CMat, cfg: &SolverConfig, seed: u64) -> Result<Solution> {
    cfg.validate()?;
    let start = Instant::now();
    let mut v = x0.clone();
    let mut eps = cfg.eps0;
    let mut y = CVec::zeros(oracle.constraint_len());
    let augmented = cfg.mode == Mode::AugLag && cfg.update_multiplier;
    let mut trace = Vec::with_capacity(cfg.max_outer);
    let mut last_status = Status::MaxIter;

    for k in 0..cfg.max_outer {
        let tr_cfg = TRConfig {
            grad_tol: cfg.inner_tolerance(k),
            check_derivatives: cfg.inner.check_derivatives && k == 0,
            ..cfg.inner.clone()
        };
        let stage = Stage { oracle, eps, y: &y };
        let report = trust_region::minimize(&stage, manifold, &v, &tr_cfg)?;
        last_status = report.status;
        v = report.point;

        let eval = oracle.regularized(&v, eps, &y);
        let f_eps = oracle.value(&eval);
        let exact = oracle.exact(&v);
        let constraint = oracle.constraint(&v, &eval);
        trace.push(TraceRecord {
            outer_iter: k,
            eps,
            y_norm: vec_norm(&y),
            f_eps,
            f_exact: exact.value,
            constraint_norm: vec_norm(&constraint),
            inner_iters: report.iterations,
            sigma_min_m: oracle.sigma_min(&eval),
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        });

        if augmented {
            y += constraint / re(eps);
        }
        eps = match &cfg.adaptive {
            Some(params) => {
                let f_k = if augmented { oracle.value(&oracle.regularized(&v, eps, &y)) } else { f_eps };
                adapt_epsilon(oracle, &v, &y, eps, f_k, params)
            }
            None => eps * cfg.mu,
        };
        if !(eps > 0.0) {
            break;
        }
    }

    let mut exact = oracle.exact(&v);
    let mut refined = false;
    if cfg.refine {
        if let Some(v_reg) = oracle.refine(&v) {
            let candidate = oracle.exact(&v_reg);
            if better(&candidate, &exact) {
                v = v_reg;
                exact = candidate;
                refined = true;
            }
        }
    }
    Ok(build_solution(v, exact, refined, last_status, seed, trace))
}

fn better(a: &ExactSolve, b: &ExactSolve) -> bool {
    (a.feasible && !b.feasible) || (a.feasible == b.feasible && a.value < b.value)
}

fn build_solution(v: CMat, exact: ExactSolve, refined: bool, last_status: Status, seed: u64, trace: Vec<TraceRecord>) -> Solution {
    Solution {
        distance: exact.value.max(0.0).sqrt(),
        value: exact.value,
        residual: exact.residual,
        feasible: exact.feasible,
        lambda_star: exact.lambda,
        perturbation: exact.perturbation,
        delta: exact.delta,
        point: v,
        refined,
        last_status,
        seed,
        trace,
    }
}

/// Replica seeds are `seed, seed + 1, ...`.
pub fn starting_point(manifold: &Manifold, seed: u64) -> CMat {
    manifold.random_point_with(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Multistart driver. Replicas run in parallel; the best is chosen by
/// feasibility, then exact value, then residual, then seed order.
pub fn solve<O: Oracle>(oracle: &O, cfg: &SolverConfig) -> Result<Solution> {
    let manifold = manifold_for(oracle)?;
    solve_on(oracle, &manifold, cfg)
}

pub fn solve_on<O: Oracle>(oracle: &O, manifold: &Manifold, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let results: Vec<Result<Solution>> = (0..cfg.multistart as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i);
            solve_from(oracle, manifold, &starting_point(manifold, seed), cfg, seed)
        })
        .collect();
    pick_best(results)
}

pub fn pick_best(results: Vec<Result<Solution>>) -> Result<Solution> {
    let mut best: Option<Solution> = None;
    let mut first_err = None;
    for res in results {
        match res {
            Ok(sol) => {
                let replace = match &best {
                    None => true,
                    Some(b) => {
                        (sol.feasible && !b.feasible)
                            || (sol.feasible == b.feasible
                                && (sol.value < b.value || (sol.value == b.value && sol.residual < b.residual)))
                    }
                };
                if replace {
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

/// Penalty method: the multiplier stays at zero.
pub fn penalty_solve<O: Oracle>(oracle: &O, cfg: &SolverConfig) -> Result<Solution> {
    solve(oracle, &SolverConfig { mode: Mode::Penalty, ..cfg.clone() })
}

/// Augmented Lagrangian with the ascent step `y += (A + Delta_*) v / eps`.
pub fn auglag_solve<O: Oracle>(oracle: &O, cfg: &SolverConfig) -> Result<Solution> {
    solve(oracle, &SolverConfig { mode: Mode::AugLag, ..cfg.clone() })
}
