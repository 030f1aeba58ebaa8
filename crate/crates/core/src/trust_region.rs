//! Riemannian trust-region minimization with a truncated conjugate-gradient
//! (Steihaug-Toint) subproblem solver, and a gradient-descent path with
//! Armijo backtracking for objectives without a Hessian.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_finite, re, real_inner, CMat};
use crate::manifolds::Manifold;

/// A smooth cost on a manifold, evaluated through a cached per-point state so
/// that value, gradient and Hessian-vector products share one factorization.
pub trait Objective {
    type Eval;

    fn evaluate(&self, x: &CMat) -> Self::Eval;

    fn value(&self, eval: &Self::Eval) -> f64;

    /// Euclidean gradient under the pairing `Re tr(a* b)`.
    fn egrad(&self, x: &CMat, eval: &Self::Eval) -> CMat;

    /// Euclidean Hessian applied to `w`; `None` when no Hessian is available.
    fn ehess_vec(&self, _x: &CMat, _eval: &Self::Eval, _w: &CMat) -> Option<CMat> {
        None
    }

    fn has_hessian(&self) -> bool {
        false
    }
}

type CostFn = Box<dyn Fn(&CMat) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&CMat) -> CMat + Send + Sync>;
type HessFn = Box<dyn Fn(&CMat, &CMat) -> CMat + Send + Sync>;

/// Objective assembled from closures.
pub struct FnObjective {
    cost: CostFn,
    grad: GradFn,
    hess: Option<HessFn>,
}

impl FnObjective {
    pub fn new(
        cost: impl Fn(&CMat) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&CMat) -> CMat + Send + Sync + 'static,
    ) -> Self {
        FnObjective {
            cost: Box::new(cost),
            grad: Box::new(grad),
            hess: None,
        }
    }

    pub fn with_hessian(mut self, hess: impl Fn(&CMat, &CMat) -> CMat + Send + Sync + 'static) -> Self {
        self.hess = Some(Box::new(hess));
        self
    }
}

impl Objective for FnObjective {
    type Eval = f64;

    fn evaluate(&self, x: &CMat) -> f64 {
        (self.cost)(x)
    }

    fn value(&self, eval: &f64) -> f64 {
        *eval
    }

    fn egrad(&self, x: &CMat, _eval: &f64) -> CMat {
        (self.grad)(x)
    }

    fn ehess_vec(&self, x: &CMat, _eval: &f64, w: &CMat) -> Option<CMat> {
        self.hess.as_ref().map(|h| h(x, w))
    }

    fn has_hessian(&self) -> bool {
        self.hess.is_some()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TRConfig {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub initial_radius: f64,
    pub max_radius: f64,
    /// Minimum model-agreement ratio for accepting a step; must lie in (0, 1/4).
    pub acceptance_threshold: f64,
    /// Inner CG budget; `None` uses the manifold dimension.
    pub cg_max_iter: Option<usize>,
    pub cg_theta: f64,
    pub cg_kappa: f64,
    /// Compare the gradient against finite differences before iterating.
    pub check_derivatives: bool,
}

impl Default for TRConfig {
    fn default() -> Self {
        TRConfig {
            grad_tol: 1e-8,
            max_iter: 1000,
            initial_radius: 1.0,
            max_radius: 1024.0,
            acceptance_threshold: 0.1,
            cg_max_iter: None,
            cg_theta: 1.0,
            cg_kappa: 0.1,
            check_derivatives: true,
        }
    }
}

impl TRConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("initial_radius", self.initial_radius),
            ("max_radius", self.max_radius),
            ("acceptance_threshold", self.acceptance_threshold),
            ("cg_theta", self.cg_theta),
            ("cg_kappa", self.cg_kappa),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::config(name, format!("must be positive, got {value}")));
            }
        }
        if self.acceptance_threshold >= 0.25 {
            return Err(Error::config("acceptance_threshold", "must be below 1/4"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    GradTol,
    MaxIter,
    Stagnation,
}

#[derive(Debug, Clone)]
pub struct TRReport {
    pub point: CMat,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub f_history: Vec<f64>,
    pub status: Status,
}

const STAGNATION_REJECTIONS: usize = 10;
const STAGNATION_RADIUS: f64 = 1e-14;
/// Consecutive steps whose predicted decrease is at rounding level.
const NOISE_STEPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgExit {
    NegativeCurvature,
    Boundary,
    ResidualTolerance,
    ModelIncrease,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct CgResult {
    pub step: CMat,
    pub hess_step: CMat,
    pub iterations: usize,
    pub exit: CgExit,
}

impl CgResult {
    pub fn hit_boundary(&self) -> bool {
        matches!(self.exit, CgExit::NegativeCurvature | CgExit::Boundary)
    }
}

/// Approximately minimize the model `<g, s> + 1/2 <s, H s>` over tangent
/// vectors with `||s|| <= radius`.
pub fn truncated_cg(
    grad: &CMat,
    mut hess: impl FnMut(&CMat) -> CMat,
    radius: f64,
    theta: f64,
    kappa: f64,
    max_iter: usize,
) -> CgResult {
    let zeros = CMat::zeros(grad.nrows(), grad.ncols());
    let mut eta = zeros.clone();
    let mut heta = zeros;
    let mut r = grad.clone();
    let mut r_r = real_inner(&r, &r);
    let norm_r0 = r_r.sqrt();
    let mut delta = -&r;
    let mut e_pe = 0.0;
    let mut e_pd = 0.0;
    let mut d_pd = r_r;
    let mut model = 0.0;
    let radius_sq = radius * radius;
    let stop_tol = norm_r0 * norm_r0.powf(theta).min(kappa);

    let model_of = |eta: &CMat, heta: &CMat| real_inner(eta, grad) + 0.5 * real_inner(eta, heta);

    for j in 0..max_iter.max(1) {
        let hdelta = hess(&delta);
        let d_hd = real_inner(&delta, &hdelta);
        let alpha = r_r / d_hd;
        let e_pe_new = e_pe + 2.0 * alpha * e_pd + alpha * alpha * d_pd;

        if d_hd <= 0.0 || e_pe_new >= radius_sq || !alpha.is_finite() {
            let disc = (e_pd * e_pd + d_pd * (radius_sq - e_pe)).max(0.0);
            let tau = (-e_pd + disc.sqrt()) / d_pd;
            eta += &delta * re(tau);
            heta += &hdelta * re(tau);
            let exit = if d_hd <= 0.0 { CgExit::NegativeCurvature } else { CgExit::Boundary };
            return CgResult { step: eta, hess_step: heta, iterations: j + 1, exit };
        }

        let new_eta = &eta + &delta * re(alpha);
        let new_heta = &heta + &hdelta * re(alpha);
        let new_model = model_of(&new_eta, &new_heta);
        if new_model >= model {
            return CgResult { step: eta, hess_step: heta, iterations: j + 1, exit: CgExit::ModelIncrease };
        }
        eta = new_eta;
        heta = new_heta;
        model = new_model;
        e_pe = e_pe_new;

        r += &hdelta * re(alpha);
        let r_r_old = r_r;
        r_r = real_inner(&r, &r);
        if r_r.sqrt() <= stop_tol {
            return CgResult { step: eta, hess_step: heta, iterations: j + 1, exit: CgExit::ResidualTolerance };
        }
        let beta = r_r / r_r_old;
        delta = &delta * re(beta) - &r;
        e_pd = beta * (e_pd + alpha * d_pd);
        d_pd = r_r + beta * beta * d_pd;
    }
    CgResult { step: eta, hess_step: heta, iterations: max_iter, exit: CgExit::MaxIter }
}

/// Compare `<grad f(x), w>` with central differences of `f` along the
/// retraction for a random unit tangent `w`. Tries the step `1e-6` first and
/// then a short ladder of steps, so that roundoff at tiny function values or
/// high curvature at small regularization does not trigger a false alarm.
pub fn check_gradient<O: Objective>(obj: &O, manifold: &Manifold, x: &CMat) -> Result<f64> {
    let eval = obj.evaluate(x);
    let f0 = obj.value(&eval);
    let rgrad = manifold.project_unchecked(x, &obj.egrad(x, &eval));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let w = manifold.random_tangent(x, &mut rng);
    let analytic = real_inner(&rgrad, &w);
    let mut first = None;
    for &t in &[1e-6, 1e-5, 1e-7, 1e-4, 1e-8, 1e-3] {
        let fp = obj.value(&obj.evaluate(&manifold.retract(x, &(&w * re(t)))));
        let fm = obj.value(&obj.evaluate(&manifold.retract(x, &(&w * re(-t)))));
        let numeric = (fp - fm) / (2.0 * t);
        let scale = analytic.abs().max(numeric.abs());
        let noise = 1e2 * f64::EPSILON * f0.abs().max(fp.abs()).max(fm.abs()) / t;
        let err = (numeric - analytic).abs();
        let rel = if scale > 0.0 { err / scale } else { 0.0 };
        if err <= 1e-4 * scale + noise {
            return Ok(rel);
        }
        first.get_or_insert((numeric, rel));
    }
    let (numeric, rel_err) = first.unwrap_or((f64::NAN, f64::NAN));
    Err(Error::DerivativeCheck { analytic, numeric, rel_err })
}

fn start<O: Objective>(obj: &O, manifold: &Manifold, x0: &CMat, cfg: &TRConfig) -> Result<(O::Eval, f64, CMat)> {
    cfg.validate()?;
    if x0.shape() != manifold.shape() {
        return Err(Error::dim("minimize", format!("{:?}", manifold.shape()), format!("{:?}", x0.shape())));
    }
    let eval = obj.evaluate(x0);
    let f = obj.value(&eval);
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("objective at the initial point is {f}")));
    }
    let grad = manifold.project_unchecked(x0, &obj.egrad(x0, &eval));
    if !is_finite(&grad) {
        return Err(Error::NonFinite("gradient at the initial point".into()));
    }
    if cfg.check_derivatives {
        check_gradient(obj, manifold, x0)?;
    }
    Ok((eval, f, grad))
}

/// Riemannian trust-region method. Falls back to [`minimize_first_order`]
/// when the objective provides no Hessian.
pub fn minimize<O: Objective>(obj: &O, manifold: &Manifold, x0: &CMat, cfg: &TRConfig) -> Result<TRReport> {
    if !obj.has_hessian() {
        return minimize_first_order(obj, manifold, x0, cfg);
    }
    let (mut eval, mut f, mut grad) = start(obj, manifold, x0, cfg)?;
    let mut x = x0.clone();
    let mut radius = cfg.initial_radius.min(cfg.max_radius);
    let mut history = vec![f];
    let mut rejections = 0;
    let mut noise_steps = 0;
    let cg_max = cfg.cg_max_iter.unwrap_or_else(|| manifold.dim().max(1));

    for iter in 0..cfg.max_iter {
        let grad_norm = manifold.norm(&grad);
        if grad_norm <= cfg.grad_tol {
            return Ok(TRReport { point: x, value: f, grad_norm, iterations: iter, f_history: history, status: Status::GradTol });
        }

        let egrad = obj.egrad(&x, &eval);
        let cg = truncated_cg(
            &grad,
            |d| {
                let ehess = obj.ehess_vec(&x, &eval, d).expect("objective advertises a Hessian");
                manifold.hessian_unchecked(&x, &egrad, &ehess, d)
            },
            radius,
            cfg.cg_theta,
            cfg.cg_kappa,
            cg_max,
        );
        let model_decrease = -(real_inner(&cg.step, &grad) + 0.5 * real_inner(&cg.step, &cg.hess_step));
        let x_prop = manifold.retract(&x, &cg.step);
        let eval_prop = obj.evaluate(&x_prop);
        let f_prop = obj.value(&eval_prop);

        let rho_reg = f.abs() * f64::EPSILON * 1e3 + f64::MIN_POSITIVE;
        let rho = if !f_prop.is_finite() || !(model_decrease >= 0.0) {
            f64::NEG_INFINITY
        } else {
            (f - f_prop + rho_reg) / (model_decrease + rho_reg)
        };
        if model_decrease.abs() <= rho_reg {
            noise_steps += 1;
            if noise_steps >= NOISE_STEPS {
                return Ok(TRReport { point: x, value: f, grad_norm, iterations: iter + 1, f_history: history, status: Status::Stagnation });
            }
        } else {
            noise_steps = 0;
        }

        if rho < 0.25 {
            radius *= 0.25;
        } else if rho > 0.75 && cg.hit_boundary() {
            radius = (2.0 * radius).min(cfg.max_radius);
        }

        if rho > cfg.acceptance_threshold && f_prop <= f {
            let grad_prop = manifold.project_unchecked(&x_prop, &obj.egrad(&x_prop, &eval_prop));
            if !is_finite(&grad_prop) {
                return Ok(TRReport { point: x, value: f, grad_norm, iterations: iter + 1, f_history: history, status: Status::Stagnation });
            }
            x = x_prop;
            eval = eval_prop;
            f = f_prop;
            grad = grad_prop;
            history.push(f);
            rejections = 0;
        } else {
            rejections += 1;
            if rejections >= STAGNATION_REJECTIONS && radius < STAGNATION_RADIUS {
                return Ok(TRReport { point: x, value: f, grad_norm, iterations: iter + 1, f_history: history, status: Status::Stagnation });
            }
        }
    }
    let grad_norm = manifold.norm(&grad);
    let status = if grad_norm <= cfg.grad_tol { Status::GradTol } else { Status::MaxIter };
    Ok(TRReport { point: x, value: f, grad_norm, iterations: cfg.max_iter, f_history: history, status })
}

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Riemannian gradient descent with a Barzilai-Borwein initial step and
/// monotone Armijo backtracking along the retraction.
pub fn minimize_first_order<O: Objective>(
    obj: &O,
    manifold: &Manifold,
    x0: &CMat,
    cfg: &TRConfig,
) -> Result<TRReport> {
    let (_, mut f, mut grad) = start(obj, manifold, x0, cfg)?;
    let mut x = x0.clone();
    let mut history = vec![f];
    let mut noise_steps = 0;
    let mut prev: Option<(CMat, CMat)> = None; // (step, gradient) of the last accepted move
    let mut grad_norm = manifold.norm(&grad);
    let mut step_size = cfg.initial_radius / grad_norm.max(f64::MIN_POSITIVE);

    for iter in 0..cfg.max_iter {
        grad_norm = manifold.norm(&grad);
        if grad_norm <= cfg.grad_tol {
            return Ok(TRReport { point: x, value: f, grad_norm, iterations: iter, f_history: history, status: Status::GradTol });
        }
        if let Some((s, g_old)) = &prev {
            let s_t = manifold.project_unchecked(&x, s);
            let y = &grad - manifold.project_unchecked(&x, g_old);
            let sy = real_inner(&s_t, &y);
            if sy > 0.0 {
                step_size = real_inner(&s_t, &s_t) / sy;
            }
        }
        step_size = step_size.min(cfg.max_radius / grad_norm);

        let g2 = grad_norm * grad_norm;
        let mut accepted = None;
        let mut alpha = step_size;
        for _ in 0..MAX_BACKTRACKS {
            let step = &grad * re(-alpha);
            let x_new = manifold.retract(&x, &step);
            let e_new = obj.evaluate(&x_new);
            let f_new = obj.value(&e_new);
            if f_new.is_finite() && f_new <= f - ARMIJO_C * alpha * g2 {
                accepted = Some((x_new, e_new, f_new, step));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, e_new, f_new, step)) = accepted else {
            return Ok(TRReport { point: x, value: f, grad_norm, iterations: iter + 1, f_history: history, status: Status::Stagnation });
        };
        let g_new = manifold.project_unchecked(&x_new, &obj.egrad(&x_new, &e_new));
        if !is_finite(&g_new) {
            return Ok(TRReport { point: x, value: f, grad_norm, iterations: iter + 1, f_history: history, status: Status::Stagnation });
        }
        if f - f_new <= f.abs() * f64::EPSILON * 1e3 {
            noise_steps += 1;
        } else {
            noise_steps = 0;
        }
        prev = Some((step, grad));
        step_size = alpha;
        x = x_new;
        f = f_new;
        grad = g_new;
        history.push(f);
        if noise_steps >= NOISE_STEPS {
            let grad_norm = manifold.norm(&grad);
            return Ok(TRReport { point: x, value: f, grad_norm, iterations: iter + 1, f_history: history, status: Status::Stagnation });
        }
    }
    grad_norm = manifold.norm(&grad);
    let status = if grad_norm <= cfg.grad_tol { Status::GradTol } else { Status::MaxIter };
    Ok(TRReport { point: x, value: f, grad_norm, iterations: cfg.max_iter, f_history: history, status })
}
