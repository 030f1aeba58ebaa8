//! Real Riemannian manifolds used as search spaces: the unit sphere in `F^n`
//! and the Grassmannian of `l`-dimensional subspaces of `F^n`.
//!
//! Points and tangent vectors are stored as `n x 1` (sphere) or `n x l`
//! (Grassmann) complex matrices. Both manifolds are treated as real manifolds
//! with the metric `Re tr(a* b)`, also when `F = C`. For `F = R` every
//! projection drops imaginary parts so iterates stay real.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{fro_norm, qr_positive, random_matrix, real_inner, realify, CMat, Field};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Manifold {
    Sphere { n: usize, field: Field },
    Grassmann { n: usize, l: usize, field: Field },
}

impl Manifold {
    pub fn sphere(n: usize, field: Field) -> Result<Self> {
        if n == 0 {
            return Err(Error::dim("sphere", "n >= 1", n));
        }
        Ok(Manifold::Sphere { n, field })
    }

    pub fn grassmann(n: usize, l: usize, field: Field) -> Result<Self> {
        if l == 0 || l > n {
            return Err(Error::dim("grassmann", format!("1 <= l <= {n}"), l));
        }
        Ok(Manifold::Grassmann { n, l, field })
    }

    pub fn shape(&self) -> (usize, usize) {
        match *self {
            Manifold::Sphere { n, .. } => (n, 1),
            Manifold::Grassmann { n, l, .. } => (n, l),
        }
    }

    pub fn field(&self) -> Field {
        match *self {
            Manifold::Sphere { field, .. } | Manifold::Grassmann { field, .. } => field,
        }
    }

    /// Real dimension of the manifold.
    pub fn dim(&self) -> usize {
        let real_factor = match self.field() {
            Field::Real => 1,
            Field::Complex => 2,
        };
        match *self {
            Manifold::Sphere { n, .. } => real_factor * n - 1,
            Manifold::Grassmann { n, l, .. } => real_factor * l * (n - l),
        }
    }

    fn check_shape(&self, z: &CMat, context: &'static str) -> Result<()> {
        let shape = self.shape();
        if z.shape() != shape {
            return Err(Error::dim(context, format!("{shape:?}"), format!("{:?}", z.shape())));
        }
        Ok(())
    }

    pub fn inner(&self, a: &CMat, b: &CMat) -> f64 {
        real_inner(a, b)
    }

    pub fn norm(&self, a: &CMat) -> f64 {
        fro_norm(a)
    }

    /// Orthogonal projection of an ambient array onto the tangent space at `x`.
    pub fn project_tangent(&self, x: &CMat, z: &CMat) -> Result<CMat> {
        self.check_shape(z, "project_tangent")?;
        Ok(self.project_unchecked(x, z))
    }

    pub(crate) fn project_unchecked(&self, x: &CMat, z: &CMat) -> CMat {
        let mut z = z.clone();
        if self.field() == Field::Real {
            realify(&mut z);
        }
        match self {
            Manifold::Sphere { .. } => {
                let coeff = real_inner(x, &z);
                z - x * crate::linalg::re(coeff)
            }
            Manifold::Grassmann { .. } => {
                let vz = x.adjoint() * &z;
                z - x * vz
            }
        }
    }

    /// Sphere: normalization of `x + w`. Grassmann: the Q factor of `x + w`
    /// with positive diagonal R.
    pub fn retract(&self, x: &CMat, w: &CMat) -> CMat {
        let mut y = x + w;
        if self.field() == Field::Real {
            realify(&mut y);
        }
        match self {
            Manifold::Sphere { .. } => {
                let nrm = fro_norm(&y);
                y / crate::linalg::re(nrm)
            }
            Manifold::Grassmann { .. } => qr_positive(&y).0,
        }
    }

    pub fn riemannian_gradient(&self, x: &CMat, egrad: &CMat) -> Result<CMat> {
        self.project_tangent(x, egrad)
    }

    /// Riemannian Hessian applied to `w` from the Euclidean gradient and the
    /// Euclidean Hessian-vector product (Weingarten correction).
    pub fn riemannian_hessian_vec(
        &self,
        x: &CMat,
        egrad: &CMat,
        ehess_w: &CMat,
        w: &CMat,
    ) -> Result<CMat> {
        self.check_shape(egrad, "riemannian_hessian_vec")?;
        self.check_shape(ehess_w, "riemannian_hessian_vec")?;
        self.check_shape(w, "riemannian_hessian_vec")?;
        Ok(self.hessian_unchecked(x, egrad, ehess_w, w))
    }

    pub(crate) fn hessian_unchecked(&self, x: &CMat, egrad: &CMat, ehess_w: &CMat, w: &CMat) -> CMat {
        let projected = self.project_unchecked(x, ehess_w);
        let correction = match self {
            Manifold::Sphere { .. } => w * crate::linalg::re(real_inner(x, egrad)),
            Manifold::Grassmann { .. } => w * (x.adjoint() * egrad),
        };
        let mut out = projected - correction;
        if self.field() == Field::Real {
            realify(&mut out);
        }
        out
    }

    pub fn random_point_with<R: Rng + ?Sized>(&self, rng: &mut R) -> CMat {
        let (n, l) = self.shape();
        let g = random_matrix(n, l, self.field(), rng);
        match self {
            Manifold::Sphere { .. } => {
                let nrm = fro_norm(&g);
                g / crate::linalg::re(nrm)
            }
            Manifold::Grassmann { .. } => qr_positive(&g).0,
        }
    }

    /// Deterministic random point: standard-normal entries, then normalized
    /// (sphere) or orthonormalized (Grassmann).
    pub fn random_point(&self, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.random_point_with(&mut rng)
    }

    pub fn random_tangent<R: Rng + ?Sized>(&self, x: &CMat, rng: &mut R) -> CMat {
        let (n, l) = self.shape();
        let g = random_matrix(n, l, self.field(), rng);
        let t = self.project_unchecked(x, &g);
        let nrm = fro_norm(&t);
        // a trivial tangent space (l = n) leaves only rounding noise
        if nrm > 1e-10 * fro_norm(&g) {
            t / crate::linalg::re(nrm)
        } else {
            CMat::zeros(n, l)
        }
    }

    /// Distance-like measure of the residual of the manifold constraint.
    pub fn constraint_violation(&self, x: &CMat) -> f64 {
        match self {
            Manifold::Sphere { .. } => (fro_norm(x) - 1.0).abs(),
            Manifold::Grassmann { l, .. } => {
                let gram = x.adjoint() * x - CMat::identity(*l, *l);
                fro_norm(&gram)
            }
        }
    }
}
