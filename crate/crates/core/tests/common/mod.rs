#![allow(dead_code)]

use std::io::Write;
use std::sync::{Mutex, MutexGuard};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riemann_oracle::linalg::{c64, random_matrix, re, CMat, Field, C64};
use riemann_oracle::oracle::PerturbationBasis;
use riemann_oracle::problems::gcd::from_roots;
use riemann_oracle::problems::instability::eigenvalues;

static SERIAL: Mutex<()> = Mutex::new(());

/// Timed tests hold this so that they do not compete for cores.
pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes past the test harness capture so the line shows up in plain
/// `cargo test` output.
pub fn report(criterion: u32, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{tag} criterion {criterion}: {detail}");
    let _ = out.flush();
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random basis of `p` dense blocks (orthonormalized by the constructor).
pub fn random_basis(m: usize, n: usize, p: usize, field: Field, rng: &mut ChaCha8Rng) -> PerturbationBasis {
    let blocks: Vec<CMat> = (0..p).map(|_| random_matrix(m, n, field, rng)).collect();
    PerturbationBasis::new(m, n, field, &blocks).unwrap()
}

/// Either `p` random dense blocks or `p` distinct unit positions.
pub fn random_structure(m: usize, n: usize, p: usize, field: Field, rng: &mut ChaCha8Rng) -> PerturbationBasis {
    if rng.random_bool(0.5) {
        return random_basis(m, n, p, field, rng);
    }
    let mut positions: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    for k in (1..positions.len()).rev() {
        positions.swap(k, rng.random_range(0..=k));
    }
    positions.truncate(p);
    PerturbationBasis::from_pattern(m, n, field, &positions).unwrap()
}

/// Complex `n x n` matrix whose eigenvalues all have real part `<= -0.3`.
pub fn hurwitz(n: usize, rng: &mut ChaCha8Rng) -> CMat {
    let g = random_matrix(n, n, Field::Complex, rng);
    let top = eigenvalues(&g).unwrap().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    g - CMat::identity(n, n) * re(top + 0.3)
}

fn sigma_min_shift(a: &CMat, w: f64) -> f64 {
    let n = a.nrows();
    let shifted = a - CMat::identity(n, n) * c64(0.0, w);
    shifted.singular_values().min()
}

/// `min_w sigma_min(A - i w I)` by a fine grid followed by golden-section
/// refinement around each grid local minimum. Uses nalgebra's SVD so it
/// shares no code with the solver.
pub fn stability_radius_sweep(a: &CMat) -> f64 {
    let r = 2.0 * a.norm() + 1.0;
    let m = 4000;
    let grid: Vec<f64> = (0..=m).map(|k| -r + 2.0 * r * k as f64 / m as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&w| sigma_min_shift(a, w)).collect();
    let h = grid[1] - grid[0];
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut best = vals.iter().copied().fold(f64::INFINITY, f64::min);
    for k in 1..m {
        if vals[k] <= vals[k - 1] && vals[k] <= vals[k + 1] {
            let (mut lo, mut hi) = (grid[k] - h, grid[k] + h);
            for _ in 0..80 {
                let x1 = hi - phi * (hi - lo);
                let x2 = lo + phi * (hi - lo);
                if sigma_min_shift(a, x1) < sigma_min_shift(a, x2) {
                    hi = x2;
                } else {
                    lo = x1;
                }
            }
            best = best.min(sigma_min_shift(a, 0.5 * (lo + hi)));
        }
    }
    best
}

/// Two degree-10 polynomials with nearly common roots: `p` has roots
/// `(-1)^j j / 2` and `q` the same roots shifted by `-10^{-j}`.
pub fn gcd_pair() -> (riemann_oracle::linalg::CVec, riemann_oracle::linalg::CVec) {
    let alpha: Vec<f64> = (1..=10).map(|j| (-1f64).powi(j) * j as f64 / 2.0).collect();
    let rp: Vec<C64> = alpha.iter().map(|&x| re(x)).collect();
    let rq: Vec<C64> = alpha.iter().enumerate().map(|(i, &x)| re(x - 10f64.powi(-(i as i32 + 1)))).collect();
    (from_roots(&rp), from_roots(&rq))
}

pub const GRCAR_PATTERN: [f64; 7] = [1.4126, 2.0030, 2.5905, 3.2591, 3.7762, 4.4584, 5.1418];
pub const GRCAR_TOEPLITZ: [f64; 7] = [1.2655, 1.8710, 2.2376, 3.0005, 3.3692, 4.1665, 5.0975];
/// Certified GCD residuals for degrees 9, 8, 7, 6.
pub const GCD_RESIDUALS: [(usize, f64); 4] = [(9, 3.9964e-3), (8, 1.7288e-4), (7, 7.0890e-6), (6, 1.8293e-7)];

/// `|x - reference|` at most half a unit in the third significant digit.
pub fn three_digits(x: f64, reference: f64) -> bool {
    let unit = 10f64.powf(reference.abs().log10().floor() - 2.0);
    (x - reference).abs() <= 0.5 * unit
}
