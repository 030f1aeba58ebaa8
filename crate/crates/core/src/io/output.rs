//! Solution documents (JSON) and convergence traces (CSV).

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::ProblemKind;
use super::matrix_market::{parse_matrix, read_text, write_array};
use crate::error::{Error, Result};
use crate::linalg::{c64, CMat, CVec, Field, C64};
use crate::outer::{Solution, TraceRecord};
use crate::problems::gcd::GcdSolution;
use crate::problems::instability::InstabilitySolution;
use crate::problems::polynomial::{KernelSide, PolynomialSolution};
use crate::trust_region::Status;

pub const TRACE_HEADER: &str = "outer_iter,eps,y_norm,f_eps,f_exact,constraint_norm,inner_iters,sigma_min_M,wall_time_ms";

fn pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

fn pairs(v: &CVec) -> Vec<[f64; 2]> {
    v.iter().copied().map(pair).collect()
}

pub fn coeffs_from_pairs(p: &[[f64; 2]]) -> CVec {
    CVec::from_iterator(p.len(), p.iter().map(|&[a, b]| c64(a, b)))
}

/// Coefficient arrays are `[re, im]` pairs, lowest degree first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcdDoc {
    pub degree: usize,
    /// Inputs after scaling to unit norm; the distance is measured against these.
    pub p: Vec<[f64; 2]>,
    pub q: Vec<[f64; 2]>,
    pub g: Vec<[f64; 2]>,
    /// Cofactor of `p`.
    pub u: Vec<[f64; 2]>,
    /// Cofactor of `q`.
    pub w: Vec<[f64; 2]>,
    pub structured_distance: f64,
    pub degree_deficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialDoc {
    pub side: String,
    pub kernel_degree: usize,
    /// `Delta_0, ..., Delta_k` as MatrixMarket text.
    pub perturbation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityDoc {
    pub certified: bool,
    pub already_unstable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDoc {
    pub kind: ProblemKind,
    pub field: Field,
    pub distance: f64,
    pub value: f64,
    pub residual: f64,
    pub feasible: bool,
    pub status: Status,
    pub refined: bool,
    pub seed: u64,
    pub outer_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_star: Option<[f64; 2]>,
    /// MatrixMarket array text.
    pub perturbation: String,
    /// MatrixMarket array text.
    pub point: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nullity_certified: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gcd: Option<GcdDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polynomial: Option<PolynomialDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instability: Option<InstabilityDoc>,
    /// Seconds since the Unix epoch. Not part of the reproducible content.
    pub generated_at: u64,
}

impl SolutionDoc {
    pub fn new(kind: ProblemKind, field: Field, sol: &Solution) -> Self {
        SolutionDoc {
            kind,
            field,
            distance: sol.distance,
            value: sol.value,
            residual: sol.residual,
            feasible: sol.feasible,
            status: sol.last_status,
            refined: sol.refined,
            seed: sol.seed,
            outer_iterations: sol.trace.len(),
            lambda_star: sol.lambda_star.map(pair),
            perturbation: write_array(&sol.perturbation, field),
            point: write_array(&sol.point, field),
            nullity_certified: None,
            gcd: None,
            polynomial: None,
            instability: None,
            generated_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn from_gcd(field: Field, p: &CVec, q: &CVec, sol: &GcdSolution) -> Self {
        let mut doc = Self::new(ProblemKind::Gcd, field, &sol.solution);
        doc.distance = sol.distance;
        doc.feasible = !sol.factors.degree_deficient;
        doc.gcd = Some(GcdDoc {
            degree: sol.factors.g.len() - 1,
            p: pairs(p),
            q: pairs(q),
            g: pairs(&sol.factors.g),
            u: pairs(&sol.factors.cp),
            w: pairs(&sol.factors.cq),
            structured_distance: sol.structured_distance,
            degree_deficient: sol.factors.degree_deficient,
        });
        doc
    }

    pub fn from_polynomial(field: Field, sol: &PolynomialSolution) -> Self {
        let mut doc = Self::new(ProblemKind::Polynomial, field, &sol.solution);
        doc.perturbation = write_array(&sol.perturbation.stacked(), field);
        doc.polynomial = Some(PolynomialDoc {
            side: match sol.side {
                KernelSide::Right => "right".into(),
                KernelSide::Left => "left".into(),
            },
            kernel_degree: sol.degree,
            perturbation: sol.perturbation.coeffs().iter().map(|c| write_array(c, field)).collect(),
        });
        doc
    }

    pub fn from_instability(sol: &InstabilitySolution) -> Self {
        let mut doc = Self::new(ProblemKind::Instability, Field::Complex, &sol.solution);
        doc.lambda_star = Some(pair(sol.lambda_star));
        doc.instability = Some(InstabilityDoc { certified: sol.certified, already_unstable: sol.already_unstable });
        doc
    }

    /// Parses the embedded perturbation.
    pub fn perturbation_matrix(&self) -> Result<CMat> {
        Ok(parse_matrix(&self.perturbation, Path::new("<perturbation>"))?.dense)
    }

    /// Copy with the timestamp cleared, for reproducibility comparisons.
    pub fn untimed(&self) -> SolutionDoc {
        SolutionDoc { generated_at: 0, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution documents always serialize") + "\n"
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn write_solution(doc: &SolutionDoc, path: &Path) -> Result<()> {
    write_file(path, &doc.to_json())
}

pub fn read_solution(path: &Path) -> Result<SolutionDoc> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() })
}

pub fn trace_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for t in trace {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{},{:e},{:.3}\n",
            t.outer_iter, t.eps, t.y_norm, t.f_eps, t.f_exact, t.constraint_norm, t.inner_iters, t.sigma_min_m, t.wall_time_ms
        ));
    }
    out
}

pub fn write_trace(trace: &[TraceRecord], path: &Path) -> Result<()> {
    write_file(path, &trace_csv(trace))
}
