//! Run configuration: a JSON file merged with command-line overrides.
//!
//! Precedence, lowest first: per-kind defaults, the config file, flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::matrix_market::read_text;
use crate::error::{Error, Result};
use crate::linalg::Field;
use crate::outer::{Adaptive, Mode, SolverConfig};
use crate::problems::instability::Region;

/// Inner tolerance used for gcd runs unless overridden.
pub const GCD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Singular,
    SparseSingular,
    Polynomial,
    Gcd,
    Instability,
    Nullity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Unstructured,
    /// Nonzero pattern of the input, or of `--pattern` if given.
    Pattern,
    Toeplitz,
    /// Blocks from `--basis`.
    Basis,
}

fn parse_enum<T: for<'de> Deserialize<'de>>(s: &str, what: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("unknown {what} '{s}'"))
}

fn display_enum<T: Serialize>(x: &T, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match serde_json::to_value(x) {
        Ok(Value::String(s)) => f.write_str(&s),
        _ => Err(fmt::Error),
    }
}

impl FromStr for ProblemKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        parse_enum(s, "problem kind")
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        display_enum(self, f)
    }
}

impl FromStr for StructureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        parse_enum(s, "structure")
    }
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        display_enum(self, f)
    }
}

/// Region flag syntax: `half-plane:<c>`, `disc-complement:<rho>` or
/// `disc:<rho>`.
pub fn parse_region(s: &str) -> Result<Region, String> {
    let (kind, param) = s.split_once(':').ok_or_else(|| format!("expected <kind>:<parameter>, got '{s}'"))?;
    let x: f64 = param.trim().parse().map_err(|_| format!("cannot parse region parameter '{param}'"))?;
    let region = match kind.trim() {
        "half-plane" => Region::HalfPlaneComplement { c: x },
        "disc-complement" => Region::DiscComplement { rho: x },
        "disc" => Region::ClosedDisc { rho: x },
        other => return Err(format!("unknown region kind '{other}'")),
    };
    region.validate().map_err(|e| e.to_string())?;
    Ok(region)
}

/// Contents of a JSON config file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub field: Option<Field>,
    pub structure: Option<StructureKind>,
    pub degree: Option<usize>,
    pub l: Option<usize>,
    pub region: Option<Region>,
    /// Partial [`SolverConfig`]; missing keys keep their defaults.
    pub solver: Option<Value>,
}

pub fn parse_config(text: &str, path: &Path) -> Result<FileConfig> {
    serde_json::from_str(text).map_err(|e| Error::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() })
}

pub fn read_config(path: &Path) -> Result<FileConfig> {
    parse_config(&read_text(path)?, path)
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub field: Option<Field>,
    pub structure: Option<StructureKind>,
    pub degree: Option<usize>,
    pub l: Option<usize>,
    pub region: Option<Region>,
    pub seed: Option<u64>,
    pub multistart: Option<usize>,
    pub mode: Option<Mode>,
    pub adaptive: bool,
    pub eps0: Option<f64>,
    pub mu: Option<f64>,
    pub grad_tol: Option<f64>,
    /// Fixed inner tolerance at every outer step.
    pub fixed_tolerance: Option<f64>,
    pub max_outer: Option<usize>,
    pub refine: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub matrix: Option<PathBuf>,
    pub pattern: Option<PathBuf>,
    pub basis: Option<PathBuf>,
    /// Matrix polynomial coefficients, lowest degree first.
    pub coeffs: Vec<PathBuf>,
    pub p: Option<PathBuf>,
    pub q: Option<PathBuf>,
}

/// Fully resolved run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kind: ProblemKind,
    pub field: Field,
    pub structure: StructureKind,
    pub degree: Option<usize>,
    pub l: usize,
    pub region: Region,
    pub solver: SolverConfig,
    pub inputs: Inputs,
}

fn base_solver(kind: ProblemKind) -> SolverConfig {
    match kind {
        ProblemKind::Gcd => SolverConfig::default().with_fixed_tolerance(GCD_TOLERANCE),
        _ => SolverConfig::default(),
    }
}

fn merge_solver(base: SolverConfig, patch: Option<&Value>) -> Result<SolverConfig> {
    let Some(patch) = patch else {
        return Ok(base);
    };
    let patch = patch.as_object().ok_or_else(|| Error::config("solver", "must be a JSON object"))?;
    let mut merged = serde_json::to_value(&base).map_err(|e| Error::config("solver", e.to_string()))?;
    let obj = merged.as_object_mut().expect("SolverConfig serializes to an object");
    for (k, v) in patch {
        if !obj.contains_key(k) {
            return Err(Error::config(format!("solver.{k}"), "unknown solver option"));
        }
        if let (Some(Value::Object(inner)), Value::Object(p)) = (obj.get_mut(k), v) {
            for (ik, iv) in p {
                inner.insert(ik.clone(), iv.clone());
            }
        } else {
            obj.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(merged).map_err(|e| Error::config("solver", e.to_string()))
}

fn require<T>(x: Option<T>, flag: &str, kind: ProblemKind) -> Result<T> {
    x.ok_or_else(|| Error::config(flag, format!("required for {kind} runs")))
}

/// Merges defaults, the file and the flags, then checks that every input the
/// problem kind needs is present.
pub fn resolve(kind: ProblemKind, inputs: Inputs, file: FileConfig, cli: Overrides) -> Result<RunConfig> {
    let mut solver = merge_solver(base_solver(kind), file.solver.as_ref())?;
    if let Some(x) = cli.seed {
        solver.seed = x;
    }
    if let Some(x) = cli.multistart {
        solver.multistart = x;
    }
    if let Some(x) = cli.mode {
        solver.mode = x;
    }
    if cli.adaptive {
        solver.adaptive = Some(Adaptive::default());
    }
    if let Some(x) = cli.eps0 {
        solver.eps0 = x;
    }
    if let Some(x) = cli.mu {
        solver.mu = x;
    }
    if let Some(x) = cli.grad_tol {
        solver.grad_tol = x;
    }
    if let Some(x) = cli.fixed_tolerance {
        solver = solver.with_fixed_tolerance(x);
    }
    if let Some(x) = cli.max_outer {
        solver.max_outer = x;
    }
    if cli.refine {
        solver.refine = true;
    }
    solver.validate()?;

    let field = cli.field.or(file.field).unwrap_or(match kind {
        ProblemKind::Instability => Field::Complex,
        _ => Field::Real,
    });
    let structure = cli.structure.or(file.structure).unwrap_or(match kind {
        ProblemKind::SparseSingular => StructureKind::Pattern,
        _ => StructureKind::Unstructured,
    });
    let degree = cli.degree.or(file.degree);
    let l = cli.l.or(file.l);
    let region = cli.region.or(file.region);

    match kind {
        ProblemKind::Singular | ProblemKind::SparseSingular | ProblemKind::Nullity | ProblemKind::Instability => {
            require(inputs.matrix.as_ref(), "--matrix", kind)?;
        }
        ProblemKind::Polynomial => {
            if inputs.coeffs.len() < 2 {
                return Err(Error::config("--coeff", "polynomial runs need at least two coefficient files"));
            }
        }
        ProblemKind::Gcd => {
            require(inputs.p.as_ref(), "--p", kind)?;
            require(inputs.q.as_ref(), "--q", kind)?;
            require(degree, "--degree", kind)?;
        }
    }
    if kind == ProblemKind::Nullity {
        require(l, "--l", kind)?;
    } else if l.is_some_and(|l| l != 1) {
        return Err(Error::config("--l", format!("only nullity runs take a nullity, this is a {kind} run")));
    }
    if kind == ProblemKind::SparseSingular && structure != StructureKind::Pattern {
        return Err(Error::config("--structure", "sparse-singular runs use the pattern structure"));
    }
    if kind == ProblemKind::Gcd && structure != StructureKind::Unstructured {
        return Err(Error::config("--structure", "gcd runs have a fixed Sylvester structure"));
    }
    if kind == ProblemKind::Instability && field != Field::Complex {
        return Err(Error::config("--field", "distance to instability needs complex perturbations"));
    }
    if kind == ProblemKind::Polynomial && structure == StructureKind::Toeplitz {
        return Err(Error::config("--structure", "toeplitz structure applies to matrices, not polynomials"));
    }
    if structure == StructureKind::Basis && inputs.basis.is_none() {
        return Err(Error::config("--basis", "required by --structure basis"));
    }
    if structure != StructureKind::Basis && inputs.basis.is_some() {
        return Err(Error::config("--basis", format!("conflicts with --structure {structure}")));
    }
    if structure != StructureKind::Pattern && inputs.pattern.is_some() {
        return Err(Error::config("--pattern", format!("conflicts with --structure {structure}")));
    }
    if region.is_some() && kind != ProblemKind::Instability {
        return Err(Error::config("--region", format!("only instability runs take a region, this is a {kind} run")));
    }
    Ok(RunConfig {
        kind,
        field,
        structure,
        degree,
        l: l.unwrap_or(1),
        region: region.unwrap_or(Region::HalfPlaneComplement { c: 0.0 }),
        solver,
        inputs,
    })
}
