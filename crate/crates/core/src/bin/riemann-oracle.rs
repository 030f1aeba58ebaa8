use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use riemann_oracle::error::{Error, Result};
use riemann_oracle::io::basis::{read_basis, read_blocks};
use riemann_oracle::io::coefficients::read_coefficients;
use riemann_oracle::io::config::{self, FileConfig, Inputs, Overrides, ProblemKind, RunConfig, StructureKind};
use riemann_oracle::io::matrix_market::{read_matrix, MmMatrix};
use riemann_oracle::io::output::{write_solution, write_trace, SolutionDoc};
use riemann_oracle::linalg::{fro_norm, random_matrix, random_vector, re, real_inner, CMat, CVec, Field};
use riemann_oracle::manifolds::Manifold;
use riemann_oracle::oracle::{NearnessProblem, Oracle, PerturbationBasis};
use riemann_oracle::outer::{self, Mode, Solution, Stage, TraceRecord};
use riemann_oracle::problems::gcd::{gcd_solve, GcdProblem};
use riemann_oracle::problems::instability::{instability_solve, InstabilityProblem};
use riemann_oracle::problems::nullity::{nullity_certificate, nullity_problem};
use riemann_oracle::problems::polynomial::{
    kernel_degree, polynomial_distance_with_degree, polynomial_problem, toeplitz_lift, KroneckerProblem, MatrixPolynomial,
    PolyStructure,
};
use riemann_oracle::problems::sparse::{SparseMatrix, SparseProblem};
use riemann_oracle::problems::{nonzero_pattern, toeplitz_basis};
use riemann_oracle::trust_region::check_gradient;

/// Structured matrix nearness solver.
#[derive(Parser)]
#[command(name = "riemann-oracle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a nearness problem and report the distance.
    Solve(RunArgs),
    /// Run derivative and consistency checks on the given instance.
    Check(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// singular | sparse-singular | polynomial | gcd | instability | nullity
    kind: ProblemKind,
    /// Input matrix (MatrixMarket).
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Matrix polynomial coefficient (MatrixMarket), repeated lowest degree first.
    #[arg(long = "coeff")]
    coeffs: Vec<PathBuf>,
    /// First polynomial for gcd runs: one coefficient per line, lowest degree first.
    #[arg(long)]
    p: Option<PathBuf>,
    /// Second polynomial for gcd runs.
    #[arg(long)]
    q: Option<PathBuf>,
    /// JSON config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_field)]
    field: Option<Field>,
    /// unstructured | pattern | toeplitz | basis
    #[arg(long)]
    structure: Option<StructureKind>,
    /// Pattern file (MatrixMarket coordinate) for --structure pattern.
    #[arg(long)]
    pattern: Option<PathBuf>,
    /// Basis file (concatenated MatrixMarket blocks or JSON) for --structure basis.
    #[arg(long)]
    basis: Option<PathBuf>,
    /// GCD degree, or kernel degree bound for polynomial runs.
    #[arg(long)]
    degree: Option<usize>,
    /// Target nullity.
    #[arg(long)]
    l: Option<usize>,
    /// half-plane:<c> | disc-complement:<rho> | disc:<rho>
    #[arg(long, value_parser = config::parse_region)]
    region: Option<riemann_oracle::problems::instability::Region>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    multistart: Option<usize>,
    /// penalty | auglag
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Use the adaptive regularization decrease.
    #[arg(long)]
    adaptive: bool,
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    /// Final inner gradient tolerance.
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Fixed inner gradient tolerance at every outer step.
    #[arg(long)]
    fixed_tolerance: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Apply the feasibility refinement to the final point.
    #[arg(long)]
    refine: bool,
    /// Solution JSON; printed to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Convergence trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn parse_field(s: &str) -> std::result::Result<Field, String> {
    match s {
        "real" => Ok(Field::Real),
        "complex" => Ok(Field::Complex),
        _ => Err(format!("expected 'real' or 'complex', got '{s}'")),
    }
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "penalty" => Ok(Mode::Penalty),
        "auglag" => Ok(Mode::AugLag),
        _ => Err(format!("expected 'penalty' or 'auglag', got '{s}'")),
    }
}

/// Prefixes an error with the flag whose file caused it.
fn with_flag<T>(flag: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Config { .. } => e,
        other => Error::config(flag, other.to_string()),
    })
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => with_flag("--config", config::read_config(path))?,
        None => FileConfig::default(),
    };
    let inputs = Inputs {
        matrix: args.matrix.clone(),
        pattern: args.pattern.clone(),
        basis: args.basis.clone(),
        coeffs: args.coeffs.clone(),
        p: args.p.clone(),
        q: args.q.clone(),
    };
    let cli = Overrides {
        field: args.field,
        structure: args.structure,
        degree: args.degree,
        l: args.l,
        region: args.region,
        seed: args.seed,
        multistart: args.multistart,
        mode: args.mode,
        adaptive: args.adaptive,
        eps0: args.eps0,
        mu: args.mu,
        grad_tol: args.grad_tol,
        fixed_tolerance: args.fixed_tolerance,
        max_outer: args.max_outer,
        refine: args.refine,
    };
    config::resolve(args.kind, inputs, file, cli)
}

fn load_matrix(run: &RunConfig) -> Result<MmMatrix> {
    let path = run.inputs.matrix.as_ref().expect("checked by resolve");
    let m = with_flag("--matrix", read_matrix(path))?;
    if run.field == Field::Real && m.field == Field::Complex {
        return Err(Error::config("--matrix", "complex matrix with --field real"));
    }
    Ok(m)
}

fn pattern_of(run: &RunConfig, m: &MmMatrix) -> Result<Vec<(usize, usize)>> {
    let mut pattern = match &run.inputs.pattern {
        Some(path) => {
            let p = with_flag("--pattern", read_matrix(path))?;
            if p.dense.shape() != m.dense.shape() {
                return Err(Error::config("--pattern", format!("shape {:?} differs from the matrix", p.dense.shape())));
            }
            p.pattern.ok_or_else(|| Error::config("--pattern", "needs a coordinate file"))?
        }
        None => m.pattern.clone().unwrap_or_else(|| nonzero_pattern(&m.dense)),
    };
    pattern.sort_by_key(|&(i, j)| (j, i));
    pattern.dedup();
    Ok(pattern)
}

fn matrix_basis(run: &RunConfig, m: &MmMatrix) -> Result<PerturbationBasis> {
    let (rows, cols) = m.dense.shape();
    match run.structure {
        StructureKind::Unstructured => Ok(PerturbationBasis::full(rows, cols, run.field)),
        StructureKind::Pattern => with_flag("--pattern", PerturbationBasis::from_pattern(rows, cols, run.field, &pattern_of(run, m)?)),
        StructureKind::Toeplitz => {
            if rows != cols {
                return Err(Error::config("--structure", "toeplitz structure needs a square matrix"));
            }
            toeplitz_basis(rows, run.field)
        }
        StructureKind::Basis => {
            let basis = with_flag("--basis", read_basis(run.inputs.basis.as_ref().expect("checked by resolve"), run.field))?;
            if basis.shape() != (rows, cols) {
                return Err(Error::config("--basis", format!("blocks are {:?}, the matrix is {rows}x{cols}", basis.shape())));
            }
            Ok(basis)
        }
    }
}

fn load_polynomial(run: &RunConfig) -> Result<(MatrixPolynomial, PolyStructure)> {
    let mut coeffs = Vec::new();
    for path in &run.inputs.coeffs {
        let m = with_flag("--coeff", read_matrix(path))?;
        if run.field == Field::Real && m.field == Field::Complex {
            return Err(Error::config("--coeff", format!("{} is complex but --field is real", path.display())));
        }
        coeffs.push(m.dense);
    }
    let a = with_flag("--coeff", MatrixPolynomial::new(coeffs))?;
    let (n, k) = (a.shape().1, a.grade());
    let structure = match run.structure {
        StructureKind::Unstructured => PolyStructure::Unstructured,
        StructureKind::Pattern => {
            let mut list = Vec::new();
            for (c, coeff) in a.coeffs().iter().enumerate() {
                for (i, j) in nonzero_pattern(coeff) {
                    let mut unit = vec![CMat::zeros(coeff.nrows(), n); k + 1];
                    unit[c][(i, j)] = re(1.0);
                    list.push(MatrixPolynomial::new(unit)?);
                }
            }
            if list.is_empty() {
                return Err(Error::config("--structure", "the polynomial has no nonzero coefficients"));
            }
            PolyStructure::Basis(list)
        }
        StructureKind::Basis => {
            let blocks = with_flag("--basis", read_blocks(run.inputs.basis.as_ref().expect("checked by resolve")))?;
            let stacked = a.stacked();
            if let Some(b) = blocks.iter().position(|b| b.shape() != stacked.shape()) {
                return Err(Error::config(
                    "--basis",
                    format!("block {b} is {:?}; polynomial bases use the stacked layout {:?}", blocks[b].shape(), stacked.shape()),
                ));
            }
            PolyStructure::Basis(blocks.iter().map(|b| MatrixPolynomial::from_stacked(b, n)).collect())
        }
        StructureKind::Toeplitz => unreachable!("rejected by resolve"),
    };
    Ok((a, structure))
}

fn load_pair(run: &RunConfig) -> Result<GcdProblem> {
    let p = with_flag("--p", read_coefficients(run.inputs.p.as_ref().expect("checked by resolve")))?;
    let q = with_flag("--q", read_coefficients(run.inputs.q.as_ref().expect("checked by resolve")))?;
    with_flag("--degree", GcdProblem::new(p, q, run.degree.expect("checked by resolve"), run.field))
}

fn sparse_problem(run: &RunConfig, m: &MmMatrix) -> Result<SparseProblem> {
    let pattern = pattern_of(run, m)?;
    let a = SparseMatrix::from_dense(&m.dense);
    with_flag("--pattern", SparseProblem::new(a, &pattern, run.field))
}

struct Outcome {
    doc: SolutionDoc,
    trace: Vec<TraceRecord>,
    ok: bool,
}

fn plain(run: &RunConfig, sol: Solution) -> Outcome {
    let doc = SolutionDoc::new(run.kind, run.field, &sol);
    Outcome { ok: sol.feasible, doc, trace: sol.trace }
}

fn solve(run: &RunConfig) -> Result<Outcome> {
    let cfg = &run.solver;
    match run.kind {
        ProblemKind::Singular => {
            let m = load_matrix(run)?;
            let basis = matrix_basis(run, &m)?;
            Ok(plain(run, outer::solve(&NearnessProblem::new(m.dense, basis)?, cfg)?))
        }
        ProblemKind::SparseSingular => {
            let m = load_matrix(run)?;
            Ok(plain(run, outer::solve(&sparse_problem(run, &m)?, cfg)?))
        }
        ProblemKind::Nullity => {
            let m = load_matrix(run)?;
            let basis = matrix_basis(run, &m)?;
            let problem = with_flag("--l", nullity_problem(m.dense.clone(), basis, run.l))?;
            let sol = outer::solve(&problem, cfg)?;
            let certified = nullity_certificate(&m.dense, &sol.perturbation, run.l, 1e-8);
            let mut out = plain(run, sol);
            out.doc.nullity_certified = Some(certified);
            out.ok &= certified;
            Ok(out)
        }
        ProblemKind::Polynomial => {
            let (a, structure) = load_polynomial(run)?;
            if a.shape().0 != a.shape().1 {
                return Err(Error::config("--coeff", "coefficients must be square"));
            }
            let d = run.degree.unwrap_or_else(|| kernel_degree(a.shape().1, a.grade()));
            let sol = polynomial_distance_with_degree(&a, &structure, run.field, d, cfg)?;
            let doc = SolutionDoc::from_polynomial(run.field, &sol);
            Ok(Outcome { ok: sol.solution.feasible, doc, trace: sol.solution.trace })
        }
        ProblemKind::Gcd => {
            let problem = load_pair(run)?;
            let sol = gcd_solve(&problem, cfg)?;
            let doc = SolutionDoc::from_gcd(run.field, problem.p(), problem.q(), &sol);
            Ok(Outcome { ok: !sol.factors.degree_deficient, doc, trace: sol.solution.trace })
        }
        ProblemKind::Instability => {
            let m = load_matrix(run)?;
            let basis = matrix_basis(run, &m)?;
            let problem = InstabilityProblem::new(m.dense, basis, run.region)?;
            let sol = instability_solve(&problem, cfg)?;
            let doc = SolutionDoc::from_instability(&sol);
            Ok(Outcome { ok: sol.certified, doc, trace: sol.solution.trace })
        }
    }
}

fn write_outputs(args: &RunArgs, out: &Outcome) -> Result<()> {
    if let Some(path) = &args.trace {
        with_flag("--trace", write_trace(&out.trace, path))?;
    }
    match &args.output {
        Some(path) => {
            with_flag("--output", write_solution(&out.doc, path))?;
            println!("distance {:e} feasible {} ({})", out.doc.distance, out.doc.feasible, path.display());
        }
        None => print!("{}", out.doc.to_json()),
    }
    Ok(())
}

struct CheckLine {
    name: String,
    pass: bool,
    detail: String,
}

fn line(name: &str, pass: bool, detail: String) -> CheckLine {
    CheckLine { name: name.into(), pass, detail }
}

fn rel_diff(a: &CMat, b: &CMat) -> f64 {
    fro_norm(&(a - b)) / fro_norm(b).max(f64::MIN_POSITIVE)
}

/// Gradient against the retraction-based finite difference, and the
/// Hessian-vector product against central differences of the gradient.
fn derivative_checks<O: Oracle>(oracle: &O, seed: u64) -> Result<Vec<CheckLine>> {
    let manifold = outer::manifold_for(oracle)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = manifold.random_point_with(&mut rng);
    let y = random_vector(oracle.constraint_len(), oracle.field(), &mut rng);
    let eps = 0.1;
    let stage = Stage { oracle, eps, y: &y };
    let mut out = vec![match check_gradient(&stage, &manifold, &x) {
        Ok(rel) => line("gradient", true, format!("relative error {rel:.2e}")),
        Err(e) => line("gradient", false, e.to_string()),
    }];
    let eval = oracle.regularized(&x, eps, &y);
    let (rows, cols) = oracle.point_shape();
    let w = random_matrix(rows, cols, oracle.field(), &mut rng);
    if let Some(hw) = oracle.hessian_vector(&x, &eval, &w) {
        let h = 1e-6;
        let gp = oracle.gradient(&(&x + &w * re(h)), &oracle.regularized(&(&x + &w * re(h)), eps, &y));
        let gm = oracle.gradient(&(&x - &w * re(h)), &oracle.regularized(&(&x - &w * re(h)), eps, &y));
        let fd = (gp - gm) / re(2.0 * h);
        let rel = rel_diff(&hw, &fd);
        out.push(line("hessian", rel < 1e-4, format!("relative error {rel:.2e}")));
        let u = random_matrix(rows, cols, oracle.field(), &mut rng);
        let hu = oracle.hessian_vector(&x, &eval, &u).expect("hessian available");
        let asym = (real_inner(&hw, &u) - real_inner(&w, &hu)).abs() / real_inner(&hw, &u).abs().max(1.0);
        out.push(line("hessian symmetry", asym < 1e-9, format!("{asym:.2e}")));
    }
    Ok(out)
}

fn equivalence_line(name: &str, fast: f64, slow: f64, g_rel: f64) -> CheckLine {
    let v_rel = (fast - slow).abs() / slow.abs().max(f64::MIN_POSITIVE);
    line(name, v_rel < 1e-11 && g_rel < 1e-11, format!("value {v_rel:.2e}, gradient {g_rel:.2e}"))
}

fn check(run: &RunConfig) -> Result<Vec<CheckLine>> {
    let seed = run.solver.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    match run.kind {
        ProblemKind::Singular | ProblemKind::Nullity => {
            let m = load_matrix(run)?;
            let basis = matrix_basis(run, &m)?;
            let problem = with_flag("--l", nullity_problem(m.dense, basis, run.l))?;
            let mut out = derivative_checks(&problem, seed)?;
            if problem.contains_a() {
                let v = Manifold::sphere(problem.a().ncols(), run.field)?.random_point_with(&mut rng);
                if run.l == 1 {
                    let ok = problem.projection_identity_check(&v)?;
                    out.push(line("projection identity", ok, String::new()));
                }
            }
            Ok(out)
        }
        ProblemKind::SparseSingular => {
            let m = load_matrix(run)?;
            let problem = sparse_problem(run, &m)?;
            let mut out = derivative_checks(&problem, seed)?;
            let generic = problem.to_generic()?;
            let v = random_matrix(m.dense.ncols(), 1, run.field, &mut rng);
            let y = random_vector(m.dense.nrows(), run.field, &mut rng);
            let fast = Oracle::regularized(&problem, &v, 0.1, &y);
            let slow = generic.inner_solve_regularized(&v, 0.1, &y)?;
            let g_rel = rel_diff(&Oracle::gradient(&problem, &v, &fast), &generic.euclidean_gradient(&slow));
            out.push(equivalence_line("sparse vs generic", fast.value, slow.value, g_rel));
            Ok(out)
        }
        ProblemKind::Polynomial => {
            let (a, structure) = load_polynomial(run)?;
            let n = a.shape().1;
            let d = run.degree.unwrap_or_else(|| kernel_degree(n, a.grade()));
            let generic = polynomial_problem(&a, &structure, d, run.field)?;
            let mut out = derivative_checks(&generic, seed)?;
            let v = random_matrix(n * (d + 1), 1, run.field, &mut rng);
            let lifted = toeplitz_lift(&a, d) * CVec::from_column_slice(v.as_slice());
            let direct: f64 = (0..=a.grade() + d)
                .map(|i| {
                    let mut c = CVec::zeros(a.shape().0);
                    for (j, aj) in a.coeffs().iter().enumerate() {
                        if i >= j && i - j <= d {
                            c += aj * v.rows((i - j) * n, n);
                        }
                    }
                    (lifted.rows(i * a.shape().0, a.shape().0) - c).norm()
                })
                .sum();
            out.push(line("lift product identity", direct < 1e-10 * fro_norm(&v).max(1.0), format!("{direct:.2e}")));
            if matches!(structure, PolyStructure::Unstructured) {
                let kron = KroneckerProblem::new(a.clone(), d, run.field)?;
                let y = random_vector(a.shape().0 * (a.grade() + d + 1), run.field, &mut rng);
                let fast = kron.evaluate(&v, 0.1, &y);
                let slow = generic.lifted().inner_solve_regularized(&v, 0.1, &y)?;
                let g_rel = rel_diff(&kron.gradient_of(&fast), &generic.lifted().euclidean_gradient(&slow));
                out.push(equivalence_line("kronecker vs generic", fast.value, slow.value, g_rel));
            }
            Ok(out)
        }
        ProblemKind::Gcd => {
            let problem = load_pair(run)?;
            let nearness = problem.nearness_problem()?;
            let mut out = derivative_checks(&nearness, seed)?;
            let dp = random_vector(problem.p().len(), run.field, &mut rng);
            let dq = random_vector(problem.q().len(), run.field, &mut rng);
            let expect = (dp.norm_squared() + dq.norm_squared()).sqrt();
            let err = (fro_norm(&problem.sylvester(&dp, &dq)) - expect).abs() / expect;
            out.push(line("sylvester norm identity", err < 1e-12, format!("{err:.2e}")));
            Ok(out)
        }
        ProblemKind::Instability => {
            let m = load_matrix(run)?;
            let basis = matrix_basis(run, &m)?;
            let problem = InstabilityProblem::new(m.dense, basis, run.region)?;
            let mut out = derivative_checks(&problem, seed)?;
            let mut worst: f64 = 0.0;
            for _ in 0..1000 {
                let z = random_vector(1, Field::Complex, &mut rng)[0] * re(3.0);
                let p = run.region.project(z);
                worst = worst.max((run.region.project(p) - p).norm());
            }
            out.push(line("region projection idempotent", worst < 1e-12, format!("{worst:.2e}")));
            Ok(out)
        }
    }
}

fn report_error(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve(args) => {
            let run = match resolve(&args) {
                Ok(r) => r,
                Err(e) => return report_error(&e),
            };
            let out = match solve(&run) {
                Ok(o) => o,
                Err(e @ (Error::SolverFailed(_) | Error::DerivativeCheck { .. })) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
                Err(e) => return report_error(&e),
            };
            if let Err(e) = write_outputs(&args, &out) {
                return report_error(&e);
            }
            if out.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Command::Check(args) => {
            let lines = match resolve(&args).and_then(|run| check(&run)) {
                Ok(l) => l,
                Err(e) => return report_error(&e),
            };
            for l in &lines {
                println!("{} {}: {}", if l.pass { "PASS" } else { "FAIL" }, l.name, l.detail);
            }
            if lines.iter().all(|l| l.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
    }
}
