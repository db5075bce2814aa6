//! Batch front end: flat `key = value` run configs, fixture assembly, solver
//! runs with oracle verdicts, and report bundles (CSV, text, optional SVG).
//!
//! A config file holds one `key = value` pair per line; `#` starts a comment.
//! Every key is optional. Unknown keys are rejected so typos surface early.
//! Relative paths are resolved against the directory of the config file.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::diagnostics::{
    bhat_apply_inverse, contraction_estimate, dense_eigensolve, ellipticity_probe, energy_quadraticity, gap_check,
    perturbed_start, residual_equivalence, sturm_eigenvalues, OracleMonitor, OracleReference, TheoryVerdict,
};
use crate::error::Error;
use crate::manifold::{subspace_distance, OrthoFrame, OrthoMethod};
use crate::operators::{
    build_diagonal_operator, build_grid, build_preconditioner, build_schrodinger_1d, PrecondVariant, Preconditioner,
    SymmetricOperator, DENSE_BUDGET,
};
use crate::problems::{Problem, ProblemKind};
use crate::random::{gaussian_vec, rng};
use crate::solvers::{
    default_initial_guess, solve_monitored, Algorithm, ArmijoParams, ConvergenceRecord, IterationRow, LineSearch,
    NoMonitor, SolveOutcome, SolveStatus, SolverConfig,
};

pub const EXIT_OK: i32 = 0;
/// A verdict of `verify` or `compare` failed although the solver converged.
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

/// Column names of the convergence CSV, in order.
pub const CONVERGENCE_COLUMNS: [&str; 8] =
    ["iter", "energy", "res_l2", "res_dual", "subspace_err_l2", "subspace_err_bhat", "rate_est", "step"];
pub const VERDICT_COLUMNS: [&str; 6] = ["check", "passed", "seed", "measured", "tolerances", "note"];

/// Verdict thresholds.
pub const FINAL_DISTANCE_MAX: f64 = 1e-8;
pub const CONTRACTION_TRAILING: usize = 10;
pub const CONTRACTION_SPREAD_MAX: f64 = 0.05;
pub const EQUIVALENCE_RATIO_MAX: f64 = 100.0;
pub const QUADRATIC_RATIO_MAX: f64 = 10.0;
pub const ORACLE_RESIDUAL_MAX: f64 = 1e-10;
pub const STURM_AGREEMENT: f64 = 1e-10;
pub const ELLIPTICITY_RELATIVE: f64 = 1e-4;
pub const ELLIPTICITY_STEPS: usize = 200;
pub const COMPARE_DISTANCE_MAX: f64 = 1e-7;
pub const COMPARE_RATE_SPREAD: f64 = 0.15;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}:{line}: unknown key '{key}'")]
    UnknownKey { path: String, line: usize, key: String },
    #[error("invalid value for '{key}': {message}")]
    Type { key: String, message: String },
    #[error("cannot read config {path}: {source}")]
    ReadConfig {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot build fixture: {0}")]
    Fixture(#[source] Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Numerical(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse { .. }
            | Self::UnknownKey { .. }
            | Self::Type { .. }
            | Self::ReadConfig { .. }
            | Self::Fixture(_) => EXIT_USAGE,
            _ => EXIT_CHECK_FAILED,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Csv(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Zero,
    /// `½x²`.
    Harmonic,
    /// `-5` on `|x| < 2`, zero elsewhere.
    Well,
    /// A diagonal operator with the listed entries; the grid keys are ignored.
    Diagonal(Vec<f64>),
}

impl Potential {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Zero | Self::Diagonal(_) => 0.0,
            Self::Harmonic => 0.5 * x * x,
            Self::Well => {
                if x.abs() < 2.0 {
                    -5.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl FromStr for Potential {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "zero" => Ok(Self::Zero),
            "harmonic" => Ok(Self::Harmonic),
            "well" => Ok(Self::Well),
            other => {
                let list = other
                    .strip_prefix("diagonal:")
                    .ok_or_else(|| format!("expected zero, harmonic, well or diagonal:<list>, got '{other}'"))?;
                let values = list.split(',').map(|v| finite(v.trim())).collect::<Result<Vec<_>, _>>()?;
                if values.is_empty() {
                    return Err("diagonal potential needs at least one entry".into());
                }
                Ok(Self::Diagonal(values))
            }
        }
    }
}

impl std::fmt::Display for Potential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Zero => f.write_str("zero"),
            Self::Harmonic => f.write_str("harmonic"),
            Self::Well => f.write_str("well"),
            Self::Diagonal(v) => {
                let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "diagonal:{}", items.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitKind {
    /// Lowest Dirichlet modes of the grid Laplacian (random for diagonal operators).
    #[default]
    Laplacian,
    /// Seeded Gaussian frame.
    Random,
    /// Oracle subspace plus a seeded smooth perturbation of size `init.scale`.
    Perturbed,
}

impl FromStr for InitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "laplacian" => Ok(Self::Laplacian),
            "random" => Ok(Self::Random),
            "perturbed" => Ok(Self::Perturbed),
            other => Err(format!("expected laplacian, random or perturbed, got '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub out_dir: PathBuf,
    pub svg: bool,
    pub oracle: bool,
    pub grid_n: usize,
    pub grid_a: f64,
    pub grid_b: f64,
    pub potential: Potential,
    pub precond: PrecondVariant,
    pub precond_shift: f64,
    pub precond_alpha: f64,
    pub problem: ProblemKind,
    pub states: usize,
    pub kappa: f64,
    pub solver: SolverConfig<f64>,
    pub init: InitKind,
    pub init_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            out_dir: PathBuf::from("out"),
            svg: false,
            oracle: true,
            grid_n: 400,
            grid_a: -10.0,
            grid_b: 10.0,
            potential: Potential::Harmonic,
            precond: PrecondVariant::Shifted,
            precond_shift: 1.0,
            precond_alpha: 1.0,
            problem: ProblemKind::Simplified,
            states: 4,
            kappa: 0.5,
            solver: SolverConfig::default(),
            init: InitKind::Laplacian,
            init_scale: 0.25,
        }
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.solver.seed
    }

    /// Applies the command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(seed) = seed {
            self.solver.seed = seed;
            if let Some(inner) = self.solver.scf_inner.as_mut() {
                inner.seed = seed;
            }
        }
        if let Some(out) = out {
            self.out_dir = out;
        }
        self
    }
}

fn finite(v: &str) -> Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("expected a number, got '{v}'"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("expected a finite number, got '{v}'"))
    }
}

fn positive(v: &str) -> Result<f64, String> {
    let x = finite(v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(format!("must be positive, got {x}"))
    }
}

fn count(v: &str) -> Result<usize, String> {
    v.parse().map_err(|_| format!("expected a non-negative integer, got '{v}'"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("expected true or false, got '{other}'")),
    }
}

fn via_from_str<V: FromStr<Err = Error>>(v: &str) -> Result<V, String> {
    v.parse().map_err(|e: Error| e.to_string())
}

fn linesearch(v: &str) -> Result<LineSearch<f64>, String> {
    match v {
        "off" => Ok(LineSearch::Off),
        "armijo" => Ok(LineSearch::Armijo(ArmijoParams::default())),
        other => {
            let args = other
                .strip_prefix("armijo(")
                .and_then(|s| s.strip_suffix(')'))
                .ok_or_else(|| format!("expected off, armijo or armijo(c1, shrink, max_backtracks), got '{other}'"))?;
            let parts: Vec<&str> = args.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(format!("armijo takes three arguments, got {}", parts.len()));
            }
            Ok(LineSearch::Armijo(ArmijoParams {
                c1: finite(parts[0])?,
                shrink: finite(parts[1])?,
                max_backtracks: count(parts[2])?,
            }))
        }
    }
}

/// Sets one solver key (shared by `solver.*` and `scf.inner.*`).
fn set_solver_key(cfg: &mut SolverConfig<f64>, key: &str, value: &str) -> Option<Result<(), String>> {
    let result = match key {
        "algorithm" => via_from_str(value).map(|v| cfg.algorithm = v),
        "max_iters" => count(value).map(|v| cfg.max_iters = v),
        "tol" => positive(value).map(|v| cfg.tol = v),
        "ortho" => via_from_str::<OrthoMethod>(value).map(|v| cfg.ortho = v),
        "linesearch" => linesearch(value).map(|v| cfg.linesearch = v),
        "step_t" => finite(value).map(|v| cfg.step_t = v),
        "seed" => {
            value.parse().map(|v| cfg.seed = v).map_err(|_| format!("expected an unsigned integer, got '{value}'"))
        }
        _ => return None,
    };
    Some(result)
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let text =
        fs::read_to_string(path).map_err(|source| CliError::ReadConfig { path: path.display().to_string(), source })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    parse_config_str(&text, stem, base, &path.display().to_string())
}

/// Parses config text; `name` is the default run name, `base` the directory
/// relative paths resolve against, `origin` the label used in messages.
pub fn parse_config_str(text: &str, name: &str, base: &Path, origin: &str) -> CliResult<RunConfig> {
    let mut cfg = RunConfig { name: name.to_string(), out_dir: base.join("out"), ..RunConfig::default() };
    let mut inner: Option<SolverConfig<f64>> = None;
    let mut seen = std::collections::BTreeSet::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| CliError::Parse {
            path: origin.into(),
            line,
            message: format!("expected 'key = value', got '{content}'"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(CliError::Parse { path: origin.into(), line, message: format!("duplicate key '{key}'") });
        }
        let result: Result<(), String> = match key {
            "run.name" => {
                if value.is_empty() {
                    Err("must not be empty".into())
                } else {
                    cfg.name = value.to_string();
                    Ok(())
                }
            }
            "run.out_dir" => {
                cfg.out_dir = base.join(value);
                Ok(())
            }
            "report.svg" => boolean(value).map(|v| cfg.svg = v),
            "oracle.enabled" => boolean(value).map(|v| cfg.oracle = v),
            "grid.n" => count(value).map(|v| cfg.grid_n = v),
            "grid.a" => finite(value).map(|v| cfg.grid_a = v),
            "grid.b" => finite(value).map(|v| cfg.grid_b = v),
            "operator.potential" => value.parse().map(|v| cfg.potential = v),
            "precond.variant" => via_from_str(value).map(|v| cfg.precond = v),
            "precond.shift" => finite(value).map(|v| cfg.precond_shift = v),
            "precond.alpha" => positive(value).map(|v| cfg.precond_alpha = v),
            "problem.kind" => via_from_str(value).map(|v| cfg.problem = v),
            "problem.N" => count(value).map(|v| cfg.states = v),
            "problem.kappa" => finite(value).map(|v| cfg.kappa = v),
            "init.kind" => value.parse().map(|v| cfg.init = v),
            "init.scale" => positive(value).map(|v| cfg.init_scale = v),
            _ => {
                let handled = if let Some(sub) = key.strip_prefix("solver.") {
                    set_solver_key(&mut cfg.solver, sub, value)
                } else if let Some(sub) = key.strip_prefix("scf.inner.") {
                    let seed = cfg.solver.seed;
                    let target = inner.get_or_insert_with(|| SolverConfig { seed, ..cfg.solver.inner() });
                    set_solver_key(target, sub, value)
                } else {
                    None
                };
                handled.ok_or_else(|| CliError::UnknownKey { path: origin.into(), line, key: key.into() })?
            }
        };
        result.map_err(|message| CliError::Type { key: key.into(), message })?;
    }
    cfg.solver.scf_inner = inner.map(Box::new);
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> CliResult<()> {
    let bad = |key: &str, message: String| Err(CliError::Type { key: key.into(), message });
    if cfg.grid_n < 2 {
        return bad("grid.n", format!("need at least 2 points, got {}", cfg.grid_n));
    }
    if cfg.grid_a >= cfg.grid_b {
        return bad("grid.b", format!("interval [{}, {}] is empty", cfg.grid_a, cfg.grid_b));
    }
    if cfg.states == 0 {
        return bad("problem.N", "need at least one state".into());
    }
    if cfg.kappa < 0.0 {
        return bad("problem.kappa", format!("must be non-negative, got {}", cfg.kappa));
    }
    cfg.solver.validate().or_else(|e| bad("solver", e.to_string()))
}

/// Everything a run needs, assembled from a config.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub problem: Problem<f64>,
    pub precond: Preconditioner<f64>,
    /// Dense oracle; present when the oracle is enabled or the start needs it.
    pub reference: Option<OracleReference<f64>>,
    pub oracle_enabled: bool,
    pub start: OrthoFrame<f64>,
}

impl Fixture {
    /// The reference used for measurements, if the oracle is enabled.
    pub fn oracle(&self) -> Option<&OracleReference<f64>> {
        self.reference.as_ref().filter(|_| self.oracle_enabled)
    }
}

pub fn build_operator(cfg: &RunConfig) -> crate::Result<SymmetricOperator<f64>> {
    match &cfg.potential {
        Potential::Diagonal(values) => build_diagonal_operator(values),
        potential => {
            let grid = build_grid(cfg.grid_n, cfg.grid_a, cfg.grid_b)?;
            build_schrodinger_1d(&grid, |x| potential.eval(x))
        }
    }
}

/// Dense reference for either problem kind.
///
/// The linear problem uses the eigenvectors of `A`. The density-dependent
/// problem has no closed form: it is solved tightly by projected gradient
/// first, then replaced by the eigenvectors of the self-consistent operator.
pub fn oracle_reference(problem: &Problem<f64>, precond: &Preconditioner<f64>) -> crate::Result<OracleReference<f64>> {
    match problem.kind() {
        ProblemKind::Simplified => dense_eigensolve(problem.base(), problem.states()),
        ProblemKind::ToyLda => {
            let start = default_initial_guess(problem, 0)?;
            let cfg = SolverConfig { tol: 1e-12, max_iters: 5000, ..SolverConfig::default() };
            let out = solve_monitored(problem, precond, &start, &cfg, &mut NoMonitor)?;
            let reached = out.record.last().map_or(f64::INFINITY, |r| r.res_dual);
            if out.status == SolveStatus::Diverged || reached > 1e-9 {
                return Err(Error::NoConvergence { what: "self-consistent reference", iterations: out.record.len() });
            }
            dense_eigensolve(&problem.gradient_operator(&out.frame)?, problem.states())
        }
    }
}

pub fn build_fixture(cfg: &RunConfig) -> CliResult<Fixture> {
    let build = || -> crate::Result<Fixture> {
        let op = build_operator(cfg)?;
        let problem = match cfg.problem {
            ProblemKind::Simplified => Problem::simplified(op, cfg.states)?,
            ProblemKind::ToyLda => Problem::toy_lda(op, cfg.kappa, cfg.states)?,
        };
        let precond = build_preconditioner(cfg.precond, problem.base(), cfg.precond_shift, cfg.precond_alpha)?;
        let reference = if cfg.oracle || cfg.init == InitKind::Perturbed {
            Some(oracle_reference(&problem, &precond)?)
        } else {
            None
        };
        let base = problem.base();
        let start = match (cfg.init, &reference) {
            (InitKind::Laplacian, _) => default_initial_guess(&problem, cfg.seed())?,
            (InitKind::Random, _) => OrthoFrame::random(base.dim(), cfg.states, base.weight(), cfg.seed())?,
            (InitKind::Perturbed, Some(r)) => perturbed_start(r, &precond, cfg.init_scale, cfg.seed())?,
            (InitKind::Perturbed, None) => unreachable!("reference is built for perturbed starts"),
        };
        Ok(Fixture { problem, precond, reference, oracle_enabled: cfg.oracle, start })
    };
    build().map_err(CliError::Fixture)
}

/// Runs one solver configuration on a fixture, measuring against the oracle
/// when it is enabled.
pub fn solve_fixture(fixture: &Fixture, solver: &SolverConfig<f64>) -> crate::Result<SolveOutcome<f64>> {
    match fixture.oracle() {
        Some(reference) => {
            let mut monitor = OracleMonitor::new(reference).with_energy(&fixture.problem);
            if fixture.problem.base().dim() <= DENSE_BUDGET {
                monitor = monitor.with_bhat(&fixture.precond)?;
            }
            solve_monitored(&fixture.problem, &fixture.precond, &fixture.start, solver, &mut monitor)
        }
        None => solve_monitored(&fixture.problem, &fixture.precond, &fixture.start, solver, &mut NoMonitor),
    }
}

/// Verdicts computed from a run's record and final frame.
pub fn record_verdicts(fixture: &Fixture, outcome: &SolveOutcome<f64>, seed: u64) -> Vec<TheoryVerdict> {
    let Some(reference) = fixture.oracle() else {
        return Vec::new();
    };
    let record = &outcome.record;
    let mut verdicts = Vec::new();

    let v = TheoryVerdict::new("final_distance", seed).tolerance("max", FINAL_DISTANCE_MAX);
    verdicts.push(match subspace_distance(reference.frame(), &outcome.frame) {
        Ok(d) => {
            v.measure("aligned", d.aligned).measure("projector", d.projector).pass(d.aligned <= FINAL_DISTANCE_MAX)
        }
        Err(e) => v.failed_with(e.to_string()),
    });

    let v = TheoryVerdict::new("contraction", seed)
        .tolerance("trailing", CONTRACTION_TRAILING as f64)
        .tolerance("chi_max", 1.0)
        .tolerance("stddev_max", CONTRACTION_SPREAD_MAX);
    verdicts.push(match contraction_estimate(record, CONTRACTION_TRAILING) {
        Ok((chi, sd)) => v.measure("chi", chi).measure("stddev", sd).pass(chi < 1.0 && sd < CONTRACTION_SPREAD_MAX),
        Err(e) => v.failed_with(e.to_string()),
    });

    let v = TheoryVerdict::new("residual_equivalence", seed).tolerance("ratio_max", EQUIVALENCE_RATIO_MAX);
    verdicts.push(match residual_equivalence(record) {
        Ok((c, big_c)) => {
            let ratio = big_c / c;
            v.measure("c", c)
                .measure("C", big_c)
                .measure("ratio", ratio)
                .pass(c > 0.0 && ratio <= EQUIVALENCE_RATIO_MAX)
        }
        Err(e) => v.failed_with(e.to_string()),
    });

    let v = TheoryVerdict::new("energy_quadraticity", seed).tolerance("ratio_max", QUADRATIC_RATIO_MAX);
    verdicts.push(match energy_quadraticity(record, reference, &fixture.problem) {
        Ok((lo, hi)) => {
            let ratio = hi / lo;
            v.measure("q_min", lo)
                .measure("q_max", hi)
                .measure("ratio", ratio)
                .pass(lo > 0.0 && ratio <= QUADRATIC_RATIO_MAX)
        }
        Err(e) => v.failed_with(e.to_string()),
    });

    let v = TheoryVerdict::new("gap", seed);
    verdicts.push(match gap_check(reference) {
        Ok((gap, ok)) => v.measure("gap", gap).tolerance("min", crate::diagnostics::GAP_THRESHOLD).pass(ok),
        Err(e) => v.failed_with(e.to_string()),
    });
    verdicts
}

/// Additional oracle-level verdicts run by `verify`.
pub fn oracle_verdicts(fixture: &Fixture, seed: u64) -> Vec<TheoryVerdict> {
    let Some(reference) = fixture.oracle() else {
        return Vec::new();
    };
    let op = fixture.problem.base();
    let mut verdicts = Vec::new();

    // For the density-dependent problem the reference diagonalizes A_Ψ, not A.
    let diagonalized = match fixture.problem.gradient_operator(reference.frame()) {
        Ok(op) => op,
        Err(e) => return vec![TheoryVerdict::new("oracle_residual", seed).failed_with(e.to_string())],
    };
    let residual = reference.residual(&diagonalized);
    verdicts.push(
        TheoryVerdict::new("oracle_residual", seed)
            .measure("residual", residual)
            .tolerance("max", ORACLE_RESIDUAL_MAX)
            .pass(residual <= ORACLE_RESIDUAL_MAX),
    );

    if op.tridiagonal().is_some() {
        let v = TheoryVerdict::new("sturm_cross_check", seed).tolerance("max_abs", STURM_AGREEMENT);
        let jacobi: Vec<f64> = reference.eigenvalues().iter().copied().chain(reference.next_eigenvalue()).collect();
        verdicts.push(match sturm_eigenvalues(&diagonalized, jacobi.len()) {
            Ok(sturm) => {
                let worst = jacobi.iter().zip(&sturm).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                v.measure("max_abs", worst).pass(worst <= STURM_AGREEMENT)
            }
            Err(e) => v.failed_with(e.to_string()),
        });
    }

    let v = TheoryVerdict::new("bhat_symmetry", seed).tolerance("relative", 1e-12);
    let n = op.dim();
    let h = op.weight();
    let dot = |u: &[f64], w: &[f64]| h * u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let mut g = rng(seed);
    let mut asym = 0.0f64;
    let mut min_form = f64::INFINITY;
    let mut failure = None;
    for _ in 0..10 {
        let u: Vec<f64> = gaussian_vec(&mut g, n);
        let w: Vec<f64> = gaussian_vec(&mut g, n);
        match (bhat_apply_inverse(reference, &fixture.precond, &u), bhat_apply_inverse(reference, &fixture.precond, &w))
        {
            (Ok(bu), Ok(bw)) => {
                let (lhs, rhs) = (dot(&bu, &w), dot(&u, &bw));
                asym = asym.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE));
                min_form = min_form.min(dot(&bu, &u) / dot(&u, &u));
            }
            (Err(e), _) | (_, Err(e)) => failure = Some(e.to_string()),
        }
    }
    verdicts.push(match failure {
        Some(note) => v.failed_with(note),
        None => v.measure("asymmetry", asym).measure("min_quotient", min_form).pass(asym <= 1e-12 && min_form > 0.0),
    });

    let v = TheoryVerdict::new("ellipticity", seed).tolerance("relative_to_gap", ELLIPTICITY_RELATIVE);
    verdicts.push(match ellipticity_probe(&fixture.problem, reference.frame(), ELLIPTICITY_STEPS, seed) {
        Ok(min) => {
            let v = v.measure("min_quotient", min);
            match (fixture.problem.kind(), reference.gap()) {
                (ProblemKind::Simplified, Some(gap)) => {
                    let rel = (min - gap).abs() / gap.abs().max(f64::MIN_POSITIVE);
                    v.measure("gap", gap).measure("relative_error", rel).pass(rel <= ELLIPTICITY_RELATIVE)
                }
                _ => v.pass(min > 0.0),
            }
        }
        Err(e) => v.failed_with(e.to_string()),
    });
    verdicts
}

/// Files written by a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportBundle {
    pub convergence: Vec<PathBuf>,
    pub verdicts: PathBuf,
    pub report: PathBuf,
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub status: SolveStatus,
    pub verdicts: Vec<TheoryVerdict>,
    pub bundle: ReportBundle,
    pub exit_code: i32,
    /// Human-readable report (also written to the bundle).
    pub report: String,
}

fn status_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::Converged => EXIT_OK,
        SolveStatus::NotConverged => EXIT_NOT_CONVERGED,
        SolveStatus::Diverged => EXIT_DIVERGED,
    }
}

fn worst(a: SolveStatus, b: SolveStatus) -> SolveStatus {
    if a == SolveStatus::Diverged || b == SolveStatus::Diverged {
        SolveStatus::Diverged
    } else if a == SolveStatus::NotConverged || b == SolveStatus::NotConverged {
        SolveStatus::NotConverged
    } else {
        SolveStatus::Converged
    }
}

fn checked_code(status: SolveStatus, verdicts: &[TheoryVerdict]) -> i32 {
    match status_code(status) {
        EXIT_OK if verdicts.iter().any(|v| !v.passed) => EXIT_CHECK_FAILED,
        code => code,
    }
}

/// `solve`: build, run, measure, write the bundle. The exit code reflects
/// convergence only.
pub fn run_solve(cfg: &RunConfig) -> CliResult<RunSummary> {
    let fixture = build_fixture(cfg)?;
    let outcome = solve_fixture(&fixture, &cfg.solver)?;
    let verdicts = record_verdicts(&fixture, &outcome, cfg.seed());
    let code = status_code(outcome.status);
    finish(cfg, &fixture, &[(cfg.solver.algorithm, &outcome)], verdicts, outcome.status, code)
}

/// `verify`: `solve` plus the oracle-level checks; any failed verdict turns a
/// converged run into [`EXIT_CHECK_FAILED`].
pub fn run_verify(cfg: &RunConfig) -> CliResult<RunSummary> {
    if !cfg.oracle {
        return Err(CliError::Type { key: "oracle.enabled".into(), message: "verify needs the dense oracle".into() });
    }
    let fixture = build_fixture(cfg)?;
    let outcome = solve_fixture(&fixture, &cfg.solver)?;
    let mut verdicts = record_verdicts(&fixture, &outcome, cfg.seed());
    verdicts.extend(oracle_verdicts(&fixture, cfg.seed()));
    let code = checked_code(outcome.status, &verdicts);
    finish(cfg, &fixture, &[(cfg.solver.algorithm, &outcome)], verdicts, outcome.status, code)
}

/// `compare`: the three direct schemes from one start, with pairwise final
/// distances and (with the oracle) their contraction estimates.
pub fn run_compare(cfg: &RunConfig) -> CliResult<RunSummary> {
    let fixture = build_fixture(cfg)?;
    let algorithms = [Algorithm::ProjectedGradient, Algorithm::TangentGradient, Algorithm::Geodesic];
    let mut outcomes = Vec::new();
    for alg in algorithms {
        let solver = SolverConfig { algorithm: alg, scf_inner: None, ..cfg.solver.clone() };
        outcomes.push(solve_fixture(&fixture, &solver)?);
    }
    let seed = cfg.seed();
    let mut verdicts = Vec::new();
    for i in 0..3 {
        for j in i + 1..3 {
            let d = subspace_distance(&outcomes[i].frame, &outcomes[j].frame)?;
            verdicts.push(
                TheoryVerdict::new(format!("distance_{}_{}", algorithms[i], algorithms[j]), seed)
                    .measure("aligned", d.aligned)
                    .tolerance("max", COMPARE_DISTANCE_MAX)
                    .pass(d.aligned <= COMPARE_DISTANCE_MAX),
            );
        }
    }
    if fixture.oracle().is_some() {
        let mut v = TheoryVerdict::new("rate_spread", seed).tolerance("max", COMPARE_RATE_SPREAD);
        let mut rates = Vec::new();
        for (alg, out) in algorithms.iter().zip(&outcomes) {
            match contraction_estimate(&out.record, CONTRACTION_TRAILING) {
                Ok((chi, _)) => {
                    v = v.measure(format!("chi_{alg}"), chi);
                    rates.push(chi);
                }
                Err(e) => v = v.measure(format!("chi_{alg}"), f64::NAN).failed_with(format!("{alg}: {e}")),
            }
        }
        if rates.len() == 3 {
            let spread = rates.iter().fold(f64::NEG_INFINITY, |m, &r| m.max(r))
                - rates.iter().fold(f64::INFINITY, |m, &r| m.min(r));
            v = v.measure("spread", spread).pass(spread <= COMPARE_RATE_SPREAD);
        }
        verdicts.push(v);
    }
    let status = outcomes.iter().fold(SolveStatus::Converged, |s, o| worst(s, o.status));
    let code = checked_code(status, &verdicts);
    let runs: Vec<(Algorithm, &SolveOutcome<f64>)> = algorithms.iter().copied().zip(&outcomes).collect();
    finish(cfg, &fixture, &runs, verdicts, status, code)
}

fn finish(
    cfg: &RunConfig,
    fixture: &Fixture,
    runs: &[(Algorithm, &SolveOutcome<f64>)],
    verdicts: Vec<TheoryVerdict>,
    status: SolveStatus,
    exit_code: i32,
) -> CliResult<RunSummary> {
    let report = render_report(cfg, fixture, runs, &verdicts, status);
    let mut writer = BundleWriter::default();
    let result = (|| {
        let mut bundle = ReportBundle::default();
        for (alg, outcome) in runs {
            let file = if runs.len() == 1 {
                format!("{}.convergence.csv", cfg.name)
            } else {
                format!("{}.{alg}.convergence.csv", cfg.name)
            };
            bundle.convergence.push(writer.write(&cfg.out_dir.join(file), &convergence_csv(&outcome.record)?)?);
        }
        bundle.verdicts =
            writer.write(&cfg.out_dir.join(format!("{}.verdicts.csv", cfg.name)), &verdicts_csv(&verdicts)?)?;
        bundle.report = writer.write(&cfg.out_dir.join(format!("{}.report.txt", cfg.name)), report.as_bytes())?;
        if cfg.svg {
            let series: Vec<(String, &ConvergenceRecord<f64>)> =
                runs.iter().map(|(alg, o)| (alg.to_string(), &o.record)).collect();
            let svg = render_svg(&series);
            bundle.svg = Some(writer.write(&cfg.out_dir.join(format!("{}.svg", cfg.name)), svg.as_bytes())?);
        }
        Ok(bundle)
    })();
    match result {
        Ok(bundle) => Ok(RunSummary { status, verdicts, bundle, exit_code, report }),
        Err(e) => {
            writer.remove_all();
            Err(e)
        }
    }
}

/// Atomic writes (temporary file + rename) that can be rolled back.
#[derive(Debug, Default)]
struct BundleWriter {
    written: Vec<PathBuf>,
}

impl BundleWriter {
    fn write(&mut self, path: &Path, bytes: &[u8]) -> CliResult<PathBuf> {
        let io = |context: String| move |source| CliError::Io { context, source };
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| Path::new("."));
        fs::create_dir_all(dir).map_err(io(format!("creating {}", dir.display())))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)
            .map_err(io(format!("creating a temporary file in {}", dir.display())))?;
        tmp.write_all(bytes).map_err(io(format!("writing {}", path.display())))?;
        tmp.persist(path)
            .map_err(|e| CliError::Io { context: format!("renaming into {}", path.display()), source: e.error })?;
        self.written.push(path.to_path_buf());
        Ok(path.to_path_buf())
    }

    fn remove_all(&mut self) {
        for path in self.written.drain(..) {
            let _ = fs::remove_file(path);
        }
    }
}

/// 17 significant digits: exact round trip at double precision.
fn number(x: f64) -> String {
    format!("{x:.16e}")
}

fn optional(x: Option<f64>) -> String {
    x.map(number).unwrap_or_default()
}

/// Renders a convergence record; absent oracle quantities are empty fields.
pub fn convergence_csv(record: &ConvergenceRecord<f64>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CONVERGENCE_COLUMNS)?;
    for r in &record.rows {
        w.write_record([
            r.iter.to_string(),
            number(r.energy),
            number(r.res_l2),
            number(r.res_dual),
            optional(r.err_l2),
            optional(r.err_bhat),
            optional(r.rate),
            number(r.step),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Csv(e.to_string()))
}

/// Reads back a convergence CSV written by [`convergence_csv`]. The energy
/// excess is not part of the file and comes back as `None`.
pub fn parse_convergence_csv(bytes: &[u8]) -> CliResult<ConvergenceRecord<f64>> {
    let mut reader = csv::Reader::from_reader(bytes);
    let header = reader.headers()?.clone();
    if header.iter().ne(CONVERGENCE_COLUMNS) {
        return Err(CliError::Csv(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| -> CliResult<Option<f64>> {
            let s = &record[i];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| CliError::Csv(format!("row {}: bad number '{s}'", line + 1)))
        };
        let required = |i: usize| -> CliResult<f64> {
            field(i)?.ok_or_else(|| CliError::Csv(format!("row {}: missing {}", line + 1, CONVERGENCE_COLUMNS[i])))
        };
        rows.push(IterationRow {
            iter: record[0].parse().map_err(|_| CliError::Csv(format!("row {}: bad iteration", line + 1)))?,
            energy: required(1)?,
            res_l2: required(2)?,
            res_dual: required(3)?,
            err_l2: field(4)?,
            err_bhat: field(5)?,
            energy_gap: None,
            rate: field(6)?,
            step: required(7)?,
        });
    }
    Ok(ConvergenceRecord { rows })
}

fn pairs(items: &[(String, f64)]) -> String {
    items.iter().map(|(k, v)| format!("{k}={v:e}")).collect::<Vec<_>>().join(";")
}

pub fn verdicts_csv(verdicts: &[TheoryVerdict]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(VERDICT_COLUMNS)?;
    for v in verdicts {
        w.write_record([
            v.name.clone(),
            v.passed.to_string(),
            v.seed.to_string(),
            pairs(&v.measured),
            pairs(&v.tolerances),
            v.note.clone().unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Csv(e.to_string()))
}

fn render_report(
    cfg: &RunConfig,
    fixture: &Fixture,
    runs: &[(Algorithm, &SolveOutcome<f64>)],
    verdicts: &[TheoryVerdict],
    status: SolveStatus,
) -> String {
    let mut s = String::new();
    let op = fixture.problem.base();
    let _ = writeln!(s, "run: {}", cfg.name);
    let _ = writeln!(
        s,
        "problem: {} with N = {} on {} points (h = {}), potential {}",
        cfg.problem,
        cfg.states,
        op.dim(),
        op.weight(),
        cfg.potential
    );
    if cfg.problem == ProblemKind::ToyLda {
        let _ = writeln!(s, "coupling: kappa = {}", cfg.kappa);
    }
    let _ = writeln!(s, "preconditioner: {} (shift {}, alpha {})", cfg.precond, cfg.precond_shift, cfg.precond_alpha);
    let _ = writeln!(s, "seed: {}", cfg.seed());
    if let Some(r) = fixture.oracle() {
        let values: Vec<String> = r.eigenvalues().iter().map(|v| format!("{v:.10}")).collect();
        let _ = writeln!(s, "oracle eigenvalues: {}", values.join(", "));
        if let Some(gap) = r.gap() {
            let _ = writeln!(s, "oracle gap: {gap:.10}");
        }
    }
    for (alg, out) in runs {
        let _ = writeln!(s);
        let _ = writeln!(s, "[{alg}] {} after {} recorded iterates", out.status, out.record.len());
        if let Some(last) = out.record.last() {
            let _ = writeln!(s, "  energy        {:.15}", last.energy);
            let _ = writeln!(s, "  res_dual      {:.3e}", last.res_dual);
            if let Some(e) = last.err_l2 {
                let _ = writeln!(s, "  subspace err  {e:.3e}");
            }
        }
        if out.inner_unconverged > 0 {
            let _ = writeln!(s, "  inner solves at iteration limit: {}", out.inner_unconverged);
        }
    }
    if !verdicts.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "checks:");
        for v in verdicts {
            let mark = if v.passed { "pass" } else { "FAIL" };
            let _ = write!(s, "  [{mark}] {:<24} {}", v.name, pairs(&v.measured));
            if let Some(note) = &v.note {
                let _ = write!(s, " ({note})");
            }
            let _ = writeln!(s);
        }
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "overall: {status}");
    s
}

/// One log-scale chart with a polyline per (run, series) pair.
pub fn render_svg(runs: &[(String, &ConvergenceRecord<f64>)]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 180.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 50.0;
    const COLORS: [&str; 9] =
        ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2", "#7f7f7f"];

    type Extract = fn(&IterationRow<f64>) -> Option<f64>;
    let extractors: [(&str, Extract); 3] =
        [("err_l2", |r| r.err_l2), ("err_bhat", |r| r.err_bhat), ("res_dual", |r| Some(r.res_dual))];
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (run, record) in runs {
        for (label, f) in extractors {
            let points: Vec<(f64, f64)> = record
                .rows
                .iter()
                .filter_map(|r| f(r).filter(|v| *v > 0.0 && v.is_finite()).map(|v| (r.iter as f64, v.log10())))
                .collect();
            if !points.is_empty() {
                series.push((format!("{run} {label}"), points));
            }
        }
    }
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x_max, mut y_min, mut y_max) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !y_min.is_finite() {
        y_min = -1.0;
        y_max = 0.0;
    }
    let (y_lo, y_hi) = (y_min.floor().max(-20.0), y_max.ceil().max(y_min.floor() + 1.0));
    let px = |x: f64| LEFT + (W - LEFT - RIGHT) * x / x_max;
    let py = |y: f64| TOP + (H - TOP - BOTTOM) * (y_hi - y.max(y_lo)) / (y_hi - y_lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g stroke="black" fill="none"><line x1="{LEFT}" y1="{}" x2="{}" y2="{}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}"/></g>"#,
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM,
        H - BOTTOM
    );
    let step = ((y_hi - y_lo) / 10.0).ceil().max(1.0) as i64;
    let mut decade = y_lo as i64;
    while decade as f64 <= y_hi {
        let y = py(decade as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/><text x="{}" y="{:.2}" font-size="11" text-anchor="end">1e{decade}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            y + 4.0
        );
        decade += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" font-size="12" text-anchor="middle">iteration (0 to {x_max})</text>"#,
        LEFT + (W - LEFT - RIGHT) / 2.0,
        H - 15.0
    );
    for (k, (label, points)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        let ly = TOP + 16.0 * k as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-size="11">{label}</text>"#,
            W - RIGHT + 10.0,
            W - RIGHT + 30.0,
            W - RIGHT + 35.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
