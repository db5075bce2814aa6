//! Iteration schemes on the Grassmann manifold.
//!
//! Each step starts from the subspace residual `R = A_Φ Φ - Φ Λ` and its
//! preconditioned image `B⁻¹R`:
//!
//! * projected gradient: `Φ̂ = Φ - B⁻¹R`, then orthonormalize;
//! * tangent-projected gradient: `Φ̂ = Φ - (I - D_Φ) B⁻¹R`, then orthonormalize;
//! * geodesic: move along the geodesic from `Φ` with velocity `-(I - D_Φ) B⁻¹R`.
//!
//! The self-consistent-field loop freezes `A_Φ` and solves the resulting
//! linear eigenproblem with one of the above before updating the operator.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::manifold::{geodesic_step, orthonormalize, project_tangent, BlockVector, OrthoFrame, OrthoMethod};
use crate::operators::Preconditioner;
use crate::problems::{residual_norms_of, Problem};
use crate::scalar::Scalar;

/// Energy growth factor (relative to `|𝒥(Φ₀)|`) that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    /// Preconditioned residual step followed by orthonormalization.
    #[default]
    ProjectedGradient,
    /// Same, with the preconditioned residual projected onto the tangent space.
    TangentGradient,
    /// Geodesic exponential step along the tangent-projected direction.
    Geodesic,
    /// Outer self-consistent-field loop around an inner linear solve.
    SelfConsistent,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1" => Ok(Self::ProjectedGradient),
            "alg2" => Ok(Self::TangentGradient),
            "alg3" => Ok(Self::Geodesic),
            "scf" => Ok(Self::SelfConsistent),
            other => Err(Error::InvalidArgument(format!("unknown algorithm '{other}'"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ProjectedGradient => "alg1",
            Self::TangentGradient => "alg2",
            Self::Geodesic => "alg3",
            Self::SelfConsistent => "scf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoParams<T> {
    pub c1: T,
    pub shrink: T,
    pub max_backtracks: usize,
}

impl<T: Scalar> Default for ArmijoParams<T> {
    fn default() -> Self {
        Self { c1: T::lit(1e-4), shrink: T::lit(0.5), max_backtracks: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LineSearch<T> {
    #[default]
    Off,
    Armijo(ArmijoParams<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T> {
    pub algorithm: Algorithm,
    pub max_iters: usize,
    /// Stopping threshold on the dual residual norm `√⟨⟨B⁻¹R, R⟩⟩`.
    pub tol: T,
    pub ortho: OrthoMethod,
    pub linesearch: LineSearch<T>,
    /// Geodesic step length (geodesic scheme only).
    pub step_t: T,
    /// Inner solver of the self-consistent-field loop.
    pub scf_inner: Option<Box<SolverConfig<T>>>,
    pub seed: u64,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::ProjectedGradient,
            max_iters: 500,
            tol: T::tol(1e-10),
            ortho: OrthoMethod::GramSchmidt,
            linesearch: LineSearch::Off,
            step_t: T::one(),
            scf_inner: None,
            seed: 0,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn with_algorithm(algorithm: Algorithm) -> Self {
        Self { algorithm, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > T::zero()) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !self.step_t.is_finite() {
            return Err(Error::InvalidArgument("step_t must be finite".into()));
        }
        if let LineSearch::Armijo(p) = self.linesearch {
            if !(p.c1 > T::zero() && p.c1 < T::one()) {
                return Err(Error::InvalidArgument(format!("armijo c1 must lie in (0, 1), got {}", p.c1)));
            }
            if !(p.shrink > T::zero() && p.shrink < T::one()) {
                return Err(Error::InvalidArgument(format!("armijo shrink must lie in (0, 1), got {}", p.shrink)));
            }
        }
        if let Some(inner) = &self.scf_inner {
            if inner.algorithm == Algorithm::SelfConsistent {
                return Err(Error::InvalidArgument("the scf inner solver cannot itself be scf".into()));
            }
            inner.validate()?;
        }
        Ok(())
    }

    /// The inner configuration used by the self-consistent-field loop.
    pub fn inner(&self) -> SolverConfig<T> {
        match &self.scf_inner {
            Some(inner) => (**inner).clone(),
            None => SolverConfig { max_iters: 200, seed: self.seed, ..SolverConfig::default() },
        }
    }
}

/// One row of a convergence history, describing iterate `Φ⁽ⁿ⁾`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRow<T> {
    pub iter: usize,
    pub energy: T,
    pub res_l2: T,
    pub res_dual: T,
    /// `‖(I - D_Ψ) Φ⁽ⁿ⁾‖` against a reference subspace, when one is supplied.
    pub err_l2: Option<T>,
    /// Same error in the preconditioner-induced norm.
    pub err_bhat: Option<T>,
    /// `𝒥(Φ⁽ⁿ⁾) - 𝒥(Ψ)` evaluated without cancellation, when available.
    pub energy_gap: Option<T>,
    /// `e_n / e_{n-1}`.
    pub rate: Option<T>,
    /// Step length used to leave this iterate; zero on the final row.
    pub step: T,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceRecord<T> {
    pub rows: Vec<IterationRow<T>>,
}

impl<T: Scalar> ConvergenceRecord<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRow<T>> {
        self.rows.last()
    }

    /// Appends a row, filling in the rate from the previous row's error.
    fn push(&mut self, mut row: IterationRow<T>) {
        if let (Some(prev), Some(err)) = (self.rows.last().and_then(|r| r.err_l2), row.err_l2) {
            if prev > T::zero() {
                row.rate = Some(err / prev);
            }
        }
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    NotConverged,
    Diverged,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Converged => "converged",
            Self::NotConverged => "not_converged",
            Self::Diverged => "diverged",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome<T> {
    pub frame: OrthoFrame<T>,
    pub record: ConvergenceRecord<T>,
    pub status: SolveStatus,
    /// Inner solves of the self-consistent-field loop that hit their
    /// iteration limit (always zero for the direct schemes).
    pub inner_unconverged: usize,
}

/// Oracle quantities attached to an iterate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation<T> {
    pub err_l2: Option<T>,
    pub err_bhat: Option<T>,
    pub energy_gap: Option<T>,
}

/// Hook called on every recorded iterate.
pub trait Monitor<T> {
    fn observe(&mut self, iter: usize, frame: &OrthoFrame<T>) -> Result<Observation<T>>;
}

/// Records nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoMonitor;

impl<T: Scalar> Monitor<T> for NoMonitor {
    fn observe(&mut self, _iter: usize, _frame: &OrthoFrame<T>) -> Result<Observation<T>> {
        Ok(Observation::default())
    }
}

/// Measures `‖(I - D_Ψ) Φ‖` against a fixed reference frame.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceMonitor<'a, T> {
    pub reference: &'a OrthoFrame<T>,
}

impl<T: Scalar> Monitor<T> for ReferenceMonitor<'_, T> {
    fn observe(&mut self, _iter: usize, frame: &OrthoFrame<T>) -> Result<Observation<T>> {
        let err = project_tangent(self.reference, frame)?.norm();
        Ok(Observation { err_l2: Some(err), ..Observation::default() })
    }
}

/// Wraps a monitor and keeps a copy of every observed iterate.
#[derive(Debug, Clone)]
pub struct FrameRecorder<T, M> {
    pub inner: M,
    pub frames: Vec<OrthoFrame<T>>,
}

impl<T, M> FrameRecorder<T, M> {
    pub fn new(inner: M) -> Self {
        Self { inner, frames: Vec::new() }
    }
}

impl<T: Scalar, M: Monitor<T>> Monitor<T> for FrameRecorder<T, M> {
    fn observe(&mut self, iter: usize, frame: &OrthoFrame<T>) -> Result<Observation<T>> {
        self.frames.push(frame.clone());
        self.inner.observe(iter, frame)
    }
}

/// `B⁻¹R` for the projected-gradient scheme, `(I - D_Φ) B⁻¹R` otherwise.
fn correction<T: Scalar>(
    algorithm: Algorithm,
    phi: &OrthoFrame<T>,
    residual: &BlockVector<T>,
    precond: &Preconditioner<T>,
) -> Result<BlockVector<T>> {
    let preconditioned = residual.apply_preconditioner(precond);
    match algorithm {
        Algorithm::ProjectedGradient => Ok(preconditioned),
        _ => project_tangent(phi, &preconditioned),
    }
}

/// Moves from `phi` along `-t · correction` with the scheme's retraction.
fn advance<T: Scalar>(
    algorithm: Algorithm,
    phi: &OrthoFrame<T>,
    correction: &BlockVector<T>,
    t: T,
    ortho: OrthoMethod,
    problem: &Problem<T>,
) -> Result<OrthoFrame<T>> {
    match algorithm {
        Algorithm::Geodesic => geodesic_step(phi, &correction.scale(-T::one()), t),
        _ => {
            let moved = phi.add_scaled(-t, correction);
            match ortho {
                OrthoMethod::RayleighRitz => {
                    let op = problem.gradient_operator(phi)?;
                    orthonormalize(&moved, ortho, Some(&op))
                }
                _ => orthonormalize(&moved, ortho, None),
            }
        }
    }
}

/// One projected-gradient step: `P(Φ - B⁻¹(A_Φ Φ - Φ Λ))`.
pub fn step_alg1<T: Scalar>(
    problem: &Problem<T>,
    precond: &Preconditioner<T>,
    phi: &OrthoFrame<T>,
    ortho: OrthoMethod,
) -> Result<OrthoFrame<T>> {
    let r = problem.residual(phi)?;
    let c = correction(Algorithm::ProjectedGradient, phi, &r, precond)?;
    advance(Algorithm::ProjectedGradient, phi, &c, T::one(), ortho, problem)
}

/// One tangent-projected step: `P(Φ - (I - D_Φ) B⁻¹(A_Φ Φ - Φ Λ))`.
pub fn step_alg2<T: Scalar>(
    problem: &Problem<T>,
    precond: &Preconditioner<T>,
    phi: &OrthoFrame<T>,
    ortho: OrthoMethod,
) -> Result<OrthoFrame<T>> {
    let r = problem.residual(phi)?;
    let c = correction(Algorithm::TangentGradient, phi, &r, precond)?;
    advance(Algorithm::TangentGradient, phi, &c, T::one(), ortho, problem)
}

/// The geodesic velocity `K = (I - D_Φ) B⁻¹ (I - D_Φ) A_Φ Φ`.
pub fn geodesic_direction<T: Scalar>(
    problem: &Problem<T>,
    precond: &Preconditioner<T>,
    phi: &OrthoFrame<T>,
) -> Result<BlockVector<T>> {
    let r = problem.projected_gradient(phi)?;
    correction(Algorithm::Geodesic, phi, &r, precond)
}

/// One geodesic step: the point at time `t` on the geodesic leaving `Φ` with
/// velocity `-K`.
pub fn step_alg3<T: Scalar>(
    problem: &Problem<T>,
    precond: &Preconditioner<T>,
    phi: &OrthoFrame<T>,
    t: T,
) -> Result<OrthoFrame<T>> {
    let k = geodesic_direction(problem, precond, phi)?;
    advance(Algorithm::Geodesic, phi, &k, t, OrthoMethod::GramSchmidt, problem)
}

/// Backtracking over `t ∈ {1, s, s², …}` until
/// `𝒥(retract(t)) - 𝒥(Φ) ≤ c₁ t · slope`.
///
/// `decrease_at(t)` returns the energy change of the trial point.
fn backtrack<T: Scalar>(slope: T, params: ArmijoParams<T>, mut decrease_at: impl FnMut(T) -> Result<T>) -> Result<T> {
    if !(slope < T::zero()) {
        return Err(Error::NoDecrease { backtracks: 0 });
    }
    let mut t = T::one();
    for _ in 0..=params.max_backtracks {
        // A failed retraction (dependent columns) counts as a rejected step.
        if let Ok(delta) = decrease_at(t) {
            if delta <= params.c1 * t * slope {
                return Ok(t);
            }
        }
        t *= params.shrink;
    }
    Err(Error::NoDecrease { backtracks: params.max_backtracks })
}

/// Armijo backtracking along `direction` with Gram–Schmidt retraction.
///
/// The slope is `2 ⟨⟨A_Φ Φ, direction⟩⟩`; a non-negative slope is reported as
/// [`Error::NoDecrease`]. Energy changes are evaluated with
/// [`Problem::energy_difference`], so the test stays meaningful close to a
/// minimizer where the raw energies agree to machine precision.
pub fn armijo_search<T: Scalar>(
    problem: &Problem<T>,
    phi: &OrthoFrame<T>,
    direction: &BlockVector<T>,
    c1: T,
    shrink: T,
    max_backtracks: usize,
) -> Result<T> {
    let params = ArmijoParams { c1, shrink, max_backtracks };
    let slope = problem.directional_derivative(phi, direction)?;
    backtrack(slope, params, |t| {
        let trial = orthonormalize(&phi.add_scaled(t, direction), OrthoMethod::GramSchmidt, None)?;
        problem.energy_difference(phi, &trial)
    })
}

/// Runs the configured scheme without oracle measurements.
pub fn solve<T: Scalar>(
    problem: &Problem<T>,
    precond: &Preconditioner<T>,
    start: &OrthoFrame<T>,
    config: &SolverConfig<T>,
    reference: Option<&OrthoFrame<T>>,
) -> Result<SolveOutcome<T>> {
    match reference {
        Some(reference) => solve_monitored(problem, precond, start, config, &mut ReferenceMonitor { reference }),
        None => solve_monitored(problem, precond, start, config, &mut NoMonitor),
    }
}

/// Runs the configured scheme, calling `monitor` on every recorded iterate.
///
/// Rows `0..max_iters` describe the iterates before each step. The loop stops
/// when the dual residual drops to `tol` (converged), when the energy leaves
/// the divergence band or a step fails (diverged), or after `max_iters` steps
/// (not converged; the returned frame is the last stepped iterate).
pub fn solve_monitored<T: Scalar>(
    problem: &Problem<T>,
    precond: &Preconditioner<T>,
    start: &OrthoFrame<T>,
    config: &SolverConfig<T>,
    monitor: &mut dyn Monitor<T>,
) -> Result<SolveOutcome<T>> {
    config.validate()?;
    if config.algorithm == Algorithm::SelfConsistent {
        return scf_solve_monitored(problem, precond, start, config, monitor);
    }
    if precond.dim() != start.n() {
        return Err(Error::DimensionMismatch("preconditioner and frame dimensions differ".into()));
    }
    let mut phi = start.clone();
    let mut record = ConvergenceRecord::default();
    let mut energy0 = None;
    let mut status = SolveStatus::NotConverged;
    for iter in 0..config.max_iters {
        let grad = problem.gradient(&phi)?;
        let residual = project_tangent(&phi, &grad)?;
        let norms = residual_norms_of(&residual, precond);
        let energy = problem.energy(&phi)?;
        let obs = monitor.observe(iter, &phi)?;
        record.push(row(iter, energy, norms.l2, norms.dual, obs));
        let e0 = *energy0.get_or_insert(energy);
        if diverged(energy, e0) {
            status = SolveStatus::Diverged;
            break;
        }
        if norms.dual <= config.tol {
            status = SolveStatus::Converged;
            break;
        }
        let corr = correction(config.algorithm, &phi, &residual, precond)?;
        let nominal = if config.algorithm == Algorithm::Geodesic { config.step_t } else { T::one() };
        let t = match config.linesearch {
            LineSearch::Off => nominal,
            LineSearch::Armijo(params) => {
                let slope = T::lit(2.0) * grad.block_dot(&corr) * (-nominal);
                let search = backtrack(slope, params, |s| {
                    let trial = advance(config.algorithm, &phi, &corr, s * nominal, config.ortho, problem)?;
                    problem.energy_difference(&phi, &trial)
                });
                match search {
                    Ok(s) => s * nominal,
                    Err(Error::NoDecrease { .. }) => break,
                    Err(e) => return Err(e),
                }
            }
        };
        match advance(config.algorithm, &phi, &corr, t, config.ortho, problem) {
            Ok(next) => phi = next,
            Err(Error::RankDeficient { .. }) => {
                status = SolveStatus::Diverged;
                break;
            }
            Err(e) => return Err(e),
        }
        if let Some(last) = record.rows.last_mut() {
            last.step = t;
        }
    }
    Ok(SolveOutcome { frame: phi, record, status, inner_unconverged: 0 })
}

fn row<T: Scalar>(iter: usize, energy: T, res_l2: T, res_dual: T, obs: Observation<T>) -> IterationRow<T> {
    IterationRow {
        iter,
        energy,
        res_l2,
        res_dual,
        err_l2: obs.err_l2,
        err_bhat: obs.err_bhat,
        energy_gap: obs.energy_gap,
        rate: None,
        step: T::zero(),
    }
}

fn diverged<T: Scalar>(energy: T, energy0: T) -> bool {
    !energy.is_finite() || energy > energy0 + T::lit(DIVERGENCE_FACTOR) * energy0.abs()
}

/// Self-consistent-field iteration for state-dependent problems.
pub fn scf_solve<T: Scalar>(
    problem: &Problem<T>,
    precond: &Preconditioner<T>,
    start: &OrthoFrame<T>,
    config: &SolverConfig<T>,
) -> Result<SolveOutcome<T>> {
    scf_solve_monitored(problem, precond, start, config, &mut NoMonitor)
}

/// Outer loop: freeze `A⁽ⁿ⁾ = A_{Φ⁽ⁿ⁾}`, solve the linear problem for `A⁽ⁿ⁾`
/// with the inner configuration, repeat until the residual of the full
/// problem drops to `tol`.
///
/// The inner tolerance is `max(inner.tol, 10⁻² · outer dual residual)`.
pub fn scf_solve_monitored<T: Scalar>(
    problem: &Problem<T>,
    precond: &Preconditioner<T>,
    start: &OrthoFrame<T>,
    config: &SolverConfig<T>,
    monitor: &mut dyn Monitor<T>,
) -> Result<SolveOutcome<T>> {
    config.validate()?;
    let inner_base = config.inner();
    let mut phi = start.clone();
    let mut record = ConvergenceRecord::default();
    let mut energy0 = None;
    let mut status = SolveStatus::NotConverged;
    let mut inner_unconverged = 0;
    for iter in 0..config.max_iters {
        let frozen = problem.gradient_operator(&phi)?;
        let residual = project_tangent(&phi, &phi.apply_operator(&frozen))?;
        let norms = residual_norms_of(&residual, precond);
        let energy = problem.energy(&phi)?;
        let obs = monitor.observe(iter, &phi)?;
        record.push(row(iter, energy, norms.l2, norms.dual, obs));
        let e0 = *energy0.get_or_insert(energy);
        if diverged(energy, e0) {
            status = SolveStatus::Diverged;
            break;
        }
        if norms.dual <= config.tol {
            status = SolveStatus::Converged;
            break;
        }
        let linear = Problem::simplified(frozen, problem.states())?;
        let mut inner_cfg = inner_base.clone();
        inner_cfg.tol = inner_cfg.tol.max(T::lit(1e-2) * norms.dual);
        let inner = solve_monitored(&linear, precond, &phi, &inner_cfg, &mut NoMonitor)?;
        match inner.status {
            SolveStatus::Diverged => {
                status = SolveStatus::Diverged;
                break;
            }
            SolveStatus::NotConverged => inner_unconverged += 1,
            SolveStatus::Converged => {}
        }
        phi = inner.frame;
        if let Some(last) = record.rows.last_mut() {
            last.step = T::one();
        }
    }
    Ok(SolveOutcome { frame: phi, record, status, inner_unconverged })
}

/// Scaling `α` and contraction bound `β` from spectral-equivalence constants
/// `γ ≤ Γ` (of the Hessian) and `ϑ ≤ Θ` (of the preconditioner):
/// `α = ½(Γ/ϑ + γ/Θ)`, `β = (ΓΘ - γϑ)/(ΓΘ + γϑ)`.
pub fn optimal_alpha<T: Scalar>(gamma: T, big_gamma: T, theta: T, big_theta: T) -> Result<(T, T)> {
    if !(gamma > T::zero() && gamma <= big_gamma) {
        return Err(Error::InvalidOrdering(format!("need 0 < gamma <= Gamma, got {gamma}, {big_gamma}")));
    }
    if !(theta > T::zero() && theta <= big_theta) {
        return Err(Error::InvalidOrdering(format!("need 0 < theta <= Theta, got {theta}, {big_theta}")));
    }
    let alpha = T::lit(0.5) * (big_gamma / theta + gamma / big_theta);
    let beta = (big_gamma * big_theta - gamma * theta) / (big_gamma * big_theta + gamma * theta);
    Ok((alpha, beta))
}

/// Lowest `N` Dirichlet modes of the discrete `-½Δ`: `sin(kπ(j+1)/(n+1))`.
pub fn laplacian_modes<T: Scalar>(n: usize, states: usize, h: T) -> Result<OrthoFrame<T>> {
    let block = BlockVector::from_fn(n, states, h, |j, k| {
        let arg = T::PI() * T::from_usize_lossy((k + 1) * (j + 1)) / T::from_usize_lossy(n + 1);
        arg.sin()
    });
    orthonormalize(&block, OrthoMethod::GramSchmidt, None)
}

/// Warm start: Laplacian modes when the operator carries a kinetic stencil,
/// otherwise a seeded random frame.
pub fn default_initial_guess<T: Scalar>(problem: &Problem<T>, seed: u64) -> Result<OrthoFrame<T>> {
    let base = problem.base();
    match base.kinetic_spacing() {
        Some(_) => laplacian_modes(base.dim(), problem.states(), base.weight()),
        None => OrthoFrame::random(base.dim(), problem.states(), base.weight(), seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{gram, subspace_distance};
    use crate::operators::{
        build_diagonal_operator, build_grid, build_preconditioner, build_schrodinger_1d, PrecondVariant,
    };

    fn unit(n: usize, cols: &[usize]) -> OrthoFrame<f64> {
        OrthoFrame::new(BlockVector::from_fn(n, cols.len(), 1.0, |i, j| if i == cols[j] { 1.0 } else { 0.0 })).unwrap()
    }

    fn harmonic_problem(n: usize, states: usize) -> (Problem<f64>, Preconditioner<f64>) {
        let g = build_grid(n, -8.0, 8.0).unwrap();
        let a = build_schrodinger_1d(&g, |x| 0.5 * x * x).unwrap();
        let b = build_preconditioner(PrecondVariant::Shifted, &a, 1.0, 1.0).unwrap();
        (Problem::simplified(a, states).unwrap(), b)
    }

    #[test]
    fn exact_frame_is_a_fixed_point() {
        let a = build_diagonal_operator(&[1.0, 2.0, 4.0, 8.0]).unwrap();
        let p = Problem::simplified(a.clone(), 2).unwrap();
        let b = build_preconditioner(PrecondVariant::Shifted, &a, 1.0, 1.0).unwrap();
        let phi = unit(4, &[0, 1]);
        for next in [
            step_alg1(&p, &b, &phi, OrthoMethod::GramSchmidt).unwrap(),
            step_alg2(&p, &b, &phi, OrthoMethod::Cholesky).unwrap(),
            step_alg3(&p, &b, &phi, 1.0).unwrap(),
        ] {
            assert!(subspace_distance(&phi, &next).unwrap().aligned < 1e-10);
        }
    }

    #[test]
    fn eigenvector_saddle_is_stationary() {
        let a = build_diagonal_operator(&[1.0, 2.0, 4.0]).unwrap();
        let p = Problem::simplified(a.clone(), 1).unwrap();
        let b = build_preconditioner(PrecondVariant::Identity, &a, 0.0, 1.0).unwrap();
        let e2 = unit(3, &[1]);
        let next = step_alg1(&p, &b, &e2, OrthoMethod::GramSchmidt).unwrap();
        assert_eq!(next.column(0), e2.column(0));
    }

    #[test]
    fn identity_preconditioner_makes_alg1_and_alg2_agree() {
        let (p, _) = harmonic_problem(60, 3);
        let id = build_preconditioner(PrecondVariant::Identity, p.base(), 0.0, 1.0).unwrap();
        for seed in 0..5 {
            let phi = OrthoFrame::random(60, 3, p.base().weight(), seed).unwrap();
            let x1 = step_alg1(&p, &id, &phi, OrthoMethod::GramSchmidt).unwrap();
            let x2 = step_alg2(&p, &id, &phi, OrthoMethod::GramSchmidt).unwrap();
            assert!(subspace_distance(&x1, &x2).unwrap().aligned < 1e-12);
        }
    }

    #[test]
    fn tangent_correction_is_tangent() {
        let (p, b) = harmonic_problem(60, 3);
        let phi = OrthoFrame::random(60, 3, p.base().weight(), 3).unwrap();
        let k = geodesic_direction(&p, &b, &phi).unwrap();
        assert!(gram(&phi, &k).unwrap().max_abs() < 1e-12 * k.norm().max(1.0));
    }

    #[test]
    fn geodesic_step_is_second_order_close_to_linear_step() {
        let (p, b) = harmonic_problem(60, 3);
        let phi = OrthoFrame::random(60, 3, p.base().weight(), 4).unwrap();
        let k = geodesic_direction(&p, &b, &phi).unwrap();
        let gap = |t: f64| step_alg3(&p, &b, &phi, t).unwrap().sub(&phi.add_scaled(-t, &k)).norm();
        let (g2, g3) = (gap(1e-2), gap(1e-3));
        // Quadratic shrinkage: a tenfold smaller t gives roughly a hundredfold smaller gap.
        assert!(g3 < g2 / 50.0, "{g2} {g3}");
    }

    #[test]
    fn start_at_solution_stops_immediately() {
        let a = build_diagonal_operator(&[1.0, 2.0, 4.0]).unwrap();
        let p = Problem::simplified(a.clone(), 1).unwrap();
        let b = build_preconditioner(PrecondVariant::Identity, &a, 0.0, 1.0).unwrap();
        let out = solve(&p, &b, &unit(3, &[0]), &SolverConfig::default(), None).unwrap();
        assert_eq!(out.status, SolveStatus::Converged);
        assert_eq!(out.record.len(), 1);
        assert_eq!(out.record.rows[0].iter, 0);
    }

    #[test]
    fn loose_tolerance_returns_early() {
        let (p, b) = harmonic_problem(80, 2);
        let start = default_initial_guess(&p, 0).unwrap();
        let cfg = SolverConfig { tol: 1e3, ..SolverConfig::default() };
        let out = solve(&p, &b, &start, &cfg, None).unwrap();
        assert_eq!(out.status, SolveStatus::Converged);
        assert!(out.record.len() <= 2);
    }

    #[test]
    fn single_iteration_budget_is_not_converged() {
        let (p, b) = harmonic_problem(80, 2);
        let start = default_initial_guess(&p, 0).unwrap();
        let cfg = SolverConfig { max_iters: 1, tol: 1e-14, ..SolverConfig::default() };
        let out = solve(&p, &b, &start, &cfg, None).unwrap();
        assert_eq!(out.status, SolveStatus::NotConverged);
        assert_eq!(out.record.len(), 1);
    }

    #[test]
    fn all_schemes_converge_on_small_harmonic_problem() {
        let (p, b) = harmonic_problem(120, 3);
        let start = default_initial_guess(&p, 0).unwrap();
        let mut finals = Vec::new();
        for alg in [Algorithm::ProjectedGradient, Algorithm::TangentGradient, Algorithm::Geodesic] {
            let out = solve(&p, &b, &start, &SolverConfig::with_algorithm(alg), None).unwrap();
            assert_eq!(out.status, SolveStatus::Converged, "{alg}");
            for row in &out.record.rows {
                assert!(row.energy.is_finite());
            }
            finals.push(out.frame);
        }
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(subspace_distance(&finals[i], &finals[j]).unwrap().aligned < 1e-8);
            }
        }
    }

    #[test]
    fn armijo_keeps_energy_non_increasing() {
        let (p, b) = harmonic_problem(100, 3);
        let start = OrthoFrame::random(100, 3, p.base().weight(), 9).unwrap();
        for alg in [Algorithm::ProjectedGradient, Algorithm::TangentGradient, Algorithm::Geodesic] {
            let cfg = SolverConfig {
                algorithm: alg,
                max_iters: 60,
                linesearch: LineSearch::Armijo(ArmijoParams::default()),
                ..SolverConfig::default()
            };
            let out = solve(&p, &b, &start, &cfg, None).unwrap();
            for w in out.record.rows.windows(2) {
                assert!(w[1].energy <= w[0].energy, "{alg}: {} -> {}", w[0].energy, w[1].energy);
            }
        }
    }

    #[test]
    fn armijo_search_on_two_by_two() {
        let a = build_diagonal_operator(&[1.0, 10.0]).unwrap();
        let p = Problem::simplified(a, 1).unwrap();
        let phi = OrthoFrame::new(BlockVector::from_columns(1.0, &[vec![0.6, 0.8]]).unwrap()).unwrap();
        let direction = p.residual(&phi).unwrap().scale(-1.0);
        let t = armijo_search(&p, &phi, &direction, 1e-4, 0.5, 20).unwrap();
        let trial = orthonormalize(&phi.add_scaled(t, &direction), OrthoMethod::GramSchmidt, None).unwrap();
        let e0 = p.energy(&phi).unwrap();
        let slope = p.directional_derivative(&phi, &direction).unwrap();
        assert!(p.energy(&trial).unwrap() <= e0 + 1e-4 * t * slope);
        assert!(p.energy(&trial).unwrap() < e0);
        let zero = BlockVector::zeros(2, 1, 1.0);
        let exact = unit(2, &[0]);
        assert!(matches!(armijo_search(&p, &exact, &zero, 1e-4, 0.5, 5), Err(Error::NoDecrease { .. })));
    }

    #[test]
    fn scf_without_coupling_matches_direct_solve() {
        let g = build_grid(80, -8.0, 8.0).unwrap();
        let a = build_schrodinger_1d(&g, |x| 0.5 * x * x).unwrap();
        let b = build_preconditioner(PrecondVariant::Shifted, &a, 1.0, 1.0).unwrap();
        let p = Problem::toy_lda(a.clone(), 0.0, 2).unwrap();
        let start = default_initial_guess(&p, 0).unwrap();
        let cfg = SolverConfig { algorithm: Algorithm::SelfConsistent, tol: 1e-10, ..SolverConfig::default() };
        let out = scf_solve(&p, &b, &start, &cfg).unwrap();
        assert_eq!(out.status, SolveStatus::Converged);
        assert_eq!(out.inner_unconverged, 0);
        let direct = solve(&Problem::simplified(a, 2).unwrap(), &b, &start, &SolverConfig::default(), None).unwrap();
        assert!(subspace_distance(&out.frame, &direct.frame).unwrap().aligned < 1e-8);
    }

    #[test]
    fn scf_with_single_inner_step_is_one_projected_gradient_step() {
        let g = build_grid(60, -6.0, 6.0).unwrap();
        let a = build_schrodinger_1d(&g, |x| 0.5 * x * x).unwrap();
        let b = build_preconditioner(PrecondVariant::Shifted, &a, 1.0, 1.0).unwrap();
        let p = Problem::toy_lda(a, 0.5, 2).unwrap();
        let start = OrthoFrame::random(60, 2, g.h(), 1).unwrap();
        let inner = SolverConfig { max_iters: 1, ..SolverConfig::default() };
        let cfg = SolverConfig {
            algorithm: Algorithm::SelfConsistent,
            max_iters: 2,
            tol: 1e-14,
            scf_inner: Some(Box::new(inner)),
            ..SolverConfig::default()
        };
        let out = scf_solve(&p, &b, &start, &cfg).unwrap();
        let mut expected = start.clone();
        for _ in 0..2 {
            let frozen = Problem::simplified(p.gradient_operator(&expected).unwrap(), 2).unwrap();
            expected = step_alg1(&frozen, &b, &expected, OrthoMethod::GramSchmidt).unwrap();
        }
        assert!(subspace_distance(&out.frame, &expected).unwrap().aligned < 1e-12);
        assert_eq!(out.inner_unconverged, 2);
    }

    #[test]
    fn optimal_alpha_constants() {
        assert_eq!(optimal_alpha(1.0, 2.0, 1.0, 2.0).unwrap(), (1.25, 0.6));
        assert_eq!(optimal_alpha(3.0, 3.0, 3.0, 3.0).unwrap(), (1.0, 0.0));
        assert!(optimal_alpha(2.0, 1.0, 1.0, 2.0).is_err());
        assert!(optimal_alpha(0.0, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::<f64>::default();
        assert!(cfg.validate().is_ok());
        cfg.tol = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig::<f64> {
            linesearch: LineSearch::Armijo(ArmijoParams { c1: 1.5, shrink: 0.5, max_backtracks: 3 }),
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig::<f64> { max_iters: 0, ..SolverConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
