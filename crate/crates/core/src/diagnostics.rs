//! Brute-force oracles and empirical checks of the convergence theory.
//!
//! Everything here is meant for problem sizes where a dense realization of the
//! operator is affordable (`n ≤ DENSE_BUDGET`). The checks consume the
//! [`ConvergenceRecord`] of a solver run and turn it into [`TheoryVerdict`]s.

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::manifold::{orthonormalize, project_tangent, BlockNorm, BlockVector, OrthoFrame, OrthoMethod};
use crate::operators::{Preconditioner, SymmetricOperator, DENSE_BUDGET};
use crate::problems::{Problem, ProblemKind};
use crate::random::{gaussian_vec, rng};
use crate::scalar::Scalar;
use crate::solvers::{ConvergenceRecord, Monitor, Observation};

/// Errors at or below this value are treated as rounding noise.
pub const ERROR_FLOOR: f64 = 1e-12;
/// Gap below which the gap condition is considered violated.
pub const GAP_THRESHOLD: f64 = 1e-8;
/// Difference step for second derivatives.
pub const HESSIAN_STEP: f64 = 1e-5;
/// Error window of [`residual_equivalence`].
pub const EQUIVALENCE_WINDOW: (f64, f64) = (1e-10, 1e-1);
/// Error window of [`energy_quadraticity`].
pub const QUADRATIC_WINDOW: (f64, f64) = (1e-8, 1e-1);

/// The `N` lowest eigenpairs of a dense-realized operator.
#[derive(Debug, Clone)]
pub struct OracleReference<T> {
    frame: OrthoFrame<T>,
    eigenvalues: Vec<T>,
    next: Option<T>,
}

impl<T: Scalar> OracleReference<T> {
    pub fn frame(&self) -> &OrthoFrame<T> {
        &self.frame
    }

    /// `λ₁ ≤ … ≤ λ_N`.
    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    /// `λ_{N+1}`, when the operator has more than `N` eigenvalues.
    pub fn next_eigenvalue(&self) -> Option<T> {
        self.next
    }

    pub fn states(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `λ_{N+1} - λ_N`.
    pub fn gap(&self) -> Option<T> {
        self.next.map(|next| next - self.eigenvalues[self.eigenvalues.len() - 1])
    }

    /// `Σ λᵢ`, the minimal energy of the linear problem.
    pub fn energy(&self) -> T {
        self.eigenvalues.iter().copied().sum()
    }

    /// `max_i ‖A ψᵢ - λᵢ ψᵢ‖`.
    pub fn residual(&self, op: &SymmetricOperator<T>) -> T {
        let a_psi = self.frame.apply_operator(op);
        (0..self.states()).fold(T::zero(), |m, i| {
            let col = a_psi.column(i);
            let psi = self.frame.column(i);
            let sq: T = col.iter().zip(psi).map(|(&a, &p)| (a - self.eigenvalues[i] * p).powi(2)).sum();
            m.max((sq * self.frame.h()).sqrt())
        })
    }
}

/// Full Jacobi eigendecomposition of `op`, keeping the `states` lowest pairs.
pub fn dense_eigensolve<T: Scalar>(op: &SymmetricOperator<T>, states: usize) -> Result<OracleReference<T>> {
    let n = op.dim();
    if states == 0 || states > n {
        return Err(Error::InvalidArgument(format!("need 1 <= N <= {n}, got {states}")));
    }
    let eig = op.dense()?.sym_eigen()?;
    let h = op.weight();
    let scale = T::one() / h.sqrt();
    let block = BlockVector::from_fn(n, states, h, |i, j| eig.vectors[(i, j)] * scale);
    // Jacobi vectors are orthonormal to rounding; one cleanup pass pins the Stiefel constraint.
    let frame = orthonormalize(&block, OrthoMethod::GramSchmidt, None)?;
    Ok(OracleReference { frame, eigenvalues: eig.values[..states].to_vec(), next: eig.values.get(states).copied() })
}

/// Lowest `count` eigenvalues of a tridiagonal operator by Sturm-sequence bisection.
///
/// Independent of the Jacobi solver; used to cross-check it.
pub fn sturm_eigenvalues<T: Scalar>(op: &SymmetricOperator<T>, count: usize) -> Result<Vec<T>> {
    let (diag, off) = op
        .tridiagonal()
        .ok_or_else(|| Error::InvalidArgument("Sturm bisection needs a tridiagonal operator".into()))?;
    let n = diag.len();
    if count > n {
        return Err(Error::InvalidArgument(format!("asked for {count} eigenvalues of a {n}-dimensional operator")));
    }
    // Gershgorin bounds.
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { T::zero() } + if i + 1 < n { off[i].abs() } else { T::zero() };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    let pad = T::lit(1e-8) * (hi - lo).abs().max(T::one());
    lo -= pad;
    hi += pad;
    // Number of eigenvalues strictly below x.
    let below = |x: T| {
        let mut count = 0usize;
        let mut q = T::one();
        for i in 0..n {
            let coupling = if i > 0 { off[i - 1] * off[i - 1] / q } else { T::zero() };
            q = diag[i] - x - coupling;
            if q == T::zero() {
                q = T::epsilon() * (diag[i].abs() + T::one());
            }
            if q < T::zero() {
                count += 1;
            }
        }
        count
    };
    let mut values = Vec::with_capacity(count);
    for k in 0..count {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = T::lit(0.5) * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if below(mid) > k {
                b = mid;
            } else {
                a = mid;
            }
        }
        values.push(T::lit(0.5) * (a + b));
    }
    Ok(values)
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn dense_expm<T: Scalar>(m: &Mat<T>) -> Result<Mat<T>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch("matrix exponential needs a square matrix".into()));
    }
    let norm = m.frobenius();
    if !norm.is_finite() {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm > T::lit(0.25) {
        scaled_norm *= T::lit(0.5);
        squarings += 1;
    }
    let a = m.scale(T::lit(0.5).powi(squarings as i32));
    let n = m.rows();
    let mut result = Mat::identity(n);
    let mut term = Mat::identity(n);
    for k in 1..=24 {
        term = term.matmul(&a).scale(T::one() / T::from_usize_lossy(k));
        result = result.add(&term);
        if term.max_abs() <= T::epsilon() * result.max_abs() {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    Ok(result)
}

/// `(I - D_Ψ) B⁻¹ (I - D_Ψ) r + D_Ψ r`.
pub fn bhat_apply_inverse<T: Scalar>(
    reference: &OracleReference<T>,
    precond: &Preconditioner<T>,
    r: &[T],
) -> Result<Vec<T>> {
    let psi = reference.frame();
    if r.len() != psi.n() || precond.dim() != psi.n() {
        return Err(Error::DimensionMismatch(format!(
            "grid function of length {}, reference on {} points, preconditioner of size {}",
            r.len(),
            psi.n(),
            precond.dim()
        )));
    }
    let inner = psi.project_complement(&precond.apply_inverse(&psi.project_complement(r)));
    let along = psi.project(r);
    Ok(inner.iter().zip(&along).map(|(&a, &b)| a + b).collect())
}

/// Block norm `√⟨⟨B̂u, u⟩⟩`, evaluated through a dense Cholesky factor of `B̂⁻¹`.
#[derive(Debug, Clone)]
pub struct BhatNorm<T> {
    factor: Mat<T>,
    h: T,
}

impl<T: Scalar> BhatNorm<T> {
    pub fn new(reference: &OracleReference<T>, precond: &Preconditioner<T>) -> Result<Self> {
        let n = reference.frame().n();
        if n > DENSE_BUDGET {
            return Err(Error::BudgetExceeded { n, limit: DENSE_BUDGET });
        }
        let mut inverse = Mat::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            inverse.column_mut(j).copy_from_slice(&bhat_apply_inverse(reference, precond, &e)?);
            e[j] = T::zero();
        }
        let factor = inverse.symmetrized().cholesky(T::tol(1e-14))?;
        Ok(Self { factor, h: reference.frame().h() })
    }

    /// `⟨B̂u, u⟩` for a single grid function.
    pub fn quadratic_form(&self, u: &[T]) -> T {
        let y = self.factor.solve_lower(u);
        self.h * y.iter().map(|&v| v * v).sum::<T>()
    }
}

impl<T: Scalar> BlockNorm<T> for BhatNorm<T> {
    fn norm(&self, w: &BlockVector<T>) -> Result<T> {
        if w.n() != self.factor.rows() {
            return Err(Error::DimensionMismatch("block and B̂ norm live on different grids".into()));
        }
        Ok((0..w.cols()).map(|j| self.quadratic_form(w.column(j))).sum::<T>().sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorNorm {
    #[default]
    L2,
    Bhat,
}

/// `‖(I - D_Ψ) Φ‖` in the chosen norm.
pub fn subspace_error<T: Scalar>(
    reference: &OracleReference<T>,
    phi: &OrthoFrame<T>,
    norm: ErrorNorm,
    precond: &Preconditioner<T>,
) -> Result<T> {
    let e = project_tangent(reference.frame(), phi)?;
    match norm {
        ErrorNorm::L2 => Ok(e.norm()),
        ErrorNorm::Bhat => BhatNorm::new(reference, precond)?.norm(&e),
    }
}

/// `𝒥(Φ) - 𝒥(Ψ)`, evaluated without cancellation
/// (see [`Problem::energy_difference`]).
pub fn energy_excess<T: Scalar>(
    problem: &Problem<T>,
    reference: &OracleReference<T>,
    phi: &OrthoFrame<T>,
) -> Result<T> {
    problem.energy_difference(reference.frame(), phi)
}

/// Monitor recording errors and energy excess against a dense oracle.
pub struct OracleMonitor<'a, T> {
    reference: &'a OracleReference<T>,
    bhat: Option<BhatNorm<T>>,
    problem: Option<&'a Problem<T>>,
}

impl<'a, T: Scalar> OracleMonitor<'a, T> {
    pub fn new(reference: &'a OracleReference<T>) -> Self {
        Self { reference, bhat: None, problem: None }
    }

    pub fn with_bhat(mut self, precond: &Preconditioner<T>) -> Result<Self> {
        self.bhat = Some(BhatNorm::new(self.reference, precond)?);
        Ok(self)
    }

    pub fn with_energy(mut self, problem: &'a Problem<T>) -> Self {
        self.problem = Some(problem);
        self
    }
}

impl<T: Scalar> Monitor<T> for OracleMonitor<'_, T> {
    fn observe(&mut self, _iter: usize, frame: &OrthoFrame<T>) -> Result<Observation<T>> {
        let e = project_tangent(self.reference.frame(), frame)?;
        let err_bhat = match &self.bhat {
            Some(norm) => Some(norm.norm(&e)?),
            None => None,
        };
        let energy_gap = match self.problem {
            Some(p) => Some(energy_excess(p, self.reference, frame)?),
            None => None,
        };
        Ok(Observation { err_l2: Some(e.norm()), err_bhat, energy_gap })
    }
}

/// Mean and sample standard deviation of `e_{n+1}/e_n` over the last
/// `trailing` ratios whose denominator lies above `10 · ERROR_FLOOR`.
pub fn contraction_estimate<T: Scalar>(record: &ConvergenceRecord<T>, trailing: usize) -> Result<(T, T)> {
    let errors: Vec<T> = record.rows.iter().map_while(|r| r.err_l2).collect();
    contraction_estimate_of(&errors, trailing)
}

/// [`contraction_estimate`] on a plain error sequence.
pub fn contraction_estimate_of<T: Scalar>(errors: &[T], trailing: usize) -> Result<(T, T)> {
    let floor = T::lit(10.0 * ERROR_FLOOR);
    let ratios: Vec<T> = errors.windows(2).filter(|w| w[0] > floor).map(|w| w[1] / w[0]).collect();
    if trailing == 0 || ratios.len() < trailing {
        return Err(Error::InsufficientData { needed: trailing.max(1), found: ratios.len() });
    }
    let window = &ratios[ratios.len() - trailing..];
    Ok(mean_and_deviation(window))
}

fn mean_and_deviation<T: Scalar>(values: &[T]) -> (T, T) {
    let k = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / k;
    if values.len() < 2 {
        return (mean, T::zero());
    }
    let var = values.iter().map(|&v| (v - mean).powi(2)).sum::<T>() / (k - T::one());
    (mean, var.sqrt())
}

/// Extremal ratios `res_dual / e_n` over rows with `e_n` in the equivalence window.
pub fn residual_equivalence<T: Scalar>(record: &ConvergenceRecord<T>) -> Result<(T, T)> {
    let (lo, hi) = (T::lit(EQUIVALENCE_WINDOW.0), T::lit(EQUIVALENCE_WINDOW.1));
    let ratios: Vec<T> =
        record.rows.iter().filter_map(|r| r.err_l2.filter(|&e| e >= lo && e <= hi).map(|e| r.res_dual / e)).collect();
    extremes(&ratios)
}

/// Extremal `q_n = (𝒥(Φ⁽ⁿ⁾) - 𝒥(Ψ)) / e_n²` over rows with `e_n` in the quadratic window.
///
/// Uses the recorded energy excess when present (cancellation-free), and the
/// raw energy difference otherwise.
pub fn energy_quadraticity<T: Scalar>(
    record: &ConvergenceRecord<T>,
    reference: &OracleReference<T>,
    problem: &Problem<T>,
) -> Result<(T, T)> {
    let (lo, hi) = (T::lit(QUADRATIC_WINDOW.0), T::lit(QUADRATIC_WINDOW.1));
    let minimum = match problem.kind() {
        ProblemKind::Simplified => reference.energy(),
        ProblemKind::ToyLda => problem.energy(reference.frame())?,
    };
    let ratios: Vec<T> = record
        .rows
        .iter()
        .filter_map(|r| {
            let e = r.err_l2.filter(|&e| e >= lo && e <= hi)?;
            Some(r.energy_gap.unwrap_or(r.energy - minimum) / (e * e))
        })
        .collect();
    extremes(&ratios)
}

/// `q` for a single frame.
pub fn quadratic_ratio<T: Scalar>(
    problem: &Problem<T>,
    reference: &OracleReference<T>,
    phi: &OrthoFrame<T>,
) -> Result<T> {
    let e = project_tangent(reference.frame(), phi)?.norm();
    if !(e > T::zero()) {
        return Err(Error::InvalidArgument("frame spans the reference subspace; ratio undefined".into()));
    }
    Ok(energy_excess(problem, reference, phi)? / (e * e))
}

fn extremes<T: Scalar>(values: &[T]) -> Result<(T, T)> {
    if values.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    Ok(values.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v))))
}

/// `λ_{N+1} - λ_N` and whether it exceeds [`GAP_THRESHOLD`].
pub fn gap_check<T: Scalar>(reference: &OracleReference<T>) -> Result<(T, bool)> {
    let gap =
        reference.gap().ok_or(Error::InsufficientData { needed: reference.states() + 1, found: reference.states() })?;
    Ok((gap, gap > T::lit(GAP_THRESHOLD)))
}

/// Smallest Rayleigh quotient of the projected Hessian
/// `δ ↦ (I - D_Ψ)(𝒥″(Ψ)δ - δΛ)` on the tangent space at `psi`.
///
/// `𝒥″` is applied by central differences of the gradient. The minimum is
/// found by a Lanczos iteration of (at most) `trials` steps with full
/// reorthogonalization, started from a seeded random tangent vector; when
/// `trials` reaches the tangent-space dimension the result is exact up to the
/// differencing error.
pub fn ellipticity_probe<T: Scalar>(problem: &Problem<T>, psi: &OrthoFrame<T>, trials: usize, seed: u64) -> Result<T> {
    let n = psi.n();
    if n > DENSE_BUDGET {
        return Err(Error::BudgetExceeded { n, limit: DENSE_BUDGET });
    }
    let states = psi.cols();
    let dim = (n - states) * states;
    if dim == 0 || trials == 0 {
        return Err(Error::InsufficientData { needed: 1, found: dim.min(trials) });
    }
    let lambda = problem.lagrange_matrix(psi)?;
    let eps = T::lit(HESSIAN_STEP);
    let hessian = |d: &BlockVector<T>| -> Result<BlockVector<T>> {
        let plus = problem.gradient(&psi.add_scaled(eps, d))?;
        let minus = problem.gradient(&psi.add_scaled(-eps, d))?;
        let second = plus.sub(&minus).scale(T::one() / (eps + eps));
        project_tangent(psi, &second.sub(&d.mul_mat(&lambda)))
    };

    let mut g = rng(seed);
    let start = BlockVector::from_columns(psi.h(), &(0..states).map(|_| gaussian_vec(&mut g, n)).collect::<Vec<_>>())?;
    let mut q = project_tangent(psi, &start)?;
    q = q.scale(T::one() / q.norm());
    let steps = trials.min(dim);
    let mut basis: Vec<BlockVector<T>> = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut betas: Vec<T> = Vec::with_capacity(steps);
    let mut scale = T::zero();
    for k in 0..steps {
        let mut w = hessian(&q)?;
        let a = w.block_dot(&q);
        alphas.push(a);
        basis.push(q);
        // Full reorthogonalization (twice is enough).
        for _ in 0..2 {
            for v in &basis {
                w = w.add_scaled(-w.block_dot(v), v);
            }
        }
        w = project_tangent(psi, &w)?;
        let b = w.norm();
        scale = scale.max(a.abs()).max(b);
        if k + 1 == steps || b <= T::tol(1e-10) * scale {
            break;
        }
        betas.push(b);
        q = w.scale(T::one() / b);
    }
    let m = alphas.len();
    let tri = Mat::from_fn(m, m, |i, j| {
        if i == j {
            alphas[i]
        } else if i + 1 == j {
            betas[i]
        } else if j + 1 == i {
            betas[j]
        } else {
            T::zero()
        }
    });
    Ok(tri.sym_eigen()?.values[0])
}

/// Start frame at a controlled distance from the oracle subspace:
/// `orth(Ψ + ε T/‖T‖)` with `T = (I - D_Ψ) B⁻² G` and `G` seeded Gaussian.
///
/// Smoothing the noise through the preconditioner keeps the start inside the
/// region where the preconditioned iteration contracts.
pub fn perturbed_start<T: Scalar>(
    reference: &OracleReference<T>,
    precond: &Preconditioner<T>,
    scale: T,
    seed: u64,
) -> Result<OrthoFrame<T>> {
    let psi = reference.frame();
    let mut g = rng(seed);
    let noise = BlockVector::from_columns(
        psi.h(),
        &(0..psi.cols()).map(|_| gaussian_vec(&mut g, psi.n())).collect::<Vec<_>>(),
    )?;
    let smooth = noise.apply_preconditioner(precond).apply_preconditioner(precond);
    let t = project_tangent(psi, &smooth)?;
    let norm = t.norm();
    if !(norm > T::zero()) {
        return Err(Error::InvalidArgument("perturbation vanished".into()));
    }
    orthonormalize(&psi.add_scaled(scale / norm, &t), OrthoMethod::GramSchmidt, None)
}

/// Outcome of one empirical check.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryVerdict {
    pub name: String,
    pub seed: u64,
    /// Named measured quantities.
    pub measured: Vec<(String, f64)>,
    /// Named tolerances the measurements were judged against.
    pub tolerances: Vec<(String, f64)>,
    pub passed: bool,
    /// Why the check could not be evaluated, if it could not.
    pub note: Option<String>,
}

impl TheoryVerdict {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        Self { name: name.into(), seed, measured: Vec::new(), tolerances: Vec::new(), passed: false, note: None }
    }

    pub fn measure(mut self, key: impl Into<String>, value: f64) -> Self {
        self.measured.push((key.into(), value));
        self
    }

    pub fn tolerance(mut self, key: impl Into<String>, value: f64) -> Self {
        self.tolerances.push((key.into(), value));
        self
    }

    pub fn pass(mut self, passed: bool) -> Self {
        self.passed = passed;
        self
    }

    pub fn failed_with(mut self, note: impl Into<String>) -> Self {
        self.passed = false;
        self.note = Some(note.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.measured.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }
}
