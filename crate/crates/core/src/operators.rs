//! Discretized symmetric operators and preconditioners on a uniform 1D grid.
//!
//! All `L₂` pairings use the weighted product `⟨u, v⟩ = h Σⱼ uⱼ vⱼ`, where the
//! weight `h` is carried by each operator and block vector.

use std::fmt;
use std::str::FromStr;

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::random;
use crate::scalar::{dot, Scalar};

/// Largest dimension for which dense realizations are materialized.
pub const DENSE_BUDGET: usize = 2000;

/// Uniform grid of `n` interior points on `(a, b)` with Dirichlet boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D<T> {
    n: usize,
    a: T,
    b: T,
    h: T,
}

impl<T: Scalar> Grid1D<T> {
    pub fn new(n: usize, a: T, b: T) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("grid needs at least 2 interior points, got {n}")));
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidArgument(format!("grid endpoints must satisfy a < b, got a={a}, b={b}")));
        }
        let h = (b - a) / T::from_usize_lossy(n + 1);
        Ok(Self { n, a, b, h })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn b(&self) -> T {
        self.b
    }

    pub fn h(&self) -> T {
        self.h
    }

    /// Interior point `xⱼ = a + (j+1) h`.
    pub fn point(&self, j: usize) -> T {
        self.a + T::from_usize_lossy(j + 1) * self.h
    }

    pub fn points(&self) -> Vec<T> {
        (0..self.n).map(|j| self.point(j)).collect()
    }
}

/// Convenience wrapper around [`Grid1D::new`].
pub fn build_grid<T: Scalar>(n: usize, a: T, b: T) -> Result<Grid1D<T>> {
    Grid1D::new(n, a, b)
}

#[derive(Debug, Clone, PartialEq)]
enum Repr<T> {
    Tridiagonal { diag: Vec<T>, off: Vec<T> },
    Dense(Mat<T>),
}

/// An applyable self-adjoint map on grid functions.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricOperator<T> {
    repr: Repr<T>,
    weight: T,
    /// Grid spacing of the `-½Δ` stencil contained in the operator, if any.
    kinetic_spacing: Option<T>,
}

impl<T: Scalar> SymmetricOperator<T> {
    /// Tridiagonal operator with main diagonal `diag` and off-diagonal `off`.
    pub fn from_tridiagonal(diag: Vec<T>, off: Vec<T>, weight: T) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::Empty("operator diagonal"));
        }
        if off.len() + 1 != diag.len() {
            return Err(Error::DimensionMismatch(format!(
                "off-diagonal of length {} for dimension {}",
                off.len(),
                diag.len()
            )));
        }
        Ok(Self { repr: Repr::Tridiagonal { diag, off }, weight, kinetic_spacing: None })
    }

    /// Wraps a dense matrix. Symmetry is not enforced here; use
    /// [`check_symmetry`] to measure it.
    pub fn from_dense(matrix: Mat<T>, weight: T) -> Result<Self> {
        if !matrix.is_square() || matrix.rows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "operator matrix must be square and non-empty, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        Ok(Self { repr: Repr::Dense(matrix), weight, kinetic_spacing: None })
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            Repr::Tridiagonal { diag, .. } => diag.len(),
            Repr::Dense(m) => m.rows(),
        }
    }

    /// Weight `h` of the inner product this operator is symmetric in.
    pub fn weight(&self) -> T {
        self.weight
    }

    pub fn kinetic_spacing(&self) -> Option<T> {
        self.kinetic_spacing
    }

    pub fn tridiagonal(&self) -> Option<(&[T], &[T])> {
        match &self.repr {
            Repr::Tridiagonal { diag, off } => Some((diag, off)),
            Repr::Dense(_) => None,
        }
    }

    pub fn apply_into(&self, u: &[T], out: &mut [T]) {
        assert_eq!(u.len(), self.dim(), "operator applied to vector of wrong length");
        match &self.repr {
            Repr::Tridiagonal { diag, off } => {
                let n = diag.len();
                for j in 0..n {
                    let mut s = diag[j] * u[j];
                    if j > 0 {
                        s += off[j - 1] * u[j - 1];
                    }
                    if j + 1 < n {
                        s += off[j] * u[j + 1];
                    }
                    out[j] = s;
                }
            }
            Repr::Dense(m) => out.copy_from_slice(&m.mat_vec(u)),
        }
    }

    pub fn apply(&self, u: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.apply_into(u, &mut out);
        out
    }

    /// Dense `n×n` realization, available up to [`DENSE_BUDGET`].
    pub fn dense(&self) -> Result<Mat<T>> {
        let n = self.dim();
        if n > DENSE_BUDGET {
            return Err(Error::BudgetExceeded { n, limit: DENSE_BUDGET });
        }
        Ok(match &self.repr {
            Repr::Tridiagonal { diag, off } => Mat::from_fn(n, n, |i, j| {
                if i == j {
                    diag[i]
                } else if i + 1 == j {
                    off[i]
                } else if j + 1 == i {
                    off[j]
                } else {
                    T::zero()
                }
            }),
            Repr::Dense(m) => m.clone(),
        })
    }

    /// `self + diag(values)`.
    pub fn with_added_diagonal(&self, values: &[T]) -> Self {
        assert_eq!(values.len(), self.dim());
        let repr = match &self.repr {
            Repr::Tridiagonal { diag, off } => {
                Repr::Tridiagonal { diag: diag.iter().zip(values).map(|(&d, &v)| d + v).collect(), off: off.clone() }
            }
            Repr::Dense(m) => {
                let mut m = m.clone();
                for (i, &v) in values.iter().enumerate() {
                    m[(i, i)] += v;
                }
                Repr::Dense(m)
            }
        };
        Self { repr, weight: self.weight, kinetic_spacing: self.kinetic_spacing }
    }

    pub fn shifted(&self, shift: T) -> Self {
        self.with_added_diagonal(&vec![shift; self.dim()])
    }

    /// Upper bound on the spectral radius (maximum absolute row sum).
    pub fn norm_estimate(&self) -> T {
        match &self.repr {
            Repr::Tridiagonal { diag, off } => (0..diag.len())
                .map(|j| {
                    let mut s = diag[j].abs();
                    if j > 0 {
                        s += off[j - 1].abs();
                    }
                    if j < off.len() {
                        s += off[j].abs();
                    }
                    s
                })
                .fold(T::zero(), T::max),
            Repr::Dense(m) => {
                (0..m.rows()).map(|i| (0..m.cols()).map(|j| m[(i, j)].abs()).sum::<T>()).fold(T::zero(), T::max)
            }
        }
    }

    /// The `-½Δ` stencil contained in this operator, without the potential.
    fn kinetic_part(&self) -> Option<Self> {
        let h = self.kinetic_spacing?;
        let n = self.dim();
        let inv = T::one() / (h * h);
        let mut op = Self::from_tridiagonal(vec![inv; n], vec![-T::lit(0.5) * inv; n - 1], self.weight).ok()?;
        op.kinetic_spacing = Some(h);
        Some(op)
    }
}

/// `A = -½ tridiag(1, -2, 1)/h² + diag(V(xⱼ))` with Dirichlet boundaries.
pub fn build_schrodinger_1d<T: Scalar>(grid: &Grid1D<T>, potential: impl Fn(T) -> T) -> Result<SymmetricOperator<T>> {
    let h = grid.h();
    let inv = T::one() / (h * h);
    let mut diag = Vec::with_capacity(grid.n());
    for x in grid.points() {
        let v = potential(x);
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!("potential is not finite at x = {x}")));
        }
        diag.push(inv + v);
    }
    let off = vec![-T::lit(0.5) * inv; grid.n() - 1];
    let mut op = SymmetricOperator::from_tridiagonal(diag, off, h)?;
    op.kinetic_spacing = Some(h);
    Ok(op)
}

/// `A = diag(values)` with unit inner-product weight.
pub fn build_diagonal_operator<T: Scalar>(values: &[T]) -> Result<SymmetricOperator<T>> {
    if values.is_empty() {
        return Err(Error::Empty("diagonal operator values"));
    }
    SymmetricOperator::from_tridiagonal(values.to_vec(), vec![T::zero(); values.len() - 1], T::one())
}

/// Max over `trials` of `|⟨Au, v⟩ - ⟨u, Av⟩|` for seeded random unit `u`, `v`.
pub fn check_symmetry<T: Scalar>(op: &SymmetricOperator<T>, trials: usize, seed: u64) -> T {
    let n = op.dim();
    let h = op.weight();
    let mut worst = T::zero();
    for trial in 0..trials.max(1) {
        let mut rng = random::trial_rng(seed, trial as u64);
        let mut u: Vec<T> = random::gaussian_vec(&mut rng, n);
        let mut v: Vec<T> = random::gaussian_vec(&mut rng, n);
        for w in [&mut u, &mut v] {
            let norm = (h * dot(w, w)).sqrt();
            w.iter_mut().for_each(|x| *x /= norm);
        }
        let lhs = h * dot(&op.apply(&u), &v);
        let rhs = h * dot(&u, &op.apply(&v));
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondVariant {
    /// `B = α I`.
    Identity,
    /// `B = α (A + C I)` with `A` the full tridiagonal operator.
    Shifted,
    /// `B = α (-½Δ + C I)` using only the kinetic stencil of `A`.
    ShiftedLaplacian,
    /// `B = α A`.
    InverseA,
}

impl FromStr for PrecondVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "shifted" => Ok(Self::Shifted),
            "laplacian" => Ok(Self::ShiftedLaplacian),
            "inverse_a" => Ok(Self::InverseA),
            other => Err(Error::InvalidArgument(format!("unknown preconditioner variant '{other}'"))),
        }
    }
}

impl fmt::Display for PrecondVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Identity => "identity",
            Self::Shifted => "shifted",
            Self::ShiftedLaplacian => "laplacian",
            Self::InverseA => "inverse_a",
        })
    }
}

/// `LDLᵀ` factorization of a symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
struct TridiagonalLdl<T> {
    pivots: Vec<T>,
    lower: Vec<T>,
}

impl<T: Scalar> TridiagonalLdl<T> {
    fn factor(diag: &[T], off: &[T]) -> Result<Self> {
        let n = diag.len();
        let mut pivots = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n.saturating_sub(1));
        for j in 0..n {
            let d = if j == 0 {
                diag[0]
            } else {
                let l = off[j - 1] / pivots[j - 1];
                lower.push(l);
                diag[j] - l * off[j - 1]
            };
            if !(d > T::zero()) {
                return Err(Error::NotPositiveDefinite { index: j, pivot: d.to_f64_lossy() });
            }
            pivots.push(d);
        }
        Ok(Self { pivots, lower })
    }

    fn solve(&self, r: &[T]) -> Vec<T> {
        let n = self.pivots.len();
        let mut x = r.to_vec();
        for j in 1..n {
            let prev = x[j - 1];
            x[j] -= self.lower[j - 1] * prev;
        }
        for (xj, &d) in x.iter_mut().zip(&self.pivots) {
            *xj /= d;
        }
        for j in (0..n.saturating_sub(1)).rev() {
            let next = x[j + 1];
            x[j] -= self.lower[j] * next;
        }
        x
    }
}

#[derive(Debug, Clone)]
enum Factorization<T> {
    None,
    Tridiagonal(TridiagonalLdl<T>),
    Dense(Mat<T>),
}

/// Applyable inverse of a symmetric positive definite `B = α · base`.
#[derive(Debug, Clone)]
pub struct Preconditioner<T> {
    variant: PrecondVariant,
    alpha: T,
    shift: T,
    dim: usize,
    base: Option<SymmetricOperator<T>>,
    factor: Factorization<T>,
}

impl<T: Scalar> Preconditioner<T> {
    pub fn identity(dim: usize, alpha: T) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            variant: PrecondVariant::Identity,
            alpha,
            shift: T::zero(),
            dim,
            base: None,
            factor: Factorization::None,
        })
    }

    pub fn variant(&self) -> PrecondVariant {
        self.variant
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The unscaled operator `B / α`, when it is not the identity.
    pub fn base(&self) -> Option<&SymmetricOperator<T>> {
        self.base.as_ref()
    }

    /// Same preconditioner with a different scaling `α`.
    pub fn with_alpha(&self, alpha: T) -> Result<Self> {
        check_alpha(alpha)?;
        let mut out = self.clone();
        out.alpha = alpha;
        Ok(out)
    }

    /// `B⁻¹ r`.
    pub fn apply_inverse(&self, r: &[T]) -> Vec<T> {
        assert_eq!(r.len(), self.dim, "preconditioner applied to vector of wrong length");
        let inv_alpha = T::one() / self.alpha;
        let mut x = match &self.factor {
            Factorization::None => r.to_vec(),
            Factorization::Tridiagonal(ldl) => ldl.solve(r),
            Factorization::Dense(l) => l.solve_lower_transpose(&l.solve_lower(r)),
        };
        x.iter_mut().for_each(|v| *v *= inv_alpha);
        x
    }

    /// `B x`.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = match &self.base {
            Some(op) => op.apply(x),
            None => x.to_vec(),
        };
        y.iter_mut().for_each(|v| *v *= self.alpha);
        y
    }
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if alpha > T::zero() && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("preconditioner scale alpha must be positive, got {alpha}")))
    }
}

/// Builds `B⁻¹` for the chosen variant, factoring the base operator once.
pub fn build_preconditioner<T: Scalar>(
    variant: PrecondVariant,
    op: &SymmetricOperator<T>,
    shift: T,
    alpha: T,
) -> Result<Preconditioner<T>> {
    check_alpha(alpha)?;
    let n = op.dim();
    let base = match variant {
        PrecondVariant::Identity => return Preconditioner::identity(n, alpha),
        PrecondVariant::Shifted => op.shifted(shift),
        PrecondVariant::ShiftedLaplacian => match op.kinetic_part() {
            Some(kinetic) => kinetic.shifted(shift),
            None => SymmetricOperator::from_tridiagonal(vec![shift; n], vec![T::zero(); n - 1], op.weight())?,
        },
        PrecondVariant::InverseA => op.clone(),
    };
    let factor = match base.tridiagonal() {
        Some((diag, off)) => Factorization::Tridiagonal(TridiagonalLdl::factor(diag, off)?),
        None => Factorization::Dense(base.dense()?.cholesky(T::epsilon())?),
    };
    let shift = if variant == PrecondVariant::InverseA { T::zero() } else { shift };
    Ok(Preconditioner { variant, alpha, shift, dim: n, base: Some(base), factor })
}
