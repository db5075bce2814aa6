//! Energy functionals on frames and their first-order quantities.
//!
//! Two problems are supported. The simplified problem minimizes
//! `𝒥(Φ) = Σᵢ ⟨φᵢ, A φᵢ⟩` and is solved by the `N` lowest eigenvectors of `A`.
//! The toy local-density problem adds `(κ/2) ∫ n²` with density
//! `n = Σᵢ φᵢ²`, giving the state-dependent operator `A_Φ = A + κ diag(n)`.
//!
//! The gradient convention is `𝒥′(Φ) := A_Φ Φ`, so that the directional
//! derivative reads `d𝒥(Φ)[δ] = 2 ⟨⟨A_Φ Φ, δ⟩⟩`.

use std::fmt;
use std::str::FromStr;

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::manifold::{gram, project_tangent, BlockVector, OrthoFrame};
use crate::operators::{Preconditioner, SymmetricOperator};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Simplified,
    ToyLda,
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simplified" => Ok(Self::Simplified),
            "toy_lda" => Ok(Self::ToyLda),
            other => Err(Error::InvalidArgument(format!("unknown problem kind '{other}'"))),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Simplified => "simplified",
            Self::ToyLda => "toy_lda",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Problem<T> {
    kind: ProblemKind,
    base: SymmetricOperator<T>,
    kappa: T,
    states: usize,
}

/// Symmetric `N×N` multiplier matrix `Λ = ⟨(A_Φ Φ)ᵀ Φ⟩`.
pub type LagrangeMatrix<T> = Mat<T>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualNorms<T> {
    /// `‖R‖` in the weighted block norm.
    pub l2: T,
    /// `√⟨⟨B⁻¹R, R⟩⟩`.
    pub dual: T,
}

impl<T: Scalar> Problem<T> {
    pub fn simplified(base: SymmetricOperator<T>, states: usize) -> Result<Self> {
        Self::validate_states(&base, states)?;
        Ok(Self { kind: ProblemKind::Simplified, base, kappa: T::zero(), states })
    }

    pub fn toy_lda(base: SymmetricOperator<T>, kappa: T, states: usize) -> Result<Self> {
        Self::validate_states(&base, states)?;
        if !(kappa >= T::zero()) || !kappa.is_finite() {
            return Err(Error::InvalidArgument(format!("coupling kappa must be non-negative, got {kappa}")));
        }
        Ok(Self { kind: ProblemKind::ToyLda, base, kappa, states })
    }

    fn validate_states(base: &SymmetricOperator<T>, states: usize) -> Result<()> {
        if states == 0 || states > base.dim() {
            return Err(Error::InvalidArgument(format!(
                "subspace dimension must lie in 1..={}, got {states}",
                base.dim()
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn base(&self) -> &SymmetricOperator<T> {
        &self.base
    }

    pub fn kappa(&self) -> T {
        self.kappa
    }

    pub fn states(&self) -> usize {
        self.states
    }

    fn check_block(&self, phi: &BlockVector<T>) -> Result<()> {
        if phi.n() != self.base.dim() || phi.cols() != self.states {
            return Err(Error::DimensionMismatch(format!(
                "problem expects {}x{} blocks, got {}x{}",
                self.base.dim(),
                self.states,
                phi.n(),
                phi.cols()
            )));
        }
        Ok(())
    }

    /// `n(x) = Σᵢ φᵢ(x)²`.
    pub fn density(phi: &BlockVector<T>) -> Vec<T> {
        let mut n = vec![T::zero(); phi.n()];
        for j in 0..phi.cols() {
            for (nx, &v) in n.iter_mut().zip(phi.column(j)) {
                *nx += v * v;
            }
        }
        n
    }

    /// `𝒥(Φ)`; defined for any block so that it can be differentiated numerically.
    pub fn energy(&self, phi: &BlockVector<T>) -> Result<T> {
        self.check_block(phi)?;
        let a_phi = phi.apply_operator(&self.base);
        let mut e = a_phi.block_dot(phi);
        if self.kind == ProblemKind::ToyLda {
            let n = Self::density(phi);
            let sq: T = n.iter().map(|&v| v * v).sum();
            e += T::lit(0.5) * self.kappa * phi.h() * sq;
        }
        Ok(e)
    }

    /// `A_Φ`: the base operator, plus `κ diag(n_Φ)` for the toy problem.
    pub fn gradient_operator(&self, phi: &BlockVector<T>) -> Result<SymmetricOperator<T>> {
        self.check_block(phi)?;
        Ok(match self.kind {
            ProblemKind::Simplified => self.base.clone(),
            ProblemKind::ToyLda => {
                let potential: Vec<T> = Self::density(phi).into_iter().map(|v| self.kappa * v).collect();
                self.base.with_added_diagonal(&potential)
            }
        })
    }

    /// `𝒥′(Φ) = A_Φ Φ`.
    pub fn gradient(&self, phi: &BlockVector<T>) -> Result<BlockVector<T>> {
        Ok(phi.apply_operator(&self.gradient_operator(phi)?))
    }

    /// `2 ⟨⟨A_Φ Φ, δ⟩⟩`.
    pub fn directional_derivative(&self, phi: &BlockVector<T>, delta: &BlockVector<T>) -> Result<T> {
        Ok(T::lit(2.0) * self.gradient(phi)?.block_dot(delta))
    }

    /// `Λ = ⟨(A_Φ Φ)ᵀ Φ⟩`, symmetrized.
    pub fn lagrange_matrix(&self, phi: &OrthoFrame<T>) -> Result<LagrangeMatrix<T>> {
        Ok(gram(&self.gradient(phi)?, phi)?.symmetrized())
    }

    /// Subspace residual `R = A_Φ Φ - Φ Λ`.
    pub fn residual(&self, phi: &OrthoFrame<T>) -> Result<BlockVector<T>> {
        let grad = self.gradient(phi)?;
        let lambda = gram(&grad, phi)?.symmetrized();
        Ok(grad.sub(&phi.mul_mat(&lambda)))
    }

    pub fn residual_norms(&self, phi: &OrthoFrame<T>, precond: &Preconditioner<T>) -> Result<ResidualNorms<T>> {
        let r = self.residual(phi)?;
        Ok(residual_norms_of(&r, precond))
    }

    /// `𝒥(to) - 𝒥(from)` for two orthonormal frames, free of cancellation.
    ///
    /// With `A = A_from`, `Λ = ⟨from, A from⟩`, `R = A from - from Λ` and the
    /// split `to = from M + E` (`E ⊥ from`):
    ///
    /// `tr⟨to, A to⟩ - tr Λ = 2 tr(Mᵀ⟨R, E⟩) + tr⟨E, AE⟩ - tr(M⁻¹ΛM ⟨E, E⟩)`,
    ///
    /// and the density term contributes `(κ/2) ∫ (n_to - n_from)²` on top.
    /// Every term is small when the frames are close, so the difference keeps
    /// its relative accuracy down to distances near machine precision. Falls
    /// back to the plain difference when `M` is singular.
    pub fn energy_difference(&self, from: &OrthoFrame<T>, to: &OrthoFrame<T>) -> Result<T> {
        self.check_block(to)?;
        let op = self.gradient_operator(from)?;
        let a_from = from.apply_operator(&op);
        let lambda = gram(from, &a_from)?.symmetrized();
        let r = a_from.sub(&from.mul_mat(&lambda));
        let m = gram(from, to)?;
        let e = to.sub(&from.mul_mat(&m));
        let cross = gram(&r, &e)?;
        let cross: T = m.as_slice().iter().zip(cross.as_slice()).map(|(&a, &b)| a * b).sum();
        let curvature = e.apply_operator(&op).block_dot(&e);
        let lambda_m = lambda.matmul(&m);
        let mut conj = Mat::zeros(m.rows(), m.cols());
        for j in 0..m.cols() {
            match m.solve(lambda_m.column(j)) {
                Ok(col) => conj.column_mut(j).copy_from_slice(&col),
                Err(_) => return Ok(self.energy(to)? - self.energy(from)?),
            }
        }
        let mut diff = T::lit(2.0) * cross + curvature - conj.matmul(&gram(&e, &e)?).trace();
        if self.kind == ProblemKind::ToyLda {
            let sq: T = Self::density(to).iter().zip(Self::density(from)).map(|(&a, b)| (a - b) * (a - b)).sum();
            diff += T::lit(0.5) * self.kappa * to.h() * sq;
        }
        Ok(diff)
    }

    /// Tangent part `(I - D_Φ) A_Φ Φ` of the gradient; equals the residual.
    pub fn projected_gradient(&self, phi: &OrthoFrame<T>) -> Result<BlockVector<T>> {
        project_tangent(phi, &self.gradient(phi)?)
    }
}

pub(crate) fn residual_norms_of<T: Scalar>(r: &BlockVector<T>, precond: &Preconditioner<T>) -> ResidualNorms<T> {
    let l2 = r.norm();
    let dual = r.apply_preconditioner(precond).block_dot(r).max(T::zero()).sqrt();
    ResidualNorms { l2, dual }
}
