//! Preconditioned gradient descent on the Grassmann manifold.
//!
//! The crate computes invariant subspaces of symmetric operators, i.e.
//! minimizers of `Σ ⟨φᵢ, A φᵢ⟩` under orthonormality constraints, and of a
//! density-dependent nonlinear analogue. Three descent schemes are provided
//! (projected gradient, tangent-projected gradient, geodesic exponential),
//! together with a self-consistent-field outer loop, dense oracles, and
//! empirical checks of the convergence theory.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` / `*32` aliases below name the common instantiations.

// Negated comparisons (`!(x <= tol)`) are deliberate: they treat NaN as failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dense;
pub mod diagnostics;
pub mod error;
pub mod manifold;
pub mod operators;
pub mod problems;
pub mod random;
pub mod scalar;
pub mod solvers;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mat64 = dense::Mat<f64>;
pub type Mat32 = dense::Mat<f32>;
pub type Block64 = manifold::BlockVector<f64>;
pub type Block32 = manifold::BlockVector<f32>;
pub type Frame64 = manifold::OrthoFrame<f64>;
pub type Frame32 = manifold::OrthoFrame<f32>;
pub type Operator64 = operators::SymmetricOperator<f64>;
pub type Operator32 = operators::SymmetricOperator<f32>;
pub type Preconditioner64 = operators::Preconditioner<f64>;
pub type Preconditioner32 = operators::Preconditioner<f32>;
pub type Problem64 = problems::Problem<f64>;
pub type Problem32 = problems::Problem<f32>;
pub type SolverConfig64 = solvers::SolverConfig<f64>;
pub type SolverConfig32 = solvers::SolverConfig<f32>;
pub type Oracle64 = diagnostics::OracleReference<f64>;
pub type Oracle32 = diagnostics::OracleReference<f32>;
