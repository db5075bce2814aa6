//! Stiefel and Grassmann geometry for blocks of grid functions.
//!
//! A [`BlockVector`] holds `N` columns on a shared grid; an [`OrthoFrame`] is
//! a block vector whose weighted Gram matrix is the identity, i.e. a point of
//! the Stiefel manifold representing a subspace (a Grassmann point). The
//! subspace projector is `D_Φ u = Φ ⟨Φᵀ u⟩`.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::operators::{Preconditioner, SymmetricOperator};
use crate::random::{self, SeededRng};
use crate::scalar::{axpy, dot, Scalar};

/// Tolerance on `‖⟨ΦᵀΦ⟩ - I‖_max` for a block to count as a frame.
pub const STIEFEL_TOL: f64 = 1e-10;
/// Relative Gram pivot below which columns are treated as dependent.
pub const RANK_TOL: f64 = 1e-12;
const TANGENT_TOL: f64 = 1e-8;
const CLOSEST_MIN_NORM: f64 = 0.5;
const XHAT_BUDGET: usize = 200;

/// `N` grid functions stored column-major, paired with the weight `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector<T> {
    n: usize,
    cols: usize,
    h: T,
    data: Vec<T>,
}

impl<T: Scalar> BlockVector<T> {
    pub fn zeros(n: usize, cols: usize, h: T) -> Self {
        Self { n, cols, h, data: vec![T::zero(); n * cols] }
    }

    pub fn from_columns(h: T, columns: &[Vec<T>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.is_empty() || n == 0 {
            return Err(Error::Empty("block vector columns"));
        }
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch("columns of unequal length".into()));
        }
        Ok(Self { n, cols: columns.len(), h, data: columns.concat() })
    }

    pub fn from_fn(n: usize, cols: usize, h: T, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut b = Self::zeros(n, cols, h);
        for j in 0..cols {
            for i in 0..n {
                b.data[j * n + i] = f(i, j);
            }
        }
        b
    }

    /// Seeded standard-normal entries.
    pub fn random(n: usize, cols: usize, h: T, rng: &mut SeededRng) -> Self {
        Self { n, cols, h, data: random::gaussian_vec(rng, n * cols) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Weighted block inner product `⟨⟨Φ, Ψ⟩⟩ = h Σᵢⱼ Φᵢⱼ Ψᵢⱼ`.
    pub fn block_dot(&self, other: &Self) -> T {
        self.h * dot(&self.data, &other.data)
    }

    /// Weighted Frobenius norm.
    pub fn norm(&self) -> T {
        self.block_dot(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        axpy(T::one(), &other.data, &mut out.data);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        axpy(-T::one(), &other.data, &mut out.data);
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= s);
        out
    }

    /// `self + s · other`.
    pub fn add_scaled(&self, s: T, other: &Self) -> Self {
        let mut out = self.clone();
        axpy(s, &other.data, &mut out.data);
        out
    }

    /// Right multiplication `Φ M` by an `N×K` matrix.
    pub fn mul_mat(&self, m: &Mat<T>) -> Self {
        assert_eq!(m.rows(), self.cols, "mixing matrix shape mismatch");
        let mut out = Self::zeros(self.n, m.cols(), self.h);
        for k in 0..m.cols() {
            for j in 0..self.cols {
                let c = m[(j, k)];
                if c != T::zero() {
                    let src = &self.data[j * self.n..(j + 1) * self.n];
                    axpy(c, src, out.column_mut(k));
                }
            }
        }
        out
    }

    /// Applies an operator to every column.
    pub fn apply_operator(&self, op: &SymmetricOperator<T>) -> Self {
        let mut out = Self::zeros(self.n, self.cols, self.h);
        for j in 0..self.cols {
            let n = self.n;
            op.apply_into(&self.data[j * n..(j + 1) * n], &mut out.data[j * n..(j + 1) * n]);
        }
        out
    }

    /// Applies `B⁻¹` to every column.
    pub fn apply_preconditioner(&self, b: &Preconditioner<T>) -> Self {
        let mut out = Self::zeros(self.n, self.cols, self.h);
        for j in 0..self.cols {
            out.column_mut(j).copy_from_slice(&b.apply_inverse(self.column(j)));
        }
        out
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.n != other.n || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "block {}x{} vs {}x{}",
                self.n, self.cols, other.n, other.cols
            )));
        }
        if self.h != other.h {
            return Err(Error::DimensionMismatch(format!("grid weights {} vs {}", self.h, other.h)));
        }
        Ok(())
    }
}

/// A block vector with orthonormal columns (a Stiefel point).
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoFrame<T>(BlockVector<T>);

impl<T: Scalar> OrthoFrame<T> {
    /// Validates the Stiefel constraint to [`STIEFEL_TOL`].
    pub fn new(block: BlockVector<T>) -> Result<Self> {
        let dev = stiefel_deviation(&block);
        if dev > T::tol(STIEFEL_TOL) {
            return Err(Error::InvalidArgument(format!("block is not orthonormal (deviation {dev:e})")));
        }
        Ok(Self(block))
    }

    pub fn into_inner(self) -> BlockVector<T> {
        self.0
    }

    pub fn as_block(&self) -> &BlockVector<T> {
        &self.0
    }

    /// `Φ U` for an orthogonal `N×N` matrix `U`; same Grassmann point.
    pub fn mixed(&self, u: &Mat<T>) -> Self {
        Self(self.0.mul_mat(u))
    }

    /// Seeded random frame (orthonormalized Gaussian block).
    pub fn random(n: usize, cols: usize, h: T, seed: u64) -> Result<Self> {
        let mut rng = random::rng(seed);
        orthonormalize(&BlockVector::random(n, cols, h, &mut rng), OrthoMethod::GramSchmidt, None)
    }

    /// `D_Φ w = Φ ⟨Φᵀ w⟩` for a single grid function.
    pub fn project(&self, w: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n()];
        for j in 0..self.cols() {
            let c = self.h() * dot(self.column(j), w);
            axpy(c, self.column(j), &mut out);
        }
        out
    }

    /// `(I - D_Φ) w` for a single grid function.
    pub fn project_complement(&self, w: &[T]) -> Vec<T> {
        let p = self.project(w);
        w.iter().zip(p).map(|(&a, b)| a - b).collect()
    }
}

impl<T> Deref for OrthoFrame<T> {
    type Target = BlockVector<T>;

    fn deref(&self) -> &BlockVector<T> {
        &self.0
    }
}

/// `‖⟨ΦᵀΦ⟩ - I‖_max`.
pub fn stiefel_deviation<T: Scalar>(block: &BlockVector<T>) -> T {
    gram(block, block).map(|g| g.sub(&Mat::identity(block.cols())).max_abs()).unwrap_or(T::infinity())
}

/// The `N×N` matrix with entries `⟨φᵢ, ψⱼ⟩`.
pub fn gram<T: Scalar>(phi: &BlockVector<T>, psi: &BlockVector<T>) -> Result<Mat<T>> {
    if phi.n != psi.n || phi.h != psi.h {
        return Err(Error::DimensionMismatch(format!(
            "gram of blocks on grids ({}, {}) and ({}, {})",
            phi.n, phi.h, psi.n, psi.h
        )));
    }
    Ok(Mat::from_fn(phi.cols, psi.cols, |i, j| phi.h * dot(phi.column(i), psi.column(j))))
}

/// Tangent projection `(I - D_Φ) W = W - Φ ⟨Φᵀ W⟩`.
pub fn project_tangent<T: Scalar>(phi: &OrthoFrame<T>, w: &BlockVector<T>) -> Result<BlockVector<T>> {
    if w.n != phi.n || w.h != phi.h {
        return Err(Error::DimensionMismatch("tangent projection of a block on another grid".into()));
    }
    let g = gram(phi, w)?;
    Ok(w.sub(&phi.mul_mat(&g)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrthoMethod {
    /// Modified Gram–Schmidt with one re-orthogonalization pass.
    #[default]
    GramSchmidt,
    /// `Φ̂ L⁻ᵀ` with `L Lᵀ` the Cholesky factorization of the Gram matrix.
    Cholesky,
    /// Cholesky followed by diagonalization of `⟨(AΦ)ᵀ Φ⟩`.
    RayleighRitz,
}

impl FromStr for OrthoMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gram_schmidt" => Ok(Self::GramSchmidt),
            "cholesky" => Ok(Self::Cholesky),
            "rayleigh_ritz" => Ok(Self::RayleighRitz),
            other => Err(Error::InvalidArgument(format!("unknown orthonormalization method '{other}'"))),
        }
    }
}

impl fmt::Display for OrthoMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GramSchmidt => "gram_schmidt",
            Self::Cholesky => "cholesky",
            Self::RayleighRitz => "rayleigh_ritz",
        })
    }
}

/// Orthonormal frame with the same span as `block`.
pub fn orthonormalize<T: Scalar>(
    block: &BlockVector<T>,
    method: OrthoMethod,
    op: Option<&SymmetricOperator<T>>,
) -> Result<OrthoFrame<T>> {
    match method {
        OrthoMethod::GramSchmidt => gram_schmidt(block),
        OrthoMethod::Cholesky => cholesky_orthonormalize(block),
        OrthoMethod::RayleighRitz => {
            let op = op.ok_or(Error::MissingOperator)?;
            let q = cholesky_orthonormalize(block)?;
            let aq = q.apply_operator(op);
            let h = gram(&aq, &q)?.symmetrized();
            let eig = h.sym_eigen()?;
            Ok(OrthoFrame(q.mul_mat(&eig.vectors)))
        }
    }
}

fn gram_schmidt<T: Scalar>(block: &BlockVector<T>) -> Result<OrthoFrame<T>> {
    let mut q = block.clone();
    let n = q.n;
    let h = q.h;
    let rank_tol = T::tol(RANK_TOL);
    for j in 0..q.cols {
        let original = h * dot(q.column(j), q.column(j));
        for _pass in 0..2 {
            for k in 0..j {
                let (done, rest) = q.data.split_at_mut(j * n);
                let qk = &done[k * n..(k + 1) * n];
                let qj = &mut rest[..n];
                let c = h * dot(qk, qj);
                axpy(-c, qk, qj);
            }
        }
        let sq = h * dot(q.column(j), q.column(j));
        if !(original > T::zero()) || !(sq > rank_tol * original) {
            let pivot = if original > T::zero() { (sq / original).to_f64_lossy() } else { 0.0 };
            return Err(Error::RankDeficient { column: j, pivot });
        }
        let inv = T::one() / sq.sqrt();
        q.column_mut(j).iter_mut().for_each(|x| *x *= inv);
    }
    Ok(OrthoFrame(q))
}

fn cholesky_orthonormalize<T: Scalar>(block: &BlockVector<T>) -> Result<OrthoFrame<T>> {
    let g = gram(block, block)?.symmetrized();
    let l = g.cholesky(T::tol(RANK_TOL)).map_err(|e| match e {
        Error::NotPositiveDefinite { index, pivot } => Error::RankDeficient { column: index, pivot },
        other => other,
    })?;
    let linv_t = l.lower_inverse().transpose();
    Ok(OrthoFrame(block.mul_mat(&linv_t)))
}

/// A norm on block vectors, used for subspace distances and errors.
pub trait BlockNorm<T> {
    fn norm(&self, w: &BlockVector<T>) -> Result<T>;
}

/// The weighted `L₂` block norm.
#[derive(Debug, Clone, Copy, Default)]
pub struct L2Norm;

impl<T: Scalar> BlockNorm<T> for L2Norm {
    fn norm(&self, w: &BlockVector<T>) -> Result<T> {
        Ok(w.norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceDistance<T> {
    /// `min_U ‖Φ₁ - Φ₂ U‖` with `U` from orthogonal Procrustes alignment.
    pub aligned: T,
    /// `‖(I - D_{Φ₁}) Φ₂‖`.
    pub projector: T,
}

/// Orthogonal `U` minimizing `‖target - source · U‖` (weighted norm).
pub fn procrustes_alignment<T: Scalar>(target: &BlockVector<T>, source: &BlockVector<T>) -> Result<Mat<T>> {
    target.check_compatible(source)?;
    gram(source, target)?.polar_factor()
}

/// Grassmann distance between two frames, measured in the `L₂` norm.
pub fn subspace_distance<T: Scalar>(phi1: &OrthoFrame<T>, phi2: &OrthoFrame<T>) -> Result<SubspaceDistance<T>> {
    subspace_distance_in(phi1, phi2, &L2Norm)
}

/// Grassmann distance with the aligned difference measured in `norm`.
///
/// The alignment is always the `L₂` Procrustes rotation.
pub fn subspace_distance_in<T: Scalar>(
    phi1: &OrthoFrame<T>,
    phi2: &OrthoFrame<T>,
    norm: &dyn BlockNorm<T>,
) -> Result<SubspaceDistance<T>> {
    let u = procrustes_alignment(phi1, phi2)?;
    let aligned = norm.norm(&phi1.sub(&phi2.mul_mat(&u)))?;
    let projector = norm.norm(&project_tangent(phi1, phi2)?)?;
    Ok(SubspaceDistance { aligned, projector })
}

/// Representative of `span(reference)` closest to `phi`: each column of `phi`
/// is projected onto the reference subspace, normalized, then the block is
/// Gram–Schmidt orthonormalized.
pub fn closest_representative<T: Scalar>(reference: &OrthoFrame<T>, phi: &OrthoFrame<T>) -> Result<OrthoFrame<T>> {
    reference.check_compatible(phi)?;
    let mut projected = BlockVector::zeros(phi.n(), phi.cols(), phi.h());
    for j in 0..phi.cols() {
        let p = reference.project(phi.column(j));
        let norm = (phi.h() * dot(&p, &p)).sqrt();
        if !(norm >= T::lit(CLOSEST_MIN_NORM)) {
            return Err(Error::TooFar { column: j, norm: norm.to_f64_lossy() });
        }
        for (dst, src) in projected.column_mut(j).iter_mut().zip(p) {
            *dst = src / norm;
        }
    }
    gram_schmidt(&projected)
}

/// Geodesic `c(t) = exp(t X̂) Φ` through `Φ` with initial velocity `K`.
///
/// With `⟨KᵀK⟩ = V Σ² Vᵀ` the point is `Φ V cos(Σt) Vᵀ + K V (sin(Σt)/Σ) Vᵀ`,
/// followed by a Gram–Schmidt cleanup. `K` must be tangent: `⟨Φᵀ K⟩ = 0`.
pub fn geodesic_step<T: Scalar>(phi: &OrthoFrame<T>, k: &BlockVector<T>, t: T) -> Result<OrthoFrame<T>> {
    phi.check_compatible(k)?;
    let overlap = gram(phi, k)?.max_abs();
    let scale = T::one().max(k.norm());
    if overlap > T::tol(TANGENT_TOL) * scale {
        return Err(Error::NotTangent { deviation: overlap.to_f64_lossy() });
    }
    if t == T::zero() || k.max_abs() == T::zero() {
        return Ok(phi.clone());
    }
    let eig = gram(k, k)?.symmetrized().sym_eigen()?;
    let n_cols = phi.cols();
    let mut cos_part = Mat::zeros(n_cols, n_cols);
    let mut sin_part = Mat::zeros(n_cols, n_cols);
    for (i, &s2) in eig.values.iter().enumerate() {
        let sigma = s2.max(T::zero()).sqrt();
        let angle = sigma * t;
        cos_part[(i, i)] = angle.cos();
        // sin(σt)/σ, with the σ → 0 limit t; exact for zero singular values.
        sin_part[(i, i)] = if sigma == T::zero() { t } else { angle.sin() / sigma };
    }
    let v = &eig.vectors;
    let vt = v.transpose();
    let c = v.matmul(&cos_part).matmul(&vt);
    let s = v.matmul(&sin_part).matmul(&vt);
    let moved = phi.mul_mat(&c).add(&k.mul_mat(&s));
    gram_schmidt(&moved)
}

/// Dense `X̂ = (I - D)X D - D Xᵀ (I - D)` with `D = h Φ Φᵀ`, for `n ≤ 200`.
pub fn build_xhat_dense<T: Scalar>(phi: &OrthoFrame<T>, x: &Mat<T>) -> Result<Mat<T>> {
    let n = phi.n();
    if n > XHAT_BUDGET {
        return Err(Error::BudgetExceeded { n, limit: XHAT_BUDGET });
    }
    if x.rows() != n || x.cols() != n {
        return Err(Error::DimensionMismatch(format!("X is {}x{}, frame has n = {n}", x.rows(), x.cols())));
    }
    let frame = Mat::from_fn(n, phi.cols(), |i, j| phi.column(j)[i]);
    let d = frame.matmul(&frame.transpose()).scale(phi.h());
    let complement = Mat::identity(n).sub(&d);
    let first = complement.matmul(x).matmul(&d);
    let second = d.matmul(&x.transpose()).matmul(&complement);
    Ok(first.sub(&second))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coords(h: f64, cols: &[&[f64]]) -> BlockVector<f64> {
        BlockVector::from_columns(h, &cols.iter().map(|c| c.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn gram_by_hand() {
        let phi = coords(1.0, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let psi = coords(1.0, &[&[1.0, 1.0], &[2.0, 0.0]]);
        let g = gram(&phi, &psi).unwrap();
        assert_eq!(g, Mat::from_rows(&[&[1.0, 2.0], &[1.0, 0.0]]));
        let zero = BlockVector::zeros(2, 2, 1.0);
        assert_eq!(gram(&phi, &zero).unwrap().max_abs(), 0.0);
        let other_grid = BlockVector::zeros(3, 2, 1.0);
        assert!(gram(&phi, &other_grid).is_err());
    }

    #[test]
    fn projector_annihilates_span_and_fixes_tangents() {
        let phi = OrthoFrame::<f64>::random(20, 3, 0.1, 1).unwrap();
        let inside = phi.mul_mat(&Mat::from_fn(3, 2, |i, j| (i + 2 * j) as f64 - 1.5));
        let inside_w =
            BlockVector::from_fn(20, 3, 0.1, |i, j| if j < 2 { inside.column(j)[i] } else { phi.column(0)[i] });
        assert!(project_tangent(&phi, &inside_w).unwrap().norm() < 1e-12);
        let mut rng = random::rng(2);
        let w = BlockVector::random(20, 3, 0.1, &mut rng);
        let t = project_tangent(&phi, &w).unwrap();
        let tt = project_tangent(&phi, &t).unwrap();
        assert!(tt.sub(&t).norm() < 1e-12);
    }

    #[test]
    fn orthonormalize_preserves_orthonormal_input() {
        let phi = OrthoFrame::<f64>::random(15, 4, 0.5, 3).unwrap();
        let again = orthonormalize(&phi, OrthoMethod::GramSchmidt, None).unwrap();
        assert!(again.sub(&phi).max_abs() < 1e-12);
    }

    #[test]
    fn orthonormalize_rejects_repeated_column() {
        let mut rng = random::rng(4);
        let w = BlockVector::<f64>::random(10, 3, 1.0, &mut rng);
        let dup = BlockVector::from_fn(10, 3, 1.0, |i, j| w.column(if j == 2 { 0 } else { j })[i]);
        for method in [OrthoMethod::GramSchmidt, OrthoMethod::Cholesky] {
            assert!(matches!(orthonormalize(&dup, method, None), Err(Error::RankDeficient { .. })), "{method}");
        }
        assert_eq!(orthonormalize(&w, OrthoMethod::RayleighRitz, None).unwrap_err(), Error::MissingOperator);
    }

    #[test]
    fn rayleigh_ritz_orders_and_diagonalizes() {
        let a = crate::operators::build_diagonal_operator::<f64>(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        let mut rng = random::rng(5);
        let w = BlockVector::random(5, 3, 1.0, &mut rng);
        let q = orthonormalize(&w, OrthoMethod::RayleighRitz, Some(&a)).unwrap();
        let lam = gram(&q.apply_operator(&a), &q).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(lam[(i, j)].abs() < 1e-12);
                }
            }
        }
        assert!(lam[(0, 0)] <= lam[(1, 1)] && lam[(1, 1)] <= lam[(2, 2)]);
        assert!(stiefel_deviation(&q) < 1e-12);
    }

    #[test]
    fn orthogonal_coordinate_frames_are_sqrt2_apart() {
        let e1 = OrthoFrame::new(coords(1.0, &[&[1.0, 0.0]])).unwrap();
        let e2 = OrthoFrame::new(coords(1.0, &[&[0.0, 1.0]])).unwrap();
        let d = subspace_distance(&e1, &e2).unwrap();
        assert!((d.aligned - 2f64.sqrt()).abs() < 1e-14);
        assert!((d.projector - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mixed_frame_has_zero_distance() {
        let phi = OrthoFrame::<f64>::random(12, 3, 0.25, 6).unwrap();
        let u = OrthoFrame::<f64>::random(3, 3, 1.0, 7).unwrap();
        let u = Mat::from_fn(3, 3, |i, j| u.column(j)[i]);
        let d = subspace_distance(&phi, &phi.mixed(&u)).unwrap();
        assert!(d.aligned < 1e-12 && d.projector < 1e-12);
    }

    #[test]
    fn closest_representative_single_column() {
        let reference = OrthoFrame::new(coords(1.0, &[&[1.0, 0.0, 0.0]])).unwrap();
        let theta: f64 = 0.3;
        let phi = OrthoFrame::new(coords(1.0, &[&[theta.cos(), theta.sin(), 0.0]])).unwrap();
        let rep = closest_representative(&reference, &phi).unwrap();
        assert!((rep.column(0)[0] - 1.0).abs() < 1e-15);
        let far = OrthoFrame::new(coords(1.0, &[&[0.1, (0.99f64).sqrt(), 0.0]])).unwrap();
        assert!(matches!(closest_representative(&reference, &far), Err(Error::TooFar { column: 0, .. })));
    }

    #[test]
    fn closest_representative_of_same_span_is_identity() {
        let reference = OrthoFrame::<f64>::random(16, 3, 0.5, 8).unwrap();
        let u = OrthoFrame::<f64>::random(3, 3, 1.0, 9).unwrap();
        let u = Mat::from_fn(3, 3, |i, j| u.column(j)[i]);
        let phi = reference.mixed(&u);
        let rep = closest_representative(&reference, &phi).unwrap();
        assert!(phi.sub(&rep).max_abs() < 1e-10);
    }

    #[test]
    fn geodesic_degenerate_cases() {
        let phi = OrthoFrame::<f64>::random(10, 2, 1.0, 10).unwrap();
        let mut rng = random::rng(11);
        let k = project_tangent(&phi, &BlockVector::random(10, 2, 1.0, &mut rng)).unwrap();
        assert_eq!(geodesic_step(&phi, &k, 0.0).unwrap(), phi);
        let zero = BlockVector::zeros(10, 2, 1.0);
        assert_eq!(geodesic_step(&phi, &zero, 3.0).unwrap(), phi);
        let not_tangent = phi.as_block().clone();
        assert!(matches!(geodesic_step(&phi, &not_tangent, 1.0), Err(Error::NotTangent { .. })));
    }

    #[test]
    fn geodesic_with_rank_deficient_velocity() {
        // One zero singular value: that column must not move.
        let phi = OrthoFrame::new(coords(1.0, &[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]])).unwrap();
        let k = coords(1.0, &[&[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 0.0]]);
        let c = geodesic_step(&phi, &k, 0.5).unwrap();
        assert!((c.column(0)[0] - 0.5f64.cos()).abs() < 1e-15);
        assert!((c.column(0)[2] - 0.5f64.sin()).abs() < 1e-15);
        assert_eq!(c.column(1), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn xhat_is_antisymmetric_and_matches_action() {
        let n = 12;
        let phi = OrthoFrame::<f64>::random(n, 2, 0.5, 12).unwrap();
        let mut rng = random::rng(13);
        let x = Mat::from_fn(n, n, |_, _| random::gaussian_vec::<f64>(&mut rng, 1)[0]);
        let xhat = build_xhat_dense(&phi, &x).unwrap();
        assert!(xhat.add(&xhat.transpose()).max_abs() < 1e-12);
        // X̂Φ = (I - D) X Φ
        let xhat_phi = BlockVector::from_fn(n, 2, 0.5, |i, j| xhat.mat_vec(phi.column(j))[i]);
        let x_phi = BlockVector::from_fn(n, 2, 0.5, |i, j| x.mat_vec(phi.column(j))[i]);
        let expected = project_tangent(&phi, &x_phi).unwrap();
        assert!(xhat_phi.sub(&expected).max_abs() < 1e-12);
        assert_eq!(build_xhat_dense(&phi, &Mat::zeros(n, n)).unwrap().max_abs(), 0.0);
        let big = OrthoFrame::<f64>::random(201, 1, 1.0, 1).unwrap();
        assert!(matches!(build_xhat_dense(&big, &Mat::zeros(201, 201)), Err(Error::BudgetExceeded { .. })));
    }
}
