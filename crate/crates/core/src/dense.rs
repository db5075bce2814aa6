//! Small dense matrices: Gram and Lagrange matrices, mixing matrices, and the
//! dense realizations used by the oracles.
//!
//! Storage is column-major so that a column is a contiguous slice, matching
//! the layout of [`BlockVector`](crate::manifold::BlockVector).

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Eigenvalues in ascending order with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Mat<T>,
}

const MAX_JACOBI_SWEEPS: usize = 100;

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from row slices. Panics if rows are ragged.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self::from_fn(r, c, |i, j| rows[i][j])
    }

    pub fn from_diagonal(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> T {
        self.diagonal().into_iter().sum()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for k in 0..self.cols {
                let b = other[(k, j)];
                if b == T::zero() {
                    continue;
                }
                let a = self.column(k);
                for (o, &ai) in out.column_mut(j).iter_mut().zip(a) {
                    *o += ai * b;
                }
            }
        }
        out
    }

    pub fn mat_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len(), "mat_vec shape mismatch");
        let mut y = vec![T::zero(); self.rows];
        for (k, &xk) in x.iter().enumerate() {
            for (yi, &a) in y.iter_mut().zip(self.column(k)) {
                *yi += a * xk;
            }
        }
        y
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&a| a * s).collect() }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|&a| a * a).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &a| m.max(a.abs()))
    }

    /// `(M + Mᵀ)/2`.
    pub fn symmetrized(&self) -> Self {
        assert!(self.is_square());
        let half = T::lit(0.5);
        Self::from_fn(self.rows, self.cols, |i, j| half * (self[(i, j)] + self[(j, i)]))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Symmetric eigendecomposition by cyclic Jacobi rotations.
    ///
    /// Only the symmetric part of `self` is used. Sweeps stop once the
    /// off-diagonal Frobenius norm falls below `1e-12 * ‖A‖_F` (raised to a
    /// few ulps for `f32`).
    pub fn sym_eigen(&self) -> Result<SymEigen<T>> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "eigendecomposition of a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        let mut a = self.symmetrized();
        let mut v = Self::identity(n);
        let scale = a.frobenius();
        let target = T::tol(1e-12) * scale;
        let mut converged = n <= 1 || scale == T::zero();
        let mut sweeps = 0;
        while !converged {
            if off_diagonal_norm(&a) <= target {
                converged = true;
                break;
            }
            if sweeps == MAX_JACOBI_SWEEPS {
                break;
            }
            sweeps += 1;
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq.abs() <= T::min_positive_value() {
                        continue;
                    }
                    let app = a[(p, p)];
                    let aqq = a[(q, q)];
                    // Skip rotations that cannot change the diagonal in this precision.
                    let tiny = T::epsilon() * T::lit(0.01);
                    if apq.abs() < tiny * app.abs() && apq.abs() < tiny * aqq.abs() {
                        a[(p, q)] = T::zero();
                        a[(q, p)] = T::zero();
                        continue;
                    }
                    let theta = (aqq - app) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    rotate_symmetric(&mut a, p, q, c, s);
                    a[(p, p)] = app - t * apq;
                    a[(q, q)] = aqq + t * apq;
                    a[(p, q)] = T::zero();
                    a[(q, p)] = T::zero();
                    rotate_columns(&mut v, p, q, c, s);
                }
            }
        }
        if !converged {
            return Err(Error::NoConvergence { what: "jacobi eigensolver", iterations: sweeps });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).expect("finite eigenvalues"));
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let vectors = Self::from_fn(n, n, |i, k| v[(i, order[k])]);
        Ok(SymEigen { values, vectors })
    }

    /// Lower-triangular Cholesky factor `L` with `L Lᵀ = self`.
    ///
    /// A pivot below `rel_tol` times the corresponding original diagonal
    /// entry is reported as [`Error::NotPositiveDefinite`].
    pub fn cholesky(&self, rel_tol: T) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch("cholesky of a non-square matrix".into()));
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            let reference = self[(j, j)].abs().max(T::min_positive_value());
            if !(d > rel_tol * reference) {
                return Err(Error::NotPositiveDefinite { index: j, pivot: (d / reference).to_f64_lossy() });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(l)
    }

    /// Solves `L y = b` for lower-triangular `self`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.rows;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self[(i, k)] * y[k];
            }
            y[i] = s / self[(i, i)];
        }
        y
    }

    /// Solves `Lᵀ x = y` for lower-triangular `self`.
    pub fn solve_lower_transpose(&self, y: &[T]) -> Vec<T> {
        let n = self.rows;
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self[(k, i)] * x[k];
            }
            x[i] = s / self[(i, i)];
        }
        x
    }

    /// Inverse of a lower-triangular matrix.
    pub fn lower_inverse(&self) -> Self {
        let n = self.rows;
        let mut inv = Self::zeros(n, n);
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            inv.column_mut(j).copy_from_slice(&self.solve_lower(&e));
        }
        inv
    }

    /// Solves `self · x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        if !self.is_square() || b.len() != self.rows {
            return Err(Error::DimensionMismatch("linear solve shape".into()));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut x = b.to_vec();
        for k in 0..n {
            let (piv, pmax) =
                (k..n)
                    .map(|i| (i, a[(i, k)].abs()))
                    .fold((k, T::zero()), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            if pmax == T::zero() {
                return Err(Error::RankDeficient { column: k, pivot: 0.0 });
            }
            if piv != k {
                for j in 0..n {
                    let tmp = a[(k, j)];
                    a[(k, j)] = a[(piv, j)];
                    a[(piv, j)] = tmp;
                }
                x.swap(k, piv);
            }
            for i in k + 1..n {
                let f = a[(i, k)] / a[(k, k)];
                if f == T::zero() {
                    continue;
                }
                for j in k..n {
                    let akj = a[(k, j)];
                    a[(i, j)] -= f * akj;
                }
                let xk = x[k];
                x[i] -= f * xk;
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= a[(i, j)] * x[j];
            }
            x[i] = s / a[(i, i)];
        }
        Ok(x)
    }

    /// Orthogonal polar factor `U` of a square matrix `M = U P`.
    ///
    /// `U` maximizes `tr(Uᵀ M)` over orthogonal matrices. Directions belonging
    /// to (numerically) zero singular values are completed to an orthonormal
    /// basis.
    pub fn polar_factor(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch("polar factor of a non-square matrix".into()));
        }
        let n = self.rows;
        let eig = self.transpose().matmul(self).sym_eigen()?;
        let smax = eig.values.last().copied().unwrap_or(T::zero()).max(T::zero()).sqrt();
        let cutoff = T::tol(1e-12) * smax.max(T::one());
        let mut w = Self::zeros(n, n);
        let mut filled = vec![false; n];
        for (k, slot) in filled.iter_mut().enumerate() {
            let sigma = eig.values[k].max(T::zero()).sqrt();
            if sigma > cutoff {
                let mv = self.mat_vec(eig.vectors.column(k));
                for (dst, src) in w.column_mut(k).iter_mut().zip(mv) {
                    *dst = src / sigma;
                }
                *slot = true;
            }
        }
        // Complete the null directions with Gram-Schmidt on canonical vectors.
        let mut candidate = 0;
        for k in 0..n {
            if filled[k] {
                continue;
            }
            loop {
                let mut e = vec![T::zero(); n];
                e[candidate % n] = T::one();
                candidate += 1;
                for _ in 0..2 {
                    for j in (0..n).filter(|&j| filled[j]) {
                        let c: T = w.column(j).iter().zip(&e).map(|(&a, &b)| a * b).sum();
                        for (ei, &wj) in e.iter_mut().zip(w.column(j)) {
                            *ei -= c * wj;
                        }
                    }
                }
                let norm = e.iter().map(|&a| a * a).sum::<T>().sqrt();
                if norm > T::lit(0.5) {
                    for (dst, src) in w.column_mut(k).iter_mut().zip(e) {
                        *dst = src / norm;
                    }
                    filled[k] = true;
                    break;
                }
                if candidate > 2 * n {
                    return Err(Error::NoConvergence { what: "polar factor completion", iterations: candidate });
                }
            }
        }
        Ok(w.matmul(&eig.vectors.transpose()))
    }
}

fn off_diagonal_norm<T: Scalar>(a: &Mat<T>) -> T {
    let n = a.rows;
    let mut s = T::zero();
    for j in 0..n {
        for i in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Applies the two-sided rotation to the off-diagonal entries of rows and
/// columns `p`, `q`. Diagonal entries are fixed up by the caller.
fn rotate_symmetric<T: Scalar>(a: &mut Mat<T>, p: usize, q: usize, c: T, s: T) {
    let n = a.rows;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        let new_p = c * akp - s * akq;
        let new_q = s * akp + c * akq;
        a[(k, p)] = new_p;
        a[(p, k)] = new_p;
        a[(k, q)] = new_q;
        a[(q, k)] = new_q;
    }
}

fn rotate_columns<T: Scalar>(v: &mut Mat<T>, p: usize, q: usize, c: T, s: T) {
    let n = v.rows;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}
