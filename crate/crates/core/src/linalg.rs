//! Small dense linear algebra: row-major matrices, cyclic Jacobi
//! eigendecomposition for symmetric matrices, Cholesky solves and
//! rank-revealing Gaussian elimination.
//!
//! Dimensions in this crate are tiny (asset counts, maturity grids, tree
//! branchings), so the routines favour accuracy and simplicity.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
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

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.concat() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// `v vᵀ`, symmetric bit-for-bit.
    pub fn outer(v: &[T]) -> Self {
        let n = v.len();
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x = v[i] * v[j];
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        (0..self.rows).map(|i| crate::scalar::dot(self.row(i), v)).collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matrix product dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `A Aᵀ` computed on the upper triangle and mirrored, so the result is
    /// exactly symmetric.
    pub fn gram_rows(&self) -> Self {
        let n = self.rows;
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x = crate::scalar::dot(self.row(i), self.row(j));
                out[(i, j)] = x;
                out[(j, i)] = x;
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn add_diagonal(&self, s: T) -> Self {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] += s;
        }
        m
    }

    /// Submatrix on the given row and column index sets.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues sorted nonincreasing.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: Mat<T>,
}

/// Cyclic Jacobi rotations. Converges quadratically and delivers eigenvalues
/// with small relative error, which matters when separating the numerical
/// null space from tiny positive modes.
pub fn symmetric_eigen<T: Real>(a: &Mat<T>) -> SymmetricEigen<T> {
    assert!(a.is_square(), "eigendecomposition needs a square matrix");
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    let eps = T::epsilon();

    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..n {
            diag += m[(i, i)] * m[(i, i)];
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off <= eps * eps * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let t = if theta == T::zero() { T::one() } else { t };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = T::zero();
                m[(q, p)] = T::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    SymmetricEigen { values, vectors }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky<T: Real>(a: &Mat<T>) -> Result<Mat<T>> {
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::SolveFailed(format!("pivot {j} not positive ({:e})", d.as_f64())));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the lower factor.
pub fn cholesky_solve<T: Real>(l: &Mat<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Outcome of Gaussian elimination on `A x = b`.
#[derive(Debug, Clone)]
pub struct EliminationResult<T> {
    pub rank: usize,
    /// A particular solution (free variables set to zero) when the system is
    /// consistent.
    pub solution: Option<Vec<T>>,
    /// Largest residual of an equation reduced to `0 = r`.
    pub inconsistency: T,
}

/// Gaussian elimination with complete row pivoting; pivots below
/// `tol · max|A|` are treated as zero.
pub fn eliminate<T: Real>(a: &Mat<T>, b: &[T], tol: T) -> EliminationResult<T> {
    let (m, n) = (a.rows(), a.cols());
    assert_eq!(b.len(), m);
    let mut aug = Mat::from_fn(m, n + 1, |i, j| if j < n { a[(i, j)] } else { b[i] });
    let scale = a.max_abs().max(T::min_positive_value());
    let thresh = tol * scale;
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if row == m {
            break;
        }
        let (best, best_val) = (row..m)
            .map(|r| (r, aug[(r, col)].abs()))
            .fold((row, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best_val <= thresh {
            continue;
        }
        if best != row {
            for j in 0..=n {
                let tmp = aug[(row, j)];
                aug[(row, j)] = aug[(best, j)];
                aug[(best, j)] = tmp;
            }
        }
        let p = aug[(row, col)];
        for r in 0..m {
            if r == row {
                continue;
            }
            let f = aug[(r, col)] / p;
            if f == T::zero() {
                continue;
            }
            for j in col..=n {
                let v = aug[(row, j)];
                aug[(r, j)] -= f * v;
            }
        }
        pivots.push((row, col));
        row += 1;
    }
    let rank = pivots.len();
    let bscale = b.iter().fold(T::one(), |acc, &x| acc.max(x.abs()));
    let inconsistency = (rank..m).fold(T::zero(), |acc, r| acc.max(aug[(r, n)].abs()));
    let consistent = inconsistency <= tol * bscale.max(scale);
    let solution = consistent.then(|| {
        let mut x = vec![T::zero(); n];
        for &(r, c) in &pivots {
            x[c] = aug[(r, n)] / aug[(r, c)];
        }
        x
    });
    EliminationResult { rank, solution, inconsistency }
}

/// Rank of a matrix under relative pivot tolerance `tol`.
pub fn rank<T: Real>(a: &Mat<T>, tol: T) -> usize {
    eliminate(a, &vec![T::zero(); a.rows()], tol).rank
}
