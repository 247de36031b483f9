//! Small dense linear-algebra kernels.
//!
//! Matrices are stored column-major because nearly every consumer in this
//! crate addresses columns: prototype `k` of a classifier, feature `i` of a
//! session.

use crate::scalar::Scalar;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm_sq<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    norm_sq(a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn scale<T: Scalar>(alpha: T, x: &mut [T]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

/// Cosine of the angle between two vectors; `None` if either is (numerically) zero.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    let na = norm(a);
    let nb = norm(b);
    let tiny = T::min_positive_value().sqrt();
    if na <= tiny || nb <= tiny {
        return None;
    }
    let c = dot(a, b) / (na * nb);
    Some(c.max(-T::one()).min(T::one()))
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax<T: Scalar>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Index of the smallest entry, lowest index on ties.
pub fn argmin<T: Scalar>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v >= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds from column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "storage length mismatch");
        Self { rows, cols, data }
    }

    /// Builds from row-major storage (the on-disk layout of prototype files).
    pub fn from_row_major(rows: usize, cols: usize, data: &[T]) -> Self {
        assert_eq!(data.len(), rows * cols, "storage length mismatch");
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = data[i * cols + j];
            }
        }
        m
    }

    pub fn from_columns(rows: usize, columns: &[Vec<T>]) -> Self {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            assert_eq!(c.len(), rows, "column length mismatch");
            data.extend_from_slice(c);
        }
        Self {
            rows,
            cols: columns.len(),
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[T] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.cols).map(move |j| self.col(j))
    }

    pub fn as_col_major(&self) -> &[T] {
        &self.data
    }

    pub fn as_col_major_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn to_row_major(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(self[(i, j)]);
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "inner dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for (k, &r) in rhs.col(j).iter().enumerate() {
                if r != T::zero() {
                    axpy(r, self.col(k), dst);
                }
            }
        }
        out
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let mut y = vec![T::zero(); self.rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != T::zero() {
                axpy(xj, self.col(j), &mut y);
            }
        }
        y
    }

    /// `y = Aᵀ x`
    pub fn matvec_t(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows, "matvec_t dimension mismatch");
        self.columns().map(|c| dot(c, x)).collect()
    }

    /// `AᵀA`
    pub fn gram(&self) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let v = dot(self.col(a), self.col(b));
                g[(a, b)] = v;
                g[(b, a)] = v;
            }
        }
        g
    }

    /// Copies the listed columns into a new matrix.
    pub fn select_columns(&self, ids: &[usize]) -> Self {
        let mut data = Vec::with_capacity(ids.len() * self.rows);
        for &j in ids {
            data.extend_from_slice(self.col(j));
        }
        Self {
            rows: self.rows,
            cols: ids.len(),
            data,
        }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[j * self.rows + i]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[j * self.rows + i]
    }
}

/// Error from [`orthonormalize`]: column `index` fell (numerically) into the
/// span of the preceding columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankDeficient {
    pub index: usize,
}

/// Orthonormalizes the columns of `a` with modified Gram-Schmidt and one
/// reorthogonalization pass.
///
/// Equivalent to the Q factor of a thin QR decomposition with the diagonal of
/// R forced positive, so the result is unique for a full-rank input.
pub fn orthonormalize<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>, RankDeficient> {
    let mut q = a.clone();
    let rel_tol = T::epsilon().sqrt() * T::lit(1e-2);
    for j in 0..q.cols() {
        let original = norm(q.col(j));
        for _pass in 0..2 {
            for k in 0..j {
                let (before, rest) = q.data.split_at_mut(j * q.rows);
                let qk = &before[k * q.rows..(k + 1) * q.rows];
                let qj = &mut rest[..q.rows];
                let r = dot(qk, qj);
                axpy(-r, qk, qj);
            }
        }
        let n = norm(q.col(j));
        if !(n > rel_tol * original) || original == T::zero() {
            return Err(RankDeficient { index: j });
        }
        scale(T::one() / n, q.col_mut(j));
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormalize_columns_are_orthonormal() {
        let a = Matrix::from_row_major(3, 2, &[1.0f64, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let q = orthonormalize(&a).unwrap();
        let g = q.gram();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - want).abs() < 1e-14);
            }
        }
        // First column keeps its direction (positive R diagonal).
        assert!(q[(0, 0)] > 0.0 && q[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn orthonormalize_detects_rank_deficiency() {
        let a = Matrix::from_row_major(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(orthonormalize(&a), Err(RankDeficient { index: 1 }));
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmin(&[2.0, 0.5, 0.5]), Some(1));
        assert_eq!(argmax::<f64>(&[]), None);
    }

    #[test]
    fn row_major_round_trip() {
        let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let m = Matrix::from_row_major(2, 3, &data);
        assert_eq!(m[(1, 0)], 4.0);
        assert_eq!(m.to_row_major(), data.to_vec());
        assert_eq!(m.transpose().transpose(), m);
    }
}
