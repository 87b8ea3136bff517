//! Dense row-major matrices and the small amount of linear algebra the
//! simulator needs. Agent counts are desk-scale (at most a few hundred), so
//! everything here is dense and single-threaded with a fixed summation order.

use crate::error::{Error, Result};
use crate::scalar::{norm, Scalar};

/// An `m x d` matrix whose row `i` is agent `i`'s local vector.
///
/// The same type stores the `m x m` mixing matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> AgentMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = T::one();
        }
        out
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

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: format!("rows of length {cols}"),
                got: format!("row of length {}", bad.len()),
            });
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Every row equal to `row` (the `1 x̄` of consensus notation).
    pub fn broadcast(rows: usize, row: &[T]) -> Self {
        let mut data = Vec::with_capacity(rows * row.len());
        for _ in 0..rows {
            data.extend_from_slice(row);
        }
        Self {
            rows,
            cols: row.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `(1/m) 1ᵀ M`, the average of the rows.
    pub fn column_mean(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            for (acc, &v) in mean.iter_mut().zip(self.row(i)) {
                *acc = *acc + v;
            }
        }
        let scale = T::one() / T::of_usize(self.rows.max(1));
        mean.iter_mut().for_each(|v| *v = *v * scale);
        mean
    }

    pub fn frobenius_norm(&self) -> T {
        norm(&self.data)
    }

    /// `‖M − 1 m̄‖_F`.
    pub fn consensus_error(&self) -> T {
        let mean = self.column_mean();
        let mut acc = T::zero();
        for i in 0..self.rows {
            for (&v, &mu) in self.row(i).iter().zip(&mean) {
                acc = acc + (v - mu) * (v - mu);
            }
        }
        acc.sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    /// First non-finite entry as `(row, col)`.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|k| (k / self.cols.max(1), k % self.cols.max(1)))
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.first_non_finite() {
            None => Ok(()),
            Some((i, j)) => Err(Error::NonFinite {
                context: format!("{context} (row {i}, column {j})"),
            }),
        }
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: T, other: &Self) -> Self {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + alpha * b)
                .collect(),
        }
    }

    pub fn scale(&self, alpha: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| alpha * a).collect(),
        }
    }

    /// `alpha * self + beta * other`, evaluated entrywise.
    pub fn combine(&self, alpha: T, beta: T, other: &Self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| alpha * a + beta * b)
                .collect(),
        }
    }

    /// Matrix product `self · rhs`. Each output entry sums over the inner
    /// index in ascending order, so results do not depend on scheduling.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rows", self.cols),
                got: format!("{} rows", rhs.rows),
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }
}

impl<T> std::ops::Index<(usize, usize)> for AgentMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for AgentMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenvalues of a symmetric matrix, sorted in descending order.
///
/// Cyclic Jacobi rotations; converges quadratically and is accurate to a few
/// ulps of the matrix norm, which is what the spectral-gap computations need.
pub fn symmetric_eigenvalues<T: Scalar>(a: &AgentMatrix<T>) -> Result<Vec<T>> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::DimensionMismatch {
            expected: "square matrix".into(),
            got: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    a.ensure_finite("eigendecomposition input")?;
    let mut m = a.clone();
    // Symmetrize against representation noise.
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (m[(i, j)] + m[(j, i)]) * T::of(0.5);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    let scale = m.frobenius_norm().max(T::min_positive_value());
    let tol = T::epsilon() * scale;
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= T::min_positive_value() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consensus_error_vanishes_on_broadcast() {
        let m = AgentMatrix::broadcast(5, &[1.0, -2.0, 3.5]);
        assert_eq!(m.consensus_error(), 0.0);
        assert_eq!(m.column_mean(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn matmul_matches_hand_product() {
        let a = AgentMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = AgentMatrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.to_rows(), vec![vec![17.0], vec![39.0]]);
        assert!(b.matmul(&a).is_err());
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(AgentMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn jacobi_on_two_by_two() {
        let a = AgentMatrix::from_rows(&[vec![0.75, 0.25], vec![0.25, 0.75]]).unwrap();
        let e = symmetric_eigenvalues(&a).unwrap();
        assert!((e[0] - 1.0f64).abs() < 1e-15);
        assert!((e[1] - 0.5f64).abs() < 1e-15);
    }

    #[test]
    fn jacobi_handles_diagonal_and_f32() {
        let a = AgentMatrix::from_rows(&[vec![2.0f32, 0.0], vec![0.0, -1.0]]).unwrap();
        assert_eq!(symmetric_eigenvalues(&a).unwrap(), vec![2.0, -1.0]);
    }

    #[test]
    fn non_finite_detected_with_position() {
        let mut a = AgentMatrix::<f64>::zeros(2, 3);
        a[(1, 2)] = f64::NAN;
        assert_eq!(a.first_non_finite(), Some((1, 2)));
        assert!(a.ensure_finite("x").is_err());
    }
}
