//! Dense row-major matrices with checked shapes, plus the least-squares
//! solver used by the pricing head.

use std::ops::{Index, IndexMut, Range};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Matrix::from_vec",
                format!("{} elements", rows * cols),
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::dim(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} in row {i}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        let mut m = Matrix::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(Error::dim(
                    "Matrix::from_columns",
                    format!("{rows} rows"),
                    format!("{} in column {j}", col.len()),
                ));
            }
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.rows {
            return Err(Error::dim("Matrix::set_column", self.rows, values.len()));
        }
        for (i, v) in values.iter().enumerate() {
            self[(i, j)] = *v;
        }
        Ok(())
    }

    /// Copies a contiguous block of columns.
    pub fn columns(&self, range: Range<usize>) -> Matrix {
        let width = range.len();
        let mut out = Matrix::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[range.start..range.end]);
        }
        out
    }

    /// Copies the listed columns in order.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, idx.len());
        for i in 0..self.rows {
            for (c, &j) in idx.iter().enumerate() {
                out[(i, c)] = self[(i, j)];
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!("inner dimension {}", self.cols),
                other.rows,
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            (self.rows, self.cols, other.cols),
            (&self.data, self.cols, 1),
            (&other.data, other.cols, 1),
            &mut out.data,
        );
        Ok(out)
    }

    /// `self^T * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dim(
                "t_matmul",
                format!("{} rows", self.rows),
                other.rows,
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(
            (self.cols, self.rows, other.cols),
            (&self.data, 1, self.cols),
            (&other.data, other.cols, 1),
            &mut out.data,
        );
        Ok(out)
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::dim(
                "matmul_t",
                format!("{} columns", self.cols),
                other.cols,
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(
            (self.rows, self.cols, other.rows),
            (&self.data, self.cols, 1),
            (&other.data, 1, other.cols),
            &mut out.data,
        );
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dim("matvec", self.cols, x.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `self^T * x`.
    pub fn t_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::dim("t_matvec", self.rows, x.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }

    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                "add_scaled",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
/// `c = a * b` for an `m x k` operand `a` and a `k x n` operand `b`, each
/// given as (data, row stride, column stride); `c` is row-major `m x n`.
fn gemm(
    (m, k, n): (usize, usize, usize),
    (a, rsa, csa): (&[f64], usize, usize),
    (b, rsb, csb): (&[f64], usize, usize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thin QR factorization of a tall design matrix (observations in rows).
///
/// Uses modified Gram-Schmidt with one re-orthogonalization pass. A column
/// whose residual norm after projection falls below `1e-10` of its original
/// norm is reported as collinear.
#[derive(Debug, Clone)]
pub struct Qr {
    q: Matrix,
    r: Matrix,
}

impl Qr {
    pub fn new(x: &Matrix, labels: &[String]) -> Result<Qr> {
        let (n, k) = x.shape();
        if n < k {
            return Err(Error::InvalidArgument(format!(
                "least squares needs at least as many observations ({n}) as regressors ({k})"
            )));
        }
        let mut q_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut r = Matrix::zeros(k, k);
        for j in 0..k {
            let original = x.column(j);
            let norm0 = dot(&original, &original).sqrt();
            let mut v = original;
            for _pass in 0..2 {
                for (i, qi) in q_cols.iter().enumerate() {
                    let c = dot(qi, &v);
                    r[(i, j)] += c;
                    for (vv, qq) in v.iter_mut().zip(qi) {
                        *vv -= c * qq;
                    }
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm0 == 0.0 || norm <= 1e-10 * norm0 {
                let column = labels
                    .get(j)
                    .cloned()
                    .unwrap_or_else(|| format!("#{j}"));
                return Err(Error::RankDeficient { column });
            }
            r[(j, j)] = norm;
            v.iter_mut().for_each(|vv| *vv /= norm);
            q_cols.push(v);
        }
        let q = if k == 0 {
            Matrix::zeros(n, 0)
        } else {
            Matrix::from_columns(&q_cols)?
        };
        Ok(Qr { q, r })
    }

    /// Solves `min ||x b - y||` for every column of `y` (rows = observations).
    pub fn solve(&self, y: &Matrix) -> Result<Matrix> {
        let qty = self.q.t_matmul(y)?;
        let k = self.r.rows();
        let mut b = Matrix::zeros(k, y.cols());
        for c in 0..y.cols() {
            for i in (0..k).rev() {
                let mut s = qty[(i, c)];
                for j in i + 1..k {
                    s -= self.r[(i, j)] * b[(j, c)];
                }
                b[(i, c)] = s / self.r[(i, i)];
            }
        }
        Ok(b)
    }
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration.
pub fn max_eigenvalue_psd(m: &Matrix) -> f64 {
    let n = m.rows();
    if n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let w = m.matvec(&v).expect("square matrix");
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
        let converged = (norm - lambda).abs() <= 1e-12 * norm;
        lambda = norm;
        v = next;
        if converged {
            break;
        }
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_checks_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(a.matmul(&b).is_err());
        assert_eq!(a.matmul(&b.transpose()).unwrap().shape(), (2, 2));
    }

    #[test]
    fn transposed_products_agree() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(a.t_matmul(&b).unwrap(), a.transpose().matmul(&b).unwrap());
        assert_eq!(a.matmul_t(&b).unwrap(), a.matmul(&b.transpose()).unwrap());
        assert_eq!(
            a.t_matvec(&[1.0, 2.0, 3.0]).unwrap(),
            a.transpose().matvec(&[1.0, 2.0, 3.0]).unwrap()
        );
    }

    #[test]
    fn qr_recovers_exact_coefficients() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.3],
            vec![2.0, -0.1],
            vec![-1.0, 0.7],
            vec![0.5, 0.2],
        ])
        .unwrap();
        let b_true = Matrix::from_rows(&[vec![2.0], vec![-3.0]]).unwrap();
        let y = x.matmul(&b_true).unwrap();
        let b = Qr::new(&x, &[]).unwrap().solve(&y).unwrap();
        assert!((b[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((b[(1, 0)] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn qr_names_collinear_column() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let err = Qr::new(&x, &["f1".into(), "g1".into()]).unwrap_err();
        assert!(err.to_string().contains("g1"), "{err}");
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let mut m = Matrix::identity(3);
        m[(1, 1)] = 5.0;
        assert!((max_eigenvalue_psd(&m) - 5.0).abs() < 1e-9);
    }
}
