use std::fmt;

use serde::{Deserialize, Serialize};

use super::{LinalgError, Result};
use crate::exec::Execution;

/// Dense row-major `f64` matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row: Vec<String> = self.row(i).iter().take(8).map(|x| format!("{x:.6}")).collect();
            writeln!(f, "  {}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows.checked_mul(cols) != Some(data.len()) {
            return Err(LinalgError::InvalidShape { rows, cols, len: data.len() });
        }
        if let Some(idx) = data.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite { row: idx / cols, col: idx % cols });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a list of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::InvalidShape { rows: r, cols: c, len: rows.iter().map(Vec::len).sum() });
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Square diagonal matrix.
    pub fn diag(values: &[f64]) -> Self {
        Self::diag_rect(values.len(), values.len(), values)
    }

    /// `rows x cols` matrix with `values` on the leading diagonal.
    pub fn diag_rect(rows: usize, cols: usize, values: &[f64]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (i, &v) in values.iter().enumerate().take(rows.min(cols)) {
            m.data[i * cols + i] = v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Column vector from a slice.
    pub fn column(values: &[f64]) -> Self {
        Self::from_vec_unchecked(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// First `k` columns.
    pub fn leading_cols(&self, k: usize) -> Matrix {
        assert!(k >= 1 && k <= self.cols, "column prefix {k} out of range 1..={}", self.cols);
        let mut out = Vec::with_capacity(self.rows * k);
        for i in 0..self.rows {
            out.extend_from_slice(&self.row(i)[..k]);
        }
        Matrix::from_vec_unchecked(self.rows, k, out)
    }

    /// First `k` rows.
    pub fn leading_rows(&self, k: usize) -> Matrix {
        assert!(k >= 1 && k <= self.rows, "row prefix {k} out of range 1..={}", self.rows);
        Matrix::from_vec_unchecked(k, self.cols, self.data[..k * self.cols].to_vec())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_vec_unchecked(self.cols, self.rows, out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        let work = self.rows * self.cols * other.cols;
        self.matmul_with(other, Execution::for_work(work))
    }

    /// `self * other` under an explicit execution policy.
    pub fn matmul_with(&self, other: &Matrix, exec: Execution) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        exec.for_each_row_mut(&mut out, m, |i, out_row| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        });
        Ok(Matrix::from_vec_unchecked(n, m, out))
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "t_matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        self.transpose().matmul(other)
    }

    /// `self * otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch {
                op: "matmul_t",
                left: self.shape(),
                right: other.shape(),
            });
        }
        self.matmul(&other.transpose())
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch { op, left: self.shape(), right: other.shape() });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix::from_vec_unchecked(self.rows, self.cols, data))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch { op: "axpy", left: self.shape(), right: other.shape() });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|x| c * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn square(&self) -> Matrix {
        self.map(|x| x * x)
    }

    /// Entrywise `max(x, floor)`.
    pub fn max_scalar(&self, floor: f64) -> Matrix {
        self.map(|x| x.max(floor))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn fro_norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn fro_norm(&self) -> f64 {
        self.fro_norm_sq().sqrt()
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> Result<f64> {
        Ok(super::svd(self)?.s[0])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    /// `‖selfᵀself − I‖_F`, the orthonormality defect of the columns.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.transpose().matmul(self).expect("square gram");
        gram.sub(&Matrix::identity(self.cols)).expect("same shape").fro_norm()
    }

    /// Column-stacking vectorization.
    pub fn vec_col_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Inverse of [`Matrix::vec_col_major`].
    pub fn from_col_major(rows: usize, cols: usize, v: &[f64]) -> Result<Matrix> {
        if rows.checked_mul(cols) != Some(v.len()) {
            return Err(LinalgError::InvalidShape { rows, cols, len: v.len() });
        }
        Ok(Matrix::from_fn(rows, cols, |i, j| v[j * rows + i]))
    }
}

/// Kronecker product: `out[(i·r+k), (j·s+l)] = a[i,j]·b[k,l]`.
pub fn kron(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let rows = a.rows.checked_mul(b.rows);
    let cols = a.cols.checked_mul(b.cols);
    let (rows, cols) = match (rows, cols) {
        (Some(r), Some(c)) if r.checked_mul(c).is_some_and(|n| n <= isize::MAX as usize / 8) => (r, c),
        _ => {
            return Err(LinalgError::Overflow {
                rows: a.rows.saturating_mul(b.rows),
                cols: a.cols.saturating_mul(b.cols),
            })
        }
    };
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let aij = a.get(i, j);
            if aij == 0.0 {
                continue;
            }
            for k in 0..b.rows {
                for l in 0..b.cols {
                    out.set(i * b.rows + k, j * b.cols + l, aij * b.get(k, l));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, sym_eigvals};

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(matches!(Matrix::from_vec(2, 2, vec![1.0; 3]), Err(LinalgError::InvalidShape { .. })));
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite { row: 0, col: 1 })
        ));
        assert!(Matrix::from_vec(0, 2, vec![]).is_err());
    }

    #[test]
    fn matmul_small() {
        let a = Matrix::from_rows(&[vec![1., 2.], vec![3., 4.]]).unwrap();
        let b = Matrix::from_rows(&[vec![5., 6.], vec![7., 8.]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19., 22., 43., 50.]);
        assert!(a.matmul(&Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn matmul_parallel_matches_sequential_bitwise() {
        let a = gaussian_matrix(64, 48, 1);
        let b = gaussian_matrix(48, 40, 2);
        let s = a.matmul_with(&b, Execution::Sequential).unwrap();
        let p = a.matmul_with(&b, Execution::Parallel).unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn transpose_products_agree() {
        let a = gaussian_matrix(5, 3, 4);
        let b = gaussian_matrix(5, 2, 5);
        let direct = a.transpose().matmul(&b).unwrap();
        assert_eq!(a.t_matmul(&b).unwrap(), direct);
        let c = gaussian_matrix(4, 3, 6);
        assert_eq!(a.matmul_t(&c).unwrap(), a.matmul(&c.transpose()).unwrap());
    }

    #[test]
    fn kron_identity_and_scalar() {
        assert_eq!(kron(&Matrix::identity(2), &Matrix::identity(3)).unwrap(), Matrix::identity(6));
        let b = gaussian_matrix(2, 3, 9);
        let two = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        assert_eq!(kron(&two, &b).unwrap(), b.scale(2.0));
    }

    #[test]
    fn kron_index_formula() {
        let a = gaussian_matrix(2, 3, 1);
        let b = gaussian_matrix(4, 2, 2);
        let k = kron(&a, &b).unwrap();
        assert_eq!(k.shape(), (8, 6));
        for i in 0..2 {
            for j in 0..3 {
                for p in 0..4 {
                    for q in 0..2 {
                        assert_eq!(k.get(i * 4 + p, j * 2 + q), a.get(i, j) * b.get(p, q));
                    }
                }
            }
        }
    }

    #[test]
    fn kron_eigenvalues_are_products() {
        let k = kron(&Matrix::diag(&[1., 2.]), &Matrix::diag(&[3., 4.])).unwrap();
        let ev = sym_eigvals(&k).unwrap();
        for (got, want) in ev.iter().zip([3., 4., 6., 8.]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn vec_round_trip() {
        let a = gaussian_matrix(3, 4, 11);
        let v = a.vec_col_major();
        assert_eq!(v[1], a.get(1, 0));
        assert_eq!(Matrix::from_col_major(3, 4, &v).unwrap(), a);
    }

    #[test]
    fn norms() {
        let a = Matrix::from_rows(&[vec![3., 0.], vec![0., 4.]]).unwrap();
        assert_eq!(a.fro_norm(), 5.0);
        assert!((a.spectral_norm().unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(a.max_scalar(3.5).data(), &[3.5, 3.5, 3.5, 4.0]);
    }
}
